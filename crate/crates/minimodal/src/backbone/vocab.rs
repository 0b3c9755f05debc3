//! Closed word-level vocabulary over the scene grammar.
//!
//! Ids are stable: specials first, then the word list in fixed order. The
//! vocabulary file stores one token per line with id = line number.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{Color, Shape};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const BOI: &str = "<boi>";
pub const EOI: &str = "<eoi>";
pub const SEP_EDIT: &str = "<sep_edit>";
pub const NULL_PROMPT: &str = "<null>";

#[derive(Clone, Debug)]
pub struct Vocab {
    words: Vec<String>,
}

impl Vocab {
    /// The full grammar vocabulary: specials, colors, shapes (singular and
    /// plural), numbers, relations, question and edit words.
    pub fn core() -> Self {
        let mut words: Vec<String> = vec![
            PAD.into(),
            BOS.into(),
            EOS.into(),
            BOI.into(),
            EOI.into(),
            SEP_EDIT.into(),
            NULL_PROMPT.into(),
        ];
        let mut push = |w: &str| {
            if !words.iter().any(|x| x == w) {
                words.push(w.to_string());
            }
        };
        for c in Color::ALL {
            push(c.word());
        }
        for s in Shape::ALL {
            push(s.word());
            push(s.plural());
        }
        for w in ["zero", "one", "two", "three", "four"] {
            push(w);
        }
        for w in [
            "a", "photo", "of", "and", "the", "shapes", "left", "right", "above", "below",
            "what", "color", "is", "how", "many", "shape", "add", "at", "top", "bottom",
            "center", "remove", "change", "to", "replace", "with", "move", "make", "image",
            "grayscale", "keep", "unchanged",
        ] {
            push(w);
        }
        Vocab { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.words
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| Error::Oov(word.to_string()))
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Splits on whitespace, lowercases, strips punctuation; every remaining
    /// word must be in the closed vocabulary.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        for raw in text.split_whitespace() {
            let w: String = raw
                .to_lowercase()
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '_' || *c == '<' || *c == '>')
                .collect();
            if w.is_empty() {
                continue;
            }
            ids.push(self.id(&w)?);
        }
        Ok(ids)
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.words.join("\n"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = fs::read_to_string(path)?;
        Ok(Vocab {
            words: text.lines().map(|l| l.to_string()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::scene::{
        caption, make_edit_case, make_qa, sample_scene, Category,
    };

    #[test]
    fn vocabulary_is_closed_and_small() {
        let v = Vocab::core();
        assert!(v.len() < 128, "vocab size {}", v.len());
        // bijective id ↔ word
        for i in 0..v.len() {
            assert_eq!(v.id(v.word(i)).unwrap(), i);
        }
    }

    #[test]
    fn round_trip_on_grammar_strings() {
        let v = Vocab::core();
        let ids = v.tokenize("a red circle").unwrap();
        assert_eq!(ids.len(), 3);
        assert_eq!(v.detokenize(&ids), "a red circle");
        assert!(v.tokenize("").unwrap().is_empty());
    }

    #[test]
    fn out_of_vocabulary_is_an_error() {
        let v = Vocab::core();
        assert!(matches!(v.tokenize("a zebra"), Err(Error::Oov(w)) if w == "zebra"));
    }

    #[test]
    fn every_generated_string_tokenizes() {
        let v = Vocab::core();
        let mut rng = Rng::new(17);
        for i in 0..400 {
            let spec = sample_scene(&mut rng, Category::ALL[i % 6], 16);
            v.tokenize(&caption(&spec, &mut rng)).unwrap();
            if let Ok(qa) = make_qa(&spec, &mut rng) {
                v.tokenize(&qa.question).unwrap();
                v.tokenize(&qa.answer).unwrap();
            }
            if let Ok(edit) = make_edit_case(&spec, &mut rng) {
                v.tokenize(&edit.instruction).unwrap();
            }
        }
    }

    #[test]
    fn vocab_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::core();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let back = Vocab::load(&p).unwrap();
        assert_eq!(back.len(), v.len());
        assert_eq!(back.id("circle").unwrap(), v.id("circle").unwrap());
    }
}
