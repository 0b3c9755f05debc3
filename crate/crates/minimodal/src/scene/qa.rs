//! Question-answer pairs over scenes. Answers come from a closed vocabulary
//! and are derivable from the scene by cell arithmetic, never ambiguous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::caption::{number_word, Relation};
use super::{SceneSpec, Shape};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// Shapes occurring exactly once in the scene.
fn unique_shapes(spec: &SceneSpec) -> Vec<Shape> {
    Shape::ALL
        .iter()
        .copied()
        .filter(|&s| spec.objects.iter().filter(|o| o.shape == s).count() == 1)
        .collect()
}

/// Samples a QA pair; templates that would be ambiguous for this scene are
/// resampled.
pub fn make_qa(spec: &SceneSpec, rng: &mut Rng) -> Result<QaPair> {
    spec.validate()?;
    for _ in 0..16 {
        match rng.below(3) {
            0 => {
                // "what color is the <shape>?" needs a unique shape
                let uniq = unique_shapes(spec);
                if uniq.is_empty() {
                    continue;
                }
                let s = *rng.pick(&uniq);
                let o = spec.objects.iter().find(|o| o.shape == s).unwrap();
                return Ok(QaPair {
                    question: format!("what color is the {} ?", s.word()),
                    answer: o.color.word().to_string(),
                });
            }
            1 => {
                // "how many <shape>s?" is always answerable
                let s = *rng.pick(&Shape::ALL);
                let n = spec.objects.iter().filter(|o| o.shape == s).count();
                return Ok(QaPair {
                    question: format!("how many {} ?", s.plural()),
                    answer: number_word(n).to_string(),
                });
            }
            _ => {
                // "what shape is <relation> the <shape>?" needs a unique
                // reference and a unique answer
                let uniq = unique_shapes(spec);
                if uniq.is_empty() {
                    continue;
                }
                let s = *rng.pick(&uniq);
                let anchor = spec.objects.iter().find(|o| o.shape == s).unwrap();
                let rel = *rng.pick(&Relation::ALL);
                let hits: Vec<&super::ObjectSpec> = spec
                    .objects
                    .iter()
                    .filter(|o| o.shape != s && rel.holds(o.cell, anchor.cell))
                    .collect();
                if hits.len() != 1 {
                    continue;
                }
                return Ok(QaPair {
                    question: format!("what shape is {} the {} ?", rel.phrase(), s.word()),
                    answer: hits[0].shape.word().to_string(),
                });
            }
        }
    }
    // counting always succeeds, so reaching here means the rng never drew it
    let s = *rng.pick(&Shape::ALL);
    let n = spec.objects.iter().filter(|o| o.shape == s).count();
    Ok(QaPair {
        question: format!("how many {} ?", s.plural()),
        answer: number_word(n).to_string(),
    })
}

/// The oracle answer for a generated question, used to verify model output.
pub fn oracle_answer(spec: &SceneSpec, question: &str) -> Result<String> {
    let words: Vec<&str> = question
        .split_whitespace()
        .filter(|w| *w != "?")
        .collect();
    let fail = || Error::Input(format!("question does not match grammar: `{question}`"));
    match words.as_slice() {
        ["what", "color", "is", "the", shape] => {
            let s = Shape::from_word(shape).ok_or_else(fail)?;
            let hits: Vec<_> = spec.objects.iter().filter(|o| o.shape == s).collect();
            if hits.len() != 1 {
                return Err(Error::Input("ambiguous color question".into()));
            }
            Ok(hits[0].color.word().to_string())
        }
        ["how", "many", shape] => {
            let s = Shape::from_word(shape).ok_or_else(fail)?;
            Ok(number_word(spec.objects.iter().filter(|o| o.shape == s).count()).to_string())
        }
        _ => {
            // "what shape is <relation...> the <shape>"
            if words.len() < 6 || words[0] != "what" || words[1] != "shape" || words[2] != "is" {
                return Err(fail());
            }
            let (rel, shape_word) = match words[3] {
                "left" | "right" if words[4] == "of" && words[5] == "the" => (
                    if words[3] == "left" {
                        Relation::LeftOf
                    } else {
                        Relation::RightOf
                    },
                    *words.get(6).ok_or_else(fail)?,
                ),
                "above" | "below" if words[4] == "the" => (
                    if words[3] == "above" {
                        Relation::Above
                    } else {
                        Relation::Below
                    },
                    *words.get(5).ok_or_else(fail)?,
                ),
                _ => return Err(fail()),
            };
            let s = Shape::from_word(shape_word).ok_or_else(fail)?;
            let anchors: Vec<_> = spec.objects.iter().filter(|o| o.shape == s).collect();
            if anchors.len() != 1 {
                return Err(Error::Input("ambiguous relation question".into()));
            }
            let hits: Vec<_> = spec
                .objects
                .iter()
                .filter(|o| o.shape != s && rel.holds(o.cell, anchors[0].cell))
                .collect();
            if hits.len() != 1 {
                return Err(Error::Input("ambiguous relation question".into()));
            }
            Ok(hits[0].shape.word().to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_scene, Category, Cell, Color, ObjectSpec, Size};

    fn obj(shape: Shape, color: Color, cell: u8) -> ObjectSpec {
        ObjectSpec {
            shape,
            color,
            size: Size::Large,
            cell: Cell(cell),
        }
    }

    #[test]
    fn color_question() {
        let spec = SceneSpec::new(vec![obj(Shape::Circle, Color::Red, 4)], 16);
        assert_eq!(
            oracle_answer(&spec, "what color is the circle ?").unwrap(),
            "red"
        );
    }

    #[test]
    fn counting_question() {
        let spec = SceneSpec::new(
            vec![
                obj(Shape::Square, Color::Red, 0),
                obj(Shape::Square, Color::Blue, 1),
                obj(Shape::Square, Color::Green, 2),
            ],
            16,
        );
        assert_eq!(oracle_answer(&spec, "how many squares ?").unwrap(), "three");
    }

    #[test]
    fn relation_question_by_cell_arithmetic() {
        // circle at (row 1, col 0), square at (row 1, col 1): square is right of circle
        let spec = SceneSpec::new(
            vec![obj(Shape::Circle, Color::Red, 3), obj(Shape::Square, Color::Blue, 4)],
            16,
        );
        assert_eq!(
            oracle_answer(&spec, "what shape is right of the circle ?").unwrap(),
            "square"
        );
    }

    #[test]
    fn sampled_qa_agrees_with_oracle() {
        let mut rng = Rng::new(21);
        for i in 0..200 {
            let spec = sample_scene(&mut rng, Category::ALL[i % 6], 32);
            let qa = make_qa(&spec, &mut rng).unwrap();
            assert_eq!(
                oracle_answer(&spec, &qa.question).unwrap(),
                qa.answer,
                "scene {spec:?} question `{}`",
                qa.question
            );
        }
    }
}
