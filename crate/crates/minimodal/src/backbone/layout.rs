//! Sequence layouts and the attention plan they induce.
//!
//! A sequence is an ordered list of segments (text, understanding-image,
//! generation-image). Text attends causally; image segments attend
//! bidirectionally within themselves and to everything earlier; nothing
//! attends to later segments.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Text,
    UndImage,
    GenImage,
}

#[derive(Clone, Copy, Debug)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct SequenceLayout {
    pub segments: Vec<Segment>,
    /// True on positions whose token is a prediction target.
    pub loss_mask: Vec<bool>,
}

impl SequenceLayout {
    pub fn new(segment_spec: &[(SegmentKind, usize)]) -> Self {
        let mut segments = Vec::new();
        let mut start = 0;
        for &(kind, len) in segment_spec {
            segments.push(Segment { kind, start, len });
            start += len;
        }
        SequenceLayout {
            segments,
            loss_mask: vec![false; start],
        }
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.start + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment_of(&self, pos: usize) -> usize {
        self.segments
            .iter()
            .position(|s| pos >= s.start && pos < s.start + s.len)
            .expect("position inside layout")
    }

    /// Positions of the i-th segment.
    pub fn span(&self, idx: usize) -> std::ops::Range<usize> {
        let s = self.segments[idx];
        s.start..s.start + s.len
    }

    /// First segment of the given kind counted from `from`.
    pub fn find_segment(&self, kind: SegmentKind, skip: usize) -> Option<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == kind)
            .map(|(i, _)| i)
            .nth(skip)
    }

    pub fn loss_positions(&self) -> Vec<usize> {
        self.loss_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect()
    }

    /// Builds the row-major [len × len] allowed-attention mask.
    pub fn attention_mask(&self) -> Vec<bool> {
        let n = self.len();
        let seg_of: Vec<usize> = (0..n).map(|p| self.segment_of(p)).collect();
        let mut mask = vec![false; n * n];
        for q in 0..n {
            for k in 0..n {
                let sq = seg_of[q];
                let sk = seg_of[k];
                let allowed = if sk < sq {
                    true
                } else if sk > sq {
                    false
                } else {
                    match self.segments[sq].kind {
                        SegmentKind::Text => k <= q,
                        SegmentKind::UndImage | SegmentKind::GenImage => true,
                    }
                };
                mask[q * n + k] = allowed;
            }
        }
        mask
    }

    pub fn check_len(&self, max: usize) -> Result<()> {
        if self.len() > max {
            return Err(Error::Overlong {
                got: self.len(),
                max,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_partition_the_sequence() {
        let l = SequenceLayout::new(&[
            (SegmentKind::Text, 3),
            (SegmentKind::GenImage, 4),
            (SegmentKind::Text, 2),
        ]);
        assert_eq!(l.len(), 9);
        let mut covered = vec![0usize; 9];
        for i in 0..l.segments.len() {
            for p in l.span(i) {
                covered[p] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn attention_rules() {
        let l = SequenceLayout::new(&[
            (SegmentKind::Text, 2),
            (SegmentKind::GenImage, 3),
            (SegmentKind::Text, 2),
        ]);
        let m = l.attention_mask();
        let n = l.len();
        let at = |q: usize, k: usize| m[q * n + k];
        // text causality
        assert!(at(1, 0) && !at(0, 1));
        // image bidirectional within segment
        assert!(at(2, 4) && at(4, 2));
        // image sees earlier text
        assert!(at(3, 0));
        // nothing attends later segments
        assert!(!at(1, 3) && !at(4, 5));
        // trailing text sees image and earlier text, causal within itself
        assert!(at(5, 3) && at(6, 5) && !at(5, 6));
    }
}
