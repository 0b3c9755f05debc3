//! Caption grammar and its inverse.
//!
//! Captions are generated from a handful of fixed templates over the scene's
//! facts and can be parsed back into the exact constraint set they encode.
//! `parse_caption(caption(spec))` recovers constraints that `spec` satisfies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{Category, Cell, Color, SceneSpec, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// Strict cell arithmetic: left/right need a shared row, above/below a
    /// shared column.
    pub fn holds(self, a: Cell, b: Cell) -> bool {
        match self {
            Relation::LeftOf => a.row() == b.row() && a.col() < b.col(),
            Relation::RightOf => a.row() == b.row() && a.col() > b.col(),
            Relation::Above => a.col() == b.col() && a.row() < b.row(),
            Relation::Below => a.col() == b.col() && a.row() > b.row(),
        }
    }

    pub fn inverse(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }
}

pub fn number_word(n: usize) -> &'static str {
    match n {
        0 => "zero",
        1 => "one",
        2 => "two",
        3 => "three",
        4 => "four",
        _ => panic!("number word out of range: {n}"),
    }
}

pub fn number_from_word(w: &str) -> Option<usize> {
    ["zero", "one", "two", "three", "four"]
        .iter()
        .position(|&x| x == w)
}

/// The constraint set a caption encodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraints {
    /// Exact total object count, when the template pins it.
    pub total: Option<usize>,
    /// Required exact count per named shape.
    pub shape_counts: Vec<(Shape, usize)>,
    /// Required exact count of (shape, color) pairs.
    pub bindings: Vec<(Shape, Color, usize)>,
    /// Required spatial relation between two named shapes.
    pub relation: Option<(Shape, Relation, Shape)>,
}

impl Constraints {
    /// Number of individual checks this constraint set carries.
    pub fn num_checks(&self) -> usize {
        self.total.iter().len()
            + self.shape_counts.len()
            + self.bindings.len()
            + self.relation.iter().len()
    }

    /// How many checks a set of detected (shape, color, cell) facts passes.
    pub fn satisfied_checks(&self, facts: &[(Shape, Color, Cell)]) -> usize {
        let mut ok = 0;
        if let Some(n) = self.total {
            if facts.len() == n {
                ok += 1;
            }
        }
        for &(shape, n) in &self.shape_counts {
            if facts.iter().filter(|f| f.0 == shape).count() == n {
                ok += 1;
            }
        }
        for &(shape, color, n) in &self.bindings {
            if facts.iter().filter(|f| f.0 == shape && f.1 == color).count() == n {
                ok += 1;
            }
        }
        if let Some((sa, rel, sb)) = self.relation {
            let hit = facts.iter().any(|a| {
                a.0 == sa && facts.iter().any(|b| b.0 == sb && rel.holds(a.2, b.2))
            });
            if hit {
                ok += 1;
            }
        }
        ok
    }

    pub fn satisfied_by(&self, facts: &[(Shape, Color, Cell)]) -> bool {
        self.satisfied_checks(facts) == self.num_checks()
    }
}

/// Caption following the category's canonical template (the prompt style the
/// evaluation harness uses).
pub fn caption_for_category(spec: &SceneSpec, category: Category) -> String {
    let o = &spec.objects;
    match category {
        Category::SingleObject => format!("a photo of a {}", o[0].shape.word()),
        Category::Colors => {
            format!("a photo of a {} {}", o[0].color.word(), o[0].shape.word())
        }
        Category::TwoObject => format!(
            "a photo of a {} and a {}",
            o[0].shape.word(),
            o[1].shape.word()
        ),
        Category::Counting => format!(
            "a photo of {} {}",
            number_word(o.len()),
            o[0].shape.plural()
        ),
        Category::Position => {
            let rel = Relation::ALL
                .iter()
                .copied()
                .find(|r| r.holds(o[0].cell, o[1].cell))
                .expect("position scene has a valid relation");
            format!(
                "a photo of a {} {} a {}",
                o[0].shape.word(),
                rel.phrase(),
                o[1].shape.word()
            )
        }
        Category::ColorAttr => format!(
            "a photo of a {} {} and a {} {}",
            o[0].color.word(),
            o[0].shape.word(),
            o[1].color.word(),
            o[1].shape.word()
        ),
    }
}

/// Grammar-generated caption: uniform draw over the templates valid for this
/// spec. Fully determined by (spec, rng draw). Counting captions name the
/// color when every object shares it ("a photo of three blue squares").
pub fn caption(spec: &SceneSpec, rng: &mut Rng) -> String {
    let mut valid = Vec::new();
    let o = &spec.objects;
    if o.len() == 1 {
        valid.push(Category::SingleObject);
        valid.push(Category::Colors);
    }
    if o.len() >= 2 && o.iter().all(|x| x.shape == o[0].shape) {
        valid.push(Category::Counting);
    }
    if o.len() == 2 && o[0].shape != o[1].shape {
        valid.push(Category::TwoObject);
        if Relation::ALL.iter().any(|r| r.holds(o[0].cell, o[1].cell)) {
            valid.push(Category::Position);
        }
        if o[0].color != o[1].color {
            valid.push(Category::ColorAttr);
        }
    }
    if valid.is_empty() {
        // mixed-shape scenes of 3+ objects
        return format!("a photo of {} shapes", number_word(o.len()));
    }
    let cat = *rng.pick(&valid);
    if cat == Category::Counting && o.iter().all(|x| x.color == o[0].color) {
        return format!(
            "a photo of {} {} {}",
            number_word(o.len()),
            o[0].color.word(),
            o[0].shape.plural()
        );
    }
    caption_for_category(spec, cat)
}

/// Parses a grammar caption back to its constraint set.
pub fn parse_caption(text: &str) -> Result<Constraints> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let fail = || Error::Input(format!("caption does not match grammar: `{text}`"));
    if words.len() < 4 || words[0] != "a" || words[1] != "photo" || words[2] != "of" {
        return Err(fail());
    }
    let rest = &words[3..];

    // "{number} [color] {shape-plural}" or "{number} shapes"
    if let Some(n) = number_from_word(rest[0]) {
        match rest.len() {
            2 if rest[1] == "shapes" => {
                return Ok(Constraints {
                    total: Some(n),
                    ..Default::default()
                })
            }
            2 => {
                if let Some(shape) = Shape::from_word(rest[1]) {
                    return Ok(Constraints {
                        total: Some(n),
                        shape_counts: vec![(shape, n)],
                        ..Default::default()
                    });
                }
            }
            3 => {
                if let (Some(color), Some(shape)) =
                    (Color::from_word(rest[1]), Shape::from_word(rest[2]))
                {
                    return Ok(Constraints {
                        total: Some(n),
                        shape_counts: vec![(shape, n)],
                        bindings: vec![(shape, color, n)],
                        ..Default::default()
                    });
                }
            }
            _ => {}
        }
        return Err(fail());
    }

    if rest[0] != "a" {
        return Err(fail());
    }
    let tail = &rest[1..];

    // one noun phrase: [color] shape
    let parse_np = |w: &[&str]| -> Option<(Option<Color>, Shape, usize)> {
        if w.is_empty() {
            return None;
        }
        if let Some(c) = Color::from_word(w[0]) {
            let s = Shape::from_word(*w.get(1)?)?;
            Some((Some(c), s, 2))
        } else {
            let s = Shape::from_word(w[0])?;
            Some((None, s, 1))
        }
    };

    let (c1, s1, used) = parse_np(tail).ok_or_else(fail)?;
    let after = &tail[used..];

    if after.is_empty() {
        let mut k = Constraints {
            total: Some(1),
            shape_counts: vec![(s1, 1)],
            ..Default::default()
        };
        if let Some(c) = c1 {
            k.bindings.push((s1, c, 1));
        }
        return Ok(k);
    }

    // "... and a {np}"
    if after[0] == "and" {
        if after.len() < 3 || after[1] != "a" {
            return Err(fail());
        }
        let (c2, s2, used2) = parse_np(&after[2..]).ok_or_else(fail)?;
        if after.len() != 2 + used2 {
            return Err(fail());
        }
        let mut k = Constraints {
            total: Some(2),
            shape_counts: vec![(s1, 1), (s2, 1)],
            ..Default::default()
        };
        if let Some(c) = c1 {
            k.bindings.push((s1, c, 1));
        }
        if let Some(c) = c2 {
            k.bindings.push((s2, c, 1));
        }
        return Ok(k);
    }

    // "... {relation} a {shape}"
    let (rel, used_rel) = match after[0] {
        "left" | "right" if after.len() >= 2 && after[1] == "of" => (
            if after[0] == "left" {
                Relation::LeftOf
            } else {
                Relation::RightOf
            },
            2,
        ),
        "above" => (Relation::Above, 1),
        "below" => (Relation::Below, 1),
        _ => return Err(fail()),
    };
    let after_rel = &after[used_rel..];
    if after_rel.len() != 2 || after_rel[0] != "a" {
        return Err(fail());
    }
    let s2 = Shape::from_word(after_rel[1]).ok_or_else(fail)?;
    Ok(Constraints {
        total: Some(2),
        shape_counts: vec![(s1, 1), (s2, 1)],
        bindings: c1.map(|c| vec![(s1, c, 1)]).unwrap_or_default(),
        relation: Some((s1, rel, s2)),
    })
}
