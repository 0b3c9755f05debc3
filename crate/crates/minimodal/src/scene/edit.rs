//! Edit cases: (source scene, instruction, target scene) triples where the
//! target differs from the source exactly as the instruction states, plus the
//! pixel region an edit is allowed to touch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::render::object_bbox;
use super::{Cell, Color, ObjectSpec, SceneSpec, Shape, MAX_OBJECTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Add,
    Remove,
    Recolor,
    Replace,
    Move,
    Style,
}

impl EditKind {
    pub const ALL: [EditKind; 6] = [
        EditKind::Add,
        EditKind::Remove,
        EditKind::Recolor,
        EditKind::Replace,
        EditKind::Move,
        EditKind::Style,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EditKind::Add => "add",
            EditKind::Remove => "remove",
            EditKind::Recolor => "recolor",
            EditKind::Replace => "replace",
            EditKind::Move => "move",
            EditKind::Style => "style",
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    fn dilate(self, by: usize, canvas: usize) -> Rect {
        Rect {
            x0: self.x0.saturating_sub(by),
            y0: self.y0.saturating_sub(by),
            x1: (self.x1 + by).min(canvas - 1),
            y1: (self.y1 + by).min(canvas - 1),
        }
    }

    pub fn full(canvas: usize) -> Rect {
        Rect {
            x0: 0,
            y0: 0,
            x1: canvas - 1,
            y1: canvas - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditCase {
    pub source: SceneSpec,
    pub instruction: String,
    pub target: SceneSpec,
    pub edit_kind: EditKind,
    /// Union of rectangles the edit may touch; pixels outside are preserved.
    pub changed_region: Vec<Rect>,
}

impl EditCase {
    /// Boolean pixel mask of the changed region.
    pub fn region_mask(&self) -> Vec<bool> {
        let s = self.source.canvas_size;
        let mut m = vec![false; s * s];
        for r in &self.changed_region {
            for y in r.y0..=r.y1 {
                for x in r.x0..=r.x1 {
                    m[y * s + x] = true;
                }
            }
        }
        m
    }
}

const DILATION: usize = 2;

fn obj_region(o: &ObjectSpec, canvas: usize) -> Rect {
    let (x0, y0, x1, y1) = object_bbox(o, canvas);
    Rect { x0, y0, x1, y1 }.dilate(DILATION, canvas)
}

/// Objects that an instruction can name unambiguously: unique by shape, or
/// unique by (color, shape). Returns (index, phrase).
fn nameable(spec: &SceneSpec) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (i, o) in spec.objects.iter().enumerate() {
        let same_shape = spec.objects.iter().filter(|x| x.shape == o.shape).count();
        if same_shape == 1 {
            out.push((i, o.shape.word().to_string()));
        } else if spec
            .objects
            .iter()
            .filter(|x| x.shape == o.shape && x.color == o.color)
            .count()
            == 1
        {
            out.push((i, format!("{} {}", o.color.word(), o.shape.word())));
        }
    }
    out
}

fn free_cells(spec: &SceneSpec) -> Vec<Cell> {
    Cell::SPACED
        .iter()
        .copied()
        .filter(|c| spec.objects.iter().all(|o| o.cell != *c))
        .collect()
}

fn admissible(kind: EditKind, spec: &SceneSpec) -> bool {
    match kind {
        EditKind::Add => spec.objects.len() < MAX_OBJECTS && !free_cells(spec).is_empty(),
        EditKind::Remove | EditKind::Recolor | EditKind::Replace => !nameable(spec).is_empty(),
        EditKind::Move => !nameable(spec).is_empty() && !free_cells(spec).is_empty(),
        EditKind::Style => !spec.grayscale,
    }
}

/// Builds an edit case for the sampled kind; inadmissible kinds are resampled
/// internally, and an error is raised only when no kind fits.
pub fn make_edit_case(spec: &SceneSpec, rng: &mut Rng) -> Result<EditCase> {
    spec.validate()?;
    let kinds: Vec<EditKind> = EditKind::ALL
        .into_iter()
        .filter(|&k| admissible(k, spec))
        .collect();
    if kinds.is_empty() {
        return Err(Error::Input("no admissible edit kind for scene".into()));
    }
    let kind = *rng.pick(&kinds);
    make_edit_of_kind(spec, kind, rng)
}

pub fn make_edit_of_kind(spec: &SceneSpec, kind: EditKind, rng: &mut Rng) -> Result<EditCase> {
    if !admissible(kind, spec) {
        return Err(Error::Input(format!(
            "edit kind {} inadmissible for scene",
            kind.name()
        )));
    }
    let canvas = spec.canvas_size;
    let mut target = spec.clone();
    let (instruction, region) = match kind {
        EditKind::Add => {
            let cell = *rng.pick(&free_cells(spec));
            let obj = ObjectSpec {
                shape: *rng.pick(&Shape::ALL),
                color: *rng.pick(&Color::ALL),
                size: if rng.uniform() < 0.5 {
                    super::Size::Small
                } else {
                    super::Size::Large
                },
                cell,
            };
            target.objects.push(obj);
            (
                format!(
                    "add a {} {} at the {}",
                    obj.color.word(),
                    obj.shape.word(),
                    cell.phrase()
                ),
                vec![obj_region(&obj, canvas)],
            )
        }
        EditKind::Remove => {
            let (i, name) = rng.pick(&nameable(spec)).clone();
            let removed = target.objects.remove(i);
            (
                format!("remove the {name}"),
                vec![obj_region(&removed, canvas)],
            )
        }
        EditKind::Recolor => {
            let (i, name) = rng.pick(&nameable(spec)).clone();
            let old = target.objects[i].color;
            let mut new = *rng.pick(&Color::ALL);
            while new == old {
                new = *rng.pick(&Color::ALL);
            }
            target.objects[i].color = new;
            (
                format!("change the {name} to {}", new.word()),
                vec![obj_region(&target.objects[i], canvas)],
            )
        }
        EditKind::Replace => {
            let (i, name) = rng.pick(&nameable(spec)).clone();
            let old = target.objects[i];
            let mut shape = *rng.pick(&Shape::ALL);
            while shape == old.shape {
                shape = *rng.pick(&Shape::ALL);
            }
            let color = *rng.pick(&Color::ALL);
            target.objects[i] = ObjectSpec {
                shape,
                color,
                size: old.size,
                cell: old.cell,
            };
            (
                format!(
                    "replace the {name} with a {} {}",
                    color.word(),
                    shape.word()
                ),
                vec![obj_region(&old, canvas), obj_region(&target.objects[i], canvas)],
            )
        }
        EditKind::Move => {
            let (i, name) = rng.pick(&nameable(spec)).clone();
            let cell = *rng.pick(&free_cells(spec));
            let old = target.objects[i];
            target.objects[i].cell = cell;
            (
                format!("move the {name} to the {}", cell.phrase()),
                vec![obj_region(&old, canvas), obj_region(&target.objects[i], canvas)],
            )
        }
        EditKind::Style => {
            target.grayscale = true;
            (
                "make the image grayscale".to_string(),
                vec![Rect::full(canvas)],
            )
        }
    };
    debug_assert!(target.validate().is_ok());
    Ok(EditCase {
        source: spec.clone(),
        instruction,
        target,
        edit_kind: kind,
        changed_region: region,
    })
}
