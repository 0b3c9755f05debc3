//! Deterministic rasterizer.
//!
//! No anti-aliasing: a pixel is painted iff its center lies inside the shape,
//! so every painted pixel carries an exact palette color and the same spec
//! always produces bit-identical bytes.
//!
//! Radii are fractions of a grid cell with a small-resolution floor so the
//! four shapes stay pairwise distinguishable down to 16² canvases, and are
//! capped so an object never reaches the pixel column adjacent to a
//! neighboring cell (components of equal-colored neighbors cannot merge).

use super::image::Image;
use super::{ObjectSpec, SceneSpec, Shape, Size, BACKGROUND_RGB, GRID};

/// Max distance from object center, in pixels, for a given canvas.
pub fn radius(size: Size, canvas: usize) -> f64 {
    let cell = canvas as f64 / GRID as f64;
    let (frac, floor) = match size {
        Size::Small => (0.36, 2.0),
        Size::Large => (0.45, 2.3),
    };
    (frac * cell).max(floor).min(0.45 * cell)
}

/// Pixel-center insideness test relative to the object center.
fn inside(shape: Shape, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Square => {
            let a = 0.92 * r;
            dx.abs() <= a && dy.abs() <= a
        }
        Shape::Triangle => {
            // apex up: vertices (0, -r), (±0.95 r, 0.78 r)
            let (ax, ay) = (0.0, -r);
            let (bx, by) = (-0.95 * r, 0.78 * r);
            let (cx, cy) = (0.95 * r, 0.78 * r);
            let sign = |x1: f64, y1: f64, x2: f64, y2: f64| (dx - x2) * (y1 - y2) - (x1 - x2) * (dy - y2);
            let d1 = sign(ax, ay, bx, by);
            let d2 = sign(bx, by, cx, cy);
            let d3 = sign(cx, cy, ax, ay);
            let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(neg && pos)
        }
        Shape::Star => {
            // four-pointed diagonal star (X), structurally distinct from a
            // digitized disk even at 16² where a plus shape would collide
            let w = 0.35 * r;
            let (ax, ay) = (dx.abs(), dy.abs());
            (ax - ay).abs() <= w && ax.max(ay) <= r
        }
    }
}

/// Pixel mask of one object on the given canvas: (x, y) of painted pixels.
pub fn object_pixels(obj: &ObjectSpec, canvas: usize) -> Vec<(usize, usize)> {
    let (cx, cy) = obj.cell.center(canvas);
    let r = radius(obj.size, canvas);
    let x0 = ((cx - r).floor() as isize).max(0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(canvas - 1);
    let y0 = ((cy - r).floor() as isize).max(0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(canvas - 1);
    let mut px = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if inside(obj.shape, dx, dy, r) {
                px.push((x, y));
            }
        }
    }
    px
}

/// Integer bounding box [x0, y0, x1, y1] (inclusive) of an object's reach.
pub fn object_bbox(obj: &ObjectSpec, canvas: usize) -> (usize, usize, usize, usize) {
    let (cx, cy) = obj.cell.center(canvas);
    let r = radius(obj.size, canvas);
    (
        ((cx - r).floor().max(0.0)) as usize,
        ((cy - r).floor().max(0.0)) as usize,
        ((cx + r).ceil() as usize).min(canvas - 1),
        ((cy + r).ceil() as usize).min(canvas - 1),
    )
}

/// Deterministic rasterization: same spec, same bytes.
pub fn render(spec: &SceneSpec) -> Image {
    let s = spec.canvas_size;
    let mut img = Image::filled(s, BACKGROUND_RGB);
    for obj in &spec.objects {
        let rgb = obj.color.rgb();
        for (x, y) in object_pixels(obj, s) {
            img.set(x, y, rgb);
        }
    }
    if spec.grayscale {
        img = img.grayscale();
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Cell, Color, SceneSpec};

    fn obj(shape: Shape, color: Color, size: Size, cell: u8) -> ObjectSpec {
        ObjectSpec {
            shape,
            color,
            size,
            cell: Cell(cell),
        }
    }

    #[test]
    fn center_pixel_of_centered_circle_is_red() {
        let spec = SceneSpec::new(vec![obj(Shape::Circle, Color::Red, Size::Large, 4)], 64);
        let img = render(&spec);
        assert_eq!(img.get(32, 32), Color::Red.rgb());
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = SceneSpec::new(
            vec![
                obj(Shape::Star, Color::Blue, Size::Small, 0),
                obj(Shape::Triangle, Color::Orange, Size::Large, 8),
            ],
            32,
        );
        assert_eq!(render(&spec).data, render(&spec).data);
    }

    #[test]
    fn every_object_paints_at_least_six_pixels() {
        for canvas in [16usize, 32, 64] {
            for shape in Shape::ALL {
                for size in [Size::Small, Size::Large] {
                    for cell in 0..9u8 {
                        let o = obj(shape, Color::Green, size, cell);
                        let n = object_pixels(&o, canvas).len();
                        assert!(n >= 6, "{shape:?} {size:?} cell {cell} at {canvas}: {n} px");
                    }
                }
            }
        }
    }

    /// Masks of different shapes must be pairwise distinct at every supported
    /// resolution, size and grid alignment, otherwise the oracle cannot be
    /// exact.
    #[test]
    fn shape_masks_are_pairwise_distinct() {
        for canvas in [16usize, 32, 64] {
            for cell in [0u8, 2, 4, 6, 8] {
                for size in [Size::Small, Size::Large] {
                    let masks: Vec<(Shape, Vec<(usize, usize)>)> = Shape::ALL
                        .iter()
                        .map(|&s| (s, object_pixels(&obj(s, Color::Red, size, cell), canvas)))
                        .collect();
                    for i in 0..masks.len() {
                        for j in i + 1..masks.len() {
                            assert_ne!(
                                masks[i].1, masks[j].1,
                                "canvas {canvas} cell {cell} {size:?}: {:?} vs {:?} identical",
                                masks[i].0, masks[j].0
                            );
                        }
                    }
                }
            }
        }
    }

    /// Snapped centers make masks translation-invariant across cells.
    #[test]
    fn masks_are_translation_invariant_across_cells() {
        for canvas in [16usize, 32] {
            for shape in Shape::ALL {
                let reference: Vec<(i64, i64)> = {
                    let o = obj(shape, Color::Red, Size::Large, 4);
                    let (cx, cy) = Cell(4).center(canvas);
                    object_pixels(&o, canvas)
                        .into_iter()
                        .map(|(x, y)| (x as i64 - cx as i64, y as i64 - cy as i64))
                        .collect()
                };
                for cell in [0u8, 2, 6, 8] {
                    let o = obj(shape, Color::Red, Size::Large, cell);
                    let (cx, cy) = Cell(cell).center(canvas);
                    let offs: Vec<(i64, i64)> = object_pixels(&o, canvas)
                        .into_iter()
                        .map(|(x, y)| (x as i64 - cx as i64, y as i64 - cy as i64))
                        .collect();
                    assert_eq!(offs, reference, "{shape:?} cell {cell} canvas {canvas}");
                }
            }
        }
    }

    /// Objects in any two spaced cells must never touch, even diagonally
    /// (8-connectivity), so connected components cannot merge.
    #[test]
    fn spaced_cells_leave_a_gap() {
        let spaced = [0u8, 2, 6, 8];
        for canvas in [16usize, 32, 64] {
            for (ai, &a) in spaced.iter().enumerate() {
                for &b in &spaced[ai + 1..] {
                    for sa in Shape::ALL {
                        for sb in Shape::ALL {
                            let pa = object_pixels(&obj(sa, Color::Red, Size::Large, a), canvas);
                            let pb = object_pixels(&obj(sb, Color::Red, Size::Large, b), canvas);
                            for &(xa, ya) in &pa {
                                for &(xb, yb) in &pb {
                                    let touch = xa.abs_diff(xb) <= 1 && ya.abs_diff(yb) <= 1;
                                    assert!(
                                        !touch,
                                        "canvas {canvas}: cells {a},{b} ({sa:?},{sb:?}) touch at ({xa},{ya})-({xb},{yb})"
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
