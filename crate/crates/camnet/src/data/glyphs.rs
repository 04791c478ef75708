//! Procedurally drawn 28x28 glyph corpora.
//!
//! Two families of ten classes each: `Strokes` draws digit-like line
//! figures, `Garments` draws filled clothing silhouettes. Every image is
//! a pure function of (family, seed, index), with the class fixed as
//! `index % 10` and per-sample jitter in position, scale, rotation, and
//! stroke weight, so corpora regenerate bit-identically anywhere.
//!
//! [`write_corpus`] lays a family out on disk in the standard IDX file
//! layout, which keeps the rest of the pipeline on the same loader it
//! would use for downloaded data.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::idx;
use crate::data::Dataset;
use crate::rng::stream;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const SIDE: usize = 28;
pub const CLASSES: usize = 10;

/// Which ten-class family to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlyphFamily {
    Strokes,
    Garments,
}

impl GlyphFamily {
    fn tag(self) -> u64 {
        match self {
            GlyphFamily::Strokes => 1,
            GlyphFamily::Garments => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GlyphFamily::Strokes => "strokes",
            GlyphFamily::Garments => "garments",
        }
    }
}

impl FromStr for GlyphFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strokes" => Ok(GlyphFamily::Strokes),
            "garments" => Ok(GlyphFamily::Garments),
            other => Err(Error::Config(format!(
                "unknown glyph family {other:?}, expected strokes or garments"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Prim {
    Capsule { a: (f64, f64), b: (f64, f64), r: f64 },
    Disc { c: (f64, f64), r: f64 },
    Ring { c: (f64, f64), r: f64, t: f64 },
    Slab { c: (f64, f64), half: (f64, f64), round: f64 },
    Taper { cx: f64, y0: f64, y1: f64, w0: f64, w1: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    prim: Prim,
    cut: bool,
}

fn fill(prim: Prim) -> Shape {
    Shape { prim, cut: false }
}

fn cut(prim: Prim) -> Shape {
    Shape { prim, cut: true }
}

fn dist(prim: &Prim, p: (f64, f64)) -> f64 {
    match *prim {
        Prim::Capsule { a, b, r } => {
            let (px, py) = (p.0 - a.0, p.1 - a.1);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 { ((px * dx + py * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (ex, ey) = (px - t * dx, py - t * dy);
            (ex * ex + ey * ey).sqrt() - r
        }
        Prim::Disc { c, r } => ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt() - r,
        Prim::Ring { c, r, t } => {
            ((((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt()) - r).abs() - t
        }
        Prim::Slab { c, half, round } => {
            let qx = (p.0 - c.0).abs() - (half.0 - round);
            let qy = (p.1 - c.1).abs() - (half.1 - round);
            let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
            outside + qx.max(qy).min(0.0) - round
        }
        Prim::Taper { cx, y0, y1, w0, w1 } => {
            let t = ((p.1 - y0) / (y1 - y0)).clamp(0.0, 1.0);
            let hw = w0 + (w1 - w0) * t;
            let dx = (p.0 - cx).abs() - hw;
            let dy = (y0 - p.1).max(p.1 - y1);
            dx.max(dy)
        }
    }
}

fn ink(shapes: &[Shape], p: (f64, f64)) -> f64 {
    let mut d = f64::INFINITY;
    for s in shapes.iter().filter(|s| !s.cut) {
        d = d.min(dist(&s.prim, p));
    }
    for s in shapes.iter().filter(|s| s.cut) {
        d = d.max(-dist(&s.prim, p));
    }
    (0.5 - d * 24.0).clamp(0.0, 1.0)
}

fn jit(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    rng.random_range(-amp..amp)
}

/// Digit-like figures: polyline strokes plus rings, per class.
fn stroke_shapes(class: usize, rng: &mut ChaCha8Rng) -> Vec<Shape> {
    let t = 0.045 + jit(rng, 0.008);
    let mut shapes = Vec::new();
    let lines = |pts: &[(f64, f64)], shapes: &mut Vec<Shape>, rng: &mut ChaCha8Rng| {
        let jpts: Vec<(f64, f64)> =
            pts.iter().map(|&(x, y)| (x + jit(rng, 0.015), y + jit(rng, 0.015))).collect();
        for w in jpts.windows(2) {
            shapes.push(fill(Prim::Capsule { a: w[0], b: w[1], r: t }));
        }
    };
    let ring = |c: (f64, f64), r: f64, rng: &mut ChaCha8Rng| {
        fill(Prim::Ring {
            c: (c.0 + jit(rng, 0.012), c.1 + jit(rng, 0.012)),
            r: r * (1.0 + jit(rng, 0.06)),
            t,
        })
    };
    match class {
        0 => shapes.push(ring((0.5, 0.5), 0.28, rng)),
        1 => {
            lines(&[(0.38, 0.28), (0.52, 0.15), (0.52, 0.85)], &mut shapes, rng);
        }
        2 => {
            lines(
                &[(0.32, 0.3), (0.42, 0.18), (0.6, 0.18), (0.68, 0.33), (0.32, 0.8), (0.72, 0.8)],
                &mut shapes,
                rng,
            );
        }
        3 => {
            lines(
                &[
                    (0.32, 0.2),
                    (0.6, 0.2),
                    (0.68, 0.33),
                    (0.5, 0.47),
                    (0.68, 0.62),
                    (0.6, 0.8),
                    (0.32, 0.8),
                ],
                &mut shapes,
                rng,
            );
        }
        4 => {
            lines(&[(0.6, 0.15), (0.28, 0.58), (0.78, 0.58)], &mut shapes, rng);
            lines(&[(0.6, 0.32), (0.6, 0.85)], &mut shapes, rng);
        }
        5 => {
            lines(
                &[
                    (0.7, 0.18),
                    (0.34, 0.18),
                    (0.34, 0.46),
                    (0.62, 0.46),
                    (0.7, 0.62),
                    (0.6, 0.8),
                    (0.32, 0.78),
                ],
                &mut shapes,
                rng,
            );
        }
        6 => {
            shapes.push(ring((0.48, 0.62), 0.19, rng));
            lines(&[(0.62, 0.18), (0.47, 0.4), (0.4, 0.52)], &mut shapes, rng);
        }
        7 => {
            lines(&[(0.3, 0.18), (0.7, 0.18), (0.45, 0.85)], &mut shapes, rng);
        }
        8 => {
            shapes.push(ring((0.5, 0.32), 0.16, rng));
            shapes.push(ring((0.5, 0.67), 0.19, rng));
        }
        _ => {
            shapes.push(ring((0.5, 0.37), 0.18, rng));
            lines(&[(0.68, 0.4), (0.64, 0.62), (0.55, 0.85)], &mut shapes, rng);
        }
    }
    shapes
}

/// Clothing silhouettes: filled slabs, capsules, and cut-outs per class.
fn garment_shapes(class: usize, rng: &mut ChaCha8Rng) -> Vec<Shape> {
    let g = |v: f64, rng: &mut ChaCha8Rng| v * (1.0 + jit(rng, 0.08));
    match class {
        0 => vec![
            fill(Prim::Slab { c: (0.5, 0.55), half: (g(0.15, rng), g(0.27, rng)), round: 0.04 }),
            fill(Prim::Slab { c: (0.5, 0.36), half: (g(0.3, rng), g(0.07, rng)), round: 0.04 }),
        ],
        1 => vec![
            fill(Prim::Slab { c: (0.42, 0.6), half: (g(0.06, rng), g(0.28, rng)), round: 0.03 }),
            fill(Prim::Slab { c: (0.58, 0.6), half: (g(0.06, rng), g(0.28, rng)), round: 0.03 }),
            fill(Prim::Slab { c: (0.5, 0.34), half: (g(0.13, rng), g(0.09, rng)), round: 0.03 }),
        ],
        2 => vec![
            fill(Prim::Slab { c: (0.5, 0.55), half: (g(0.16, rng), g(0.28, rng)), round: 0.04 }),
            fill(Prim::Capsule { a: (0.3, 0.34), b: (0.14, 0.66), r: g(0.055, rng) }),
            fill(Prim::Capsule { a: (0.7, 0.34), b: (0.86, 0.66), r: g(0.055, rng) }),
        ],
        3 => vec![
            fill(Prim::Taper {
                cx: 0.5,
                y0: 0.2,
                y1: 0.85,
                w0: g(0.09, rng),
                w1: g(0.24, rng),
            }),
            fill(Prim::Slab { c: (0.5, 0.22), half: (g(0.16, rng), g(0.05, rng)), round: 0.03 }),
        ],
        4 => vec![
            fill(Prim::Slab { c: (0.5, 0.52), half: (g(0.19, rng), g(0.33, rng)), round: 0.05 }),
            fill(Prim::Capsule { a: (0.28, 0.3), b: (0.16, 0.7), r: g(0.05, rng) }),
            fill(Prim::Capsule { a: (0.72, 0.3), b: (0.84, 0.7), r: g(0.05, rng) }),
            cut(Prim::Slab { c: (0.5, 0.6), half: (0.015, g(0.26, rng)), round: 0.01 }),
        ],
        5 => vec![
            fill(Prim::Capsule { a: (0.22, 0.72), b: (0.78, 0.78), r: g(0.045, rng) }),
            fill(Prim::Capsule { a: (0.3, 0.52), b: (0.72, 0.57), r: g(0.028, rng) }),
            fill(Prim::Capsule { a: (0.36, 0.34), b: (0.66, 0.38), r: g(0.024, rng) }),
        ],
        6 => vec![
            fill(Prim::Slab { c: (0.5, 0.55), half: (g(0.15, rng), g(0.3, rng)), round: 0.04 }),
            fill(Prim::Slab { c: (0.5, 0.33), half: (g(0.27, rng), g(0.05, rng)), round: 0.03 }),
            cut(Prim::Disc { c: (0.5, 0.2), r: g(0.08, rng) }),
        ],
        7 => vec![
            fill(Prim::Capsule { a: (0.22, 0.74), b: (0.78, 0.74), r: g(0.05, rng) }),
            fill(Prim::Disc { c: (0.68, 0.64), r: g(0.09, rng) }),
            fill(Prim::Slab { c: (0.45, 0.63), half: (g(0.15, rng), g(0.08, rng)), round: 0.05 }),
        ],
        8 => vec![
            fill(Prim::Slab { c: (0.5, 0.6), half: (g(0.22, rng), g(0.19, rng)), round: 0.06 }),
            fill(Prim::Ring { c: (0.5, 0.38), r: g(0.1, rng), t: 0.03 }),
        ],
        _ => vec![
            fill(Prim::Slab { c: (0.42, 0.48), half: (g(0.08, rng), g(0.26, rng)), round: 0.04 }),
            fill(Prim::Slab { c: (0.53, 0.76), half: (g(0.19, rng), g(0.08, rng)), round: 0.05 }),
        ],
    }
}

/// Draw one glyph. The result only depends on the arguments.
pub fn glyph_image<E: Scalar>(family: GlyphFamily, seed: u64, index: u64) -> Tensor<E> {
    let class = (index % CLASSES as u64) as usize;
    let mut rng = stream(seed, "glyph", &[family.tag(), index]);
    let shapes = match family {
        GlyphFamily::Strokes => stroke_shapes(class, &mut rng),
        GlyphFamily::Garments => garment_shapes(class, &mut rng),
    };
    let angle = jit(&mut rng, 0.13);
    let scale = 1.0 + jit(&mut rng, 0.12);
    let shift = (jit(&mut rng, 0.06), jit(&mut rng, 0.06));
    let (sin, cos) = angle.sin_cos();

    Tensor::from_fn(vec![1, SIDE, SIDE], |i| {
        let (py, px) = (i / SIDE, i % SIDE);
        let x = (px as f64 + 0.5) / SIDE as f64 - 0.5 - shift.0;
        let y = (py as f64 + 0.5) / SIDE as f64 - 0.5 - shift.1;
        let rx = (cos * x + sin * y) / scale + 0.5;
        let ry = (-sin * x + cos * y) / scale + 0.5;
        E::from_f64(ink(&shapes, (rx, ry)))
    })
}

/// Generate an in-memory dataset of `n` glyphs.
pub fn glyph_dataset<E: Scalar>(
    family: GlyphFamily,
    name: impl Into<String>,
    n: usize,
    seed: u64,
) -> Dataset<E> {
    let images = (0..n).map(|i| glyph_image(family, seed, i as u64)).collect();
    let labels = (0..n).map(|i| i % CLASSES).collect();
    Dataset { name: name.into(), images, labels, classes: CLASSES }
}

/// Write train and test splits of a family into `dir` as IDX files.
/// The test split draws from a separate sample stream.
pub fn write_corpus<E: Scalar>(
    dir: &Path,
    family: GlyphFamily,
    train: usize,
    test: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let train_set = glyph_dataset::<E>(family, "train", train, seed);
    let test_set = glyph_dataset::<E>(family, "test", test, seed ^ 0x7e57_da7a);
    idx::save_images(&dir.join(idx::TRAIN_IMAGES), &train_set.images)?;
    idx::save_labels(&dir.join(idx::TRAIN_LABELS), &train_set.labels)?;
    idx::save_images(&dir.join(idx::TEST_IMAGES), &test_set.images)?;
    idx::save_labels(&dir.join(idx::TEST_LABELS), &test_set.labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_deterministic_per_index() {
        let a = glyph_image::<f32>(GlyphFamily::Strokes, 7, 42);
        let b = glyph_image::<f32>(GlyphFamily::Strokes, 7, 42);
        assert_eq!(a.values(), b.values());
        let c = glyph_image::<f32>(GlyphFamily::Strokes, 7, 43);
        assert_ne!(a.values(), c.values());
        let d = glyph_image::<f32>(GlyphFamily::Strokes, 8, 42);
        assert_ne!(a.values(), d.values());
    }

    #[test]
    fn families_draw_different_pictures() {
        let a = glyph_image::<f32>(GlyphFamily::Strokes, 7, 40);
        let b = glyph_image::<f32>(GlyphFamily::Garments, 7, 40);
        assert_ne!(a.values(), b.values());
    }

    #[test]
    fn pixels_stay_in_unit_range_with_real_ink() {
        for family in [GlyphFamily::Strokes, GlyphFamily::Garments] {
            for index in 0..CLASSES as u64 {
                let img = glyph_image::<f64>(family, 3, index);
                let mut on = 0usize;
                for &v in img.values() {
                    assert!((0.0..=1.0).contains(&v));
                    if v > 0.5 {
                        on += 1;
                    }
                }
                let frac = on as f64 / img.len() as f64;
                assert!(
                    (0.02..0.75).contains(&frac),
                    "{family:?} class {index}: ink fraction {frac}"
                );
            }
        }
    }

    #[test]
    fn same_class_varies_between_samples() {
        let a = glyph_image::<f64>(GlyphFamily::Garments, 5, 3);
        let b = glyph_image::<f64>(GlyphFamily::Garments, 5, 13);
        assert!(a.max_abs_diff(&b) > 0.1);
    }

    #[test]
    fn corpus_lands_on_disk_in_idx_layout() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus::<f32>(dir.path(), GlyphFamily::Strokes, 30, 10, 1).unwrap();
        let images = idx::load_images::<f32>(&dir.path().join(idx::TRAIN_IMAGES)).unwrap();
        let labels = idx::load_labels(&dir.path().join(idx::TRAIN_LABELS)).unwrap();
        assert_eq!(images.len(), 30);
        assert_eq!(labels[..10], [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let test = idx::load_images::<f32>(&dir.path().join(idx::TEST_IMAGES)).unwrap();
        assert_eq!(test.len(), 10);
        assert_ne!(images[0].values(), test[0].values());
    }

    #[test]
    fn family_names_parse() {
        assert_eq!("strokes".parse::<GlyphFamily>().unwrap(), GlyphFamily::Strokes);
        assert_eq!("garments".parse::<GlyphFamily>().unwrap(), GlyphFamily::Garments);
        assert!("shoes".parse::<GlyphFamily>().is_err());
    }
}
