//! Paired image-to-image corpora for translation training.
//!
//! Each sample is a scene of two to four discs and slabs rendered twice:
//! once as the network input and once as the target. The two styles map
//! in opposite directions, so a model trained on both at once can only
//! do well by treating them differently:
//!
//! * [`PairStyle::FillIn`]: the input shows shape outlines, the target
//!   paints the interiors (discs warm, slabs cold).
//! * [`PairStyle::Carve`]: the input shows filled shapes, the target
//!   reduces them to coloured outlines.
//!
//! Images are 3-channel with values in `[-1, 1]`, matching a final tanh.
//! Every pair is a pure function of (style, seed, index).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::stream;
use crate::tensor::{Scalar, Tensor};

/// Direction of the rendering task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairStyle {
    FillIn,
    Carve,
}

impl PairStyle {
    fn tag(self) -> u64 {
        match self {
            PairStyle::FillIn => 1,
            PairStyle::Carve => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairStyle::FillIn => "fillin",
            PairStyle::Carve => "carve",
        }
    }
}

/// Input and target images from one domain.
#[derive(Debug, Clone)]
pub struct PairSet<E: Scalar> {
    pub name: String,
    pub inputs: Vec<Tensor<E>>,
    pub targets: Vec<Tensor<E>>,
}

impl<E: Scalar> PairSet<E> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Copy)]
enum Figure {
    Disc { c: (f64, f64), r: f64 },
    Slab { c: (f64, f64), half: (f64, f64) },
}

impl Figure {
    fn dist(&self, p: (f64, f64)) -> f64 {
        match *self {
            Figure::Disc { c, r } => ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt() - r,
            Figure::Slab { c, half } => {
                let qx = (p.0 - c.0).abs() - half.0;
                let qy = (p.1 - c.1).abs() - half.1;
                (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt() + qx.max(qy).min(0.0)
            }
        }
    }

    fn warm(&self) -> bool {
        matches!(self, Figure::Disc { .. })
    }
}

fn scene(rng: &mut ChaCha8Rng) -> Vec<Figure> {
    let count = rng.random_range(2..=4usize);
    (0..count)
        .map(|_| {
            let c = (rng.random_range(0.18..0.82), rng.random_range(0.18..0.82));
            if rng.random_range(0..2u32) == 0 {
                Figure::Disc { c, r: rng.random_range(0.08..0.2) }
            } else {
                Figure::Slab {
                    c,
                    half: (rng.random_range(0.07..0.18), rng.random_range(0.07..0.18)),
                }
            }
        })
        .collect()
}

fn coverage(d: f64, size: usize) -> f64 {
    (0.5 - d * size as f64).clamp(0.0, 1.0)
}

fn render<E: Scalar>(figs: &[Figure], size: usize, target: bool, style: PairStyle) -> Tensor<E> {
    let line = 0.7 / size as f64;
    Tensor::from_fn(vec![3, size, size], |i| {
        let ch = i / (size * size);
        let rest = i % (size * size);
        let p = (
            (rest % size) as f64 / size as f64 + 0.5 / size as f64,
            (rest / size) as f64 / size as f64 + 0.5 / size as f64,
        );
        let mut v = -1.0f64;
        for f in figs {
            let d = f.dist(p);
            let outline_only = match (style, target) {
                (PairStyle::FillIn, false) | (PairStyle::Carve, true) => true,
                (PairStyle::FillIn, true) | (PairStyle::Carve, false) => false,
            };
            let ink = if outline_only { coverage(d.abs() - line, size) } else { coverage(d, size) };
            let colour = if target {
                match (f.warm(), ch) {
                    (true, 0) => 1.0,
                    (true, _) => -0.2,
                    (false, 2) => 1.0,
                    (false, _) => -0.2,
                }
            } else {
                0.9
            };
            v = v.max(-1.0 + ink * (colour + 1.0));
        }
        E::from_f64(v)
    })
}

/// One input/target pair, deterministic in its arguments.
pub fn pair_images<E: Scalar>(
    style: PairStyle,
    size: usize,
    seed: u64,
    index: u64,
) -> (Tensor<E>, Tensor<E>) {
    let mut rng = stream(seed, "pair", &[style.tag(), index]);
    let figs = scene(&mut rng);
    (render(&figs, size, false, style), render(&figs, size, true, style))
}

/// Generate `n` pairs of one style.
pub fn pair_dataset<E: Scalar>(
    style: PairStyle,
    name: impl Into<String>,
    n: usize,
    size: usize,
    seed: u64,
) -> PairSet<E> {
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = pair_images(style, size, seed, i as u64);
        inputs.push(x);
        targets.push(y);
    }
    PairSet { name: name.into(), inputs, targets }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_deterministic() {
        let (a_in, a_out) = pair_images::<f32>(PairStyle::FillIn, 32, 5, 9);
        let (b_in, b_out) = pair_images::<f32>(PairStyle::FillIn, 32, 5, 9);
        assert_eq!(a_in.values(), b_in.values());
        assert_eq!(a_out.values(), b_out.values());
        let (c_in, _) = pair_images::<f32>(PairStyle::FillIn, 32, 5, 10);
        assert_ne!(a_in.values(), c_in.values());
    }

    #[test]
    fn values_sit_in_tanh_range() {
        for style in [PairStyle::FillIn, PairStyle::Carve] {
            let (x, y) = pair_images::<f64>(style, 32, 1, 0);
            for &v in x.values().iter().chain(y.values()) {
                assert!((-1.0..=1.0).contains(&v), "{v}");
            }
        }
    }

    #[test]
    fn styles_swap_ink_coverage_between_input_and_target() {
        let coverage = |t: &Tensor<f64>| -> f64 {
            let n = 32 * 32;
            let px = t.values();
            let mut on = 0usize;
            for i in 0..n {
                let lit = (0..3).any(|ch| px[ch * n + i] > -0.4);
                if lit {
                    on += 1;
                }
            }
            on as f64 / n as f64
        };
        let mut fill_ratio = 0.0;
        let mut carve_ratio = 0.0;
        for i in 0..8 {
            let (x, y) = pair_images::<f64>(PairStyle::FillIn, 32, 2, i);
            fill_ratio += coverage(&y) / coverage(&x);
            let (x, y) = pair_images::<f64>(PairStyle::Carve, 32, 2, i);
            carve_ratio += coverage(&y) / coverage(&x);
        }
        assert!(
            fill_ratio / 8.0 > 1.15,
            "filled targets should cover more pixels than outline inputs: {}",
            fill_ratio / 8.0
        );
        assert!(
            carve_ratio / 8.0 < 0.85,
            "outline targets should cover fewer pixels than filled inputs: {}",
            carve_ratio / 8.0
        );
    }

    #[test]
    fn target_colours_separate_warm_and_cold_shapes() {
        let set = pair_dataset::<f64>(PairStyle::FillIn, "fill", 6, 32, 3);
        assert_eq!(set.len(), 6);
        let mut red = 0.0;
        let mut blue = 0.0;
        for t in &set.targets {
            let n = 32 * 32;
            red += t.values()[..n].iter().map(|&v| v + 1.0).sum::<f64>();
            blue += t.values()[2 * n..].iter().map(|&v| v + 1.0).sum::<f64>();
        }
        assert!(red > 0.0 && blue > 0.0);
    }
}
