//! Random small warps applied to training images.
//!
//! Each application draws a shift, rotation, and scale, then pulls every
//! output pixel from the inversely warped source position with bilinear
//! interpolation, filling zeros outside the frame. Callers pass the
//! random stream, so the same stream always yields the same warp.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Warp ranges; all draws are uniform and symmetric around identity
/// except scale, which is uniform on `[scale_lo, scale_hi]`.
#[derive(Debug, Clone, Copy)]
pub struct Augment {
    /// Max shift along each axis, in pixels.
    pub shift: f64,
    /// Max rotation either way, in degrees.
    pub rotate: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for Augment {
    fn default() -> Self {
        Augment { shift: 2.0, rotate: 10.0, scale_lo: 0.9, scale_hi: 1.1 }
    }
}

impl Augment {
    /// No-op configuration, handy for switching augmentation off.
    pub fn none() -> Self {
        Augment { shift: 0.0, rotate: 0.0, scale_lo: 1.0, scale_hi: 1.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.shift == 0.0 && self.rotate == 0.0 && self.scale_lo == 1.0 && self.scale_hi == 1.0
    }

    /// Warp one `[c, h, w]` image.
    pub fn apply<E: Scalar>(&self, img: &Tensor<E>, rng: &mut ChaCha8Rng) -> Result<Tensor<E>> {
        let &[c, h, w] = img.shape() else {
            return Err(Error::Shape(format!(
                "augmenting shape {:?}, want [c, h, w]",
                img.shape()
            )));
        };
        let dx = sym(rng, self.shift);
        let dy = sym(rng, self.shift);
        let theta = sym(rng, self.rotate).to_radians();
        let s = if self.scale_lo == self.scale_hi {
            self.scale_lo
        } else {
            rng.random_range(self.scale_lo..self.scale_hi)
        };
        let (sin, cos) = theta.sin_cos();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let src = img.values();
        let out = Tensor::from_fn(vec![c, h, w], |i| {
            let ch = i / (h * w);
            let rest = i % (h * w);
            let (oy, ox) = ((rest / w) as f64, (rest % w) as f64);
            let (ux, uy) = (ox - cx, oy - cy);
            let sx = (cos * ux + sin * uy) / s + cx - dx;
            let sy = (-sin * ux + cos * uy) / s + cy - dy;
            bilinear(&src[ch * h * w..(ch + 1) * h * w], h, w, sy, sx)
        });
        Ok(out)
    }
}

fn sym(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    if amp == 0.0 {
        0.0
    } else {
        rng.random_range(-amp..amp)
    }
}

fn bilinear<E: Scalar>(plane: &[E], h: usize, w: usize, y: f64, x: f64) -> E {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sample = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            Scalar::to_f64(plane[yy as usize * w + xx as usize])
        }
    };
    let v00 = sample(y0, x0);
    let v01 = sample(y0, x0 + 1.0);
    let v10 = sample(y0 + 1.0, x0);
    let v11 = sample(y0 + 1.0, x0 + 1.0);
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bot = v10 * (1.0 - fx) + v11 * fx;
    E::from_f64(top * (1.0 - fy) + bot * fy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::glyphs::{glyph_image, GlyphFamily};
    use crate::rng::stream;

    #[test]
    fn identity_settings_return_the_image_unchanged() {
        let img = glyph_image::<f64>(GlyphFamily::Strokes, 3, 8);
        let mut rng = stream(0, "augment", &[0, 8]);
        let out = Augment::none().apply(&img, &mut rng).unwrap();
        assert_eq!(out.values(), img.values());
    }

    #[test]
    fn same_stream_gives_same_warp() {
        let img = glyph_image::<f64>(GlyphFamily::Strokes, 3, 9);
        let aug = Augment::default();
        let a = aug.apply(&img, &mut stream(1, "augment", &[5, 9])).unwrap();
        let b = aug.apply(&img, &mut stream(1, "augment", &[5, 9])).unwrap();
        assert_eq!(a.values(), b.values());
        let c = aug.apply(&img, &mut stream(1, "augment", &[6, 9])).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn pure_shift_moves_pixels_where_expected() {
        let mut img = Tensor::<f64>::zeros(vec![1, 9, 9]);
        img.values_mut()[4 * 9 + 4] = 1.0;
        let aug = Augment { shift: 2.0, rotate: 0.0, scale_lo: 1.0, scale_hi: 1.0 };
        let mut rng = stream(2, "augment", &[0, 0]);
        let out = aug.apply(&img, &mut rng).unwrap();
        let total: f64 = out.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "mass {total}");
        let peak = out
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let (py, px) = (peak / 9, peak % 9);
        assert!(py.abs_diff(4) <= 3 && px.abs_diff(4) <= 3);
    }

    #[test]
    fn warped_values_stay_in_range() {
        let img = glyph_image::<f64>(GlyphFamily::Garments, 4, 17);
        let aug = Augment::default();
        for k in 0..5 {
            let out = aug.apply(&img, &mut stream(3, "augment", &[k, 17])).unwrap();
            for &v in out.values() {
                assert!((0.0..=1.0).contains(&v), "{v}");
            }
        }
    }

    #[test]
    fn rank_one_input_is_rejected() {
        let flat = Tensor::<f64>::zeros(vec![12]);
        let mut rng = stream(4, "augment", &[0, 0]);
        assert!(Augment::default().apply(&flat, &mut rng).is_err());
    }
}
