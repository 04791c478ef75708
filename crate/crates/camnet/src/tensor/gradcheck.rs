//! Gradient verification against central finite differences.

use super::params::Parameters;
use super::tape::{Tape, Value};
use super::Scalar;
use crate::Result;

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Worst relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// How many coordinates were checked.
    pub checked: usize,
}

/// Compare tape gradients of a scalar loss against central differences
/// `(f(p+eps) - f(p-eps)) / (2 eps)`.
///
/// `build` must record the same computation on any fresh tape over the
/// current parameter values. Up to `coords_per_param` coordinates of each
/// trainable parameter are probed, spread evenly across the tensor, and
/// the relative error of a pair `(a, n)` is `|a - n| / max(1e-8, |a| + |n|)`.
///
/// Run this with `E = f64`: at `f32` the finite differences themselves
/// drown in rounding error.
pub fn grad_check<E: Scalar>(
    params: &mut Parameters<E>,
    build: impl Fn(&mut Tape<'_, E>) -> Result<Value>,
    eps: f64,
    coords_per_param: usize,
) -> Result<GradCheckReport> {
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };

    let eval = |params: &Parameters<E>| -> Result<f64> {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape)?;
        Ok(tape.values_of(loss)[0].to_f64())
    };

    let ids: Vec<_> = params.ids().filter(|&id| params.get(id).trainable).collect();
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for id in ids {
        let len = params.get(id).tensor.len();
        let probes = coords_per_param.min(len).max(1);
        for t in 0..probes {
            let ci = t * len / probes;
            let orig = params.values(id)[ci];
            let step = E::from_f64(eps);

            params.get_mut(id).tensor.values_mut()[ci] = orig + step;
            let up = eval(params)?;
            params.get_mut(id).tensor.values_mut()[ci] = orig - step;
            let down = eval(params)?;
            params.get_mut(id).tensor.values_mut()[ci] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[ci].to_f64());
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err: max_rel, checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::Tensor;
    use rand::Rng;

    #[test]
    fn affine_relu_mse_gradients_agree() {
        let mut r = stream(3, "gc", &[]);
        let mut params = Parameters::<f64>::new();
        let w = params.add("w", Tensor::from_fn(vec![4, 6], |_| r.random_range(-0.5..0.5))).unwrap();
        let b = params.add("b", Tensor::from_fn(vec![4], |_| r.random_range(-0.5..0.5))).unwrap();
        let x = Tensor::from_fn(vec![6], |_| r.random_range(-1.0..1.0));
        let target = Tensor::from_fn(vec![4], |_| r.random_range(-1.0..1.0));

        let report = grad_check(
            &mut params,
            |tape| {
                let xv = tape.constant(&x);
                let wv = tape.param(w);
                let bv = tape.param(b);
                let h = tape.affine(xv, wv, bv)?;
                let a = tape.relu(h);
                let tv = tape.constant(&target);
                tape.mse(a, tv)
            },
            1e-5,
            100,
        )
        .unwrap();
        assert_eq!(report.checked, 28);
        assert!(report.max_rel_err < 1e-7, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut params = Parameters::<f64>::new();
        let w = params.add("w", Tensor::filled(vec![2], 0.5)).unwrap();
        let frozen = params.add("frozen", Tensor::filled(vec![2], 0.5)).unwrap();
        params.set_trainable_where(|n| n == "frozen", false);
        let report = grad_check(
            &mut params,
            |tape| {
                let a = tape.param(w);
                let b = tape.param(frozen);
                let s = tape.add(a, b)?;
                let t = tape.constant(&Tensor::zeros(vec![2]));
                tape.mse(s, t)
            },
            1e-5,
            10,
        )
        .unwrap();
        assert_eq!(report.checked, 2);
    }
}
