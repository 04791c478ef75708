//! Tensors, parameters, and the reverse-mode tape.
//!
//! `Tensor` is a dense N-dimensional value. `Parameters` is the named
//! registry of trainable tensors for a model; tapes borrow it read-only,
//! so many per-sample tapes can run in parallel against one set of
//! weights. `Tape` records forward operations and replays them in reverse
//! to produce exact gradients, and `grad_check` validates those gradients
//! against central finite differences.

mod gradcheck;
mod kernels;
mod params;
mod scalar;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use kernels::Padding;
pub use params::{GradStore, ParamId, Parameter, Parameters};
pub use scalar::Scalar;
pub use tape::{Tape, Value, CE_EPSILON};

use crate::{Error, Result};
use rand::Rng;

/// Dense N-dimensional array of `E` with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    values: Vec<E>,
    grad: Option<Vec<E>>,
}

impl<E: Scalar> Tensor<E> {
    /// Build from a shape and matching flat row-major data.
    pub fn new(shape: impl Into<Vec<usize>>, values: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        let expect: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("degenerate shape {shape:?}")));
        }
        if expect != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} wants {expect} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values, grad: None })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor { shape, values: vec![E::zero(); n], grad: None }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, v: E) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor { shape, values: vec![v; n], grad: None }
    }

    /// Single-element rank-1 tensor.
    pub fn scalar(v: E) -> Self {
        Tensor { shape: vec![1], values: vec![v], grad: None }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> E) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor { shape, values: (0..n).map(&mut f).collect(), grad: None }
    }

    /// Uniform random values in `[lo, hi)`.
    pub fn rand_uniform(
        shape: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Tensor::from_fn(shape, |_| E::from_f64(rng.random_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[E] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [E] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<E> {
        self.values
    }

    /// Gradient slot contents, if any have been accumulated.
    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    /// Add `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[E]) -> Result<()> {
        if g.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "gradient of {} values against tensor of {}",
                g.len(),
                self.values.len()
            )));
        }
        let slot = self.grad.get_or_insert_with(|| vec![E::zero(); g.len()]);
        for (s, &v) in slot.iter_mut().zip(g) {
            *s += v;
        }
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Error if any element is NaN or infinite.
    pub fn validate_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i} of shape {:?}",
                self.values[i], self.shape
            ))),
        }
    }

    /// Largest absolute element difference, for test tolerances.
    pub fn max_abs_diff(&self, other: &Tensor<E>) -> f64 {
        assert_eq!(self.shape, other.shape, "comparing tensors of different shapes");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs().to_f64())
            .fold(0.0, f64::max)
    }

    /// Convert elementwise to another scalar type.
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| F::from_f64(v.to_f64())).collect(),
            grad: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_shape_against_data() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn grad_slot_accumulates() {
        let mut t = Tensor::<f64>::zeros(vec![3]);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn validate_finite_flags_nan_and_inf() {
        let mut t = Tensor::<f32>::zeros(vec![4]);
        assert!(t.validate_finite().is_ok());
        t.values_mut()[2] = f32::NAN;
        assert!(t.validate_finite().is_err());
        t.values_mut()[2] = f32::INFINITY;
        assert!(t.validate_finite().is_err());
    }
}
