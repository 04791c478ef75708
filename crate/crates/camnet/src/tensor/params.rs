use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to one tensor in a [`Parameters`] registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    pub(crate) fn index(self) -> usize {
        self.0 as usize
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct Parameter<E> {
    pub name: String,
    pub trainable: bool,
    pub tensor: Tensor<E>,
}

/// Registry of all parameters of a model, with unique names.
///
/// Names are hierarchical (`layer3.pred.w_2_1`, `head0.layer9.gate.b_1`)
/// and are the stable identity used by checkpoints and histograms.
#[derive(Debug, Clone, Default)]
pub struct Parameters<E> {
    items: Vec<Parameter<E>>,
}

impl<E: Scalar> Parameters<E> {
    pub fn new() -> Self {
        Parameters { items: Vec::new() }
    }

    /// Register a tensor under a unique name. Parameters start trainable.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<E>) -> Result<ParamId> {
        let name = name.into();
        if self.items.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        if self.items.len() > u32::MAX as usize - 1 {
            return Err(Error::Config("too many parameters".into()));
        }
        self.items.push(Parameter { name, trainable: true, tensor });
        Ok(ParamId(self.items.len() as u32 - 1))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn total_scalars(&self) -> usize {
        self.items.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<E> {
        &self.items[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<E> {
        &mut self.items[id.index()]
    }

    pub fn values(&self, id: ParamId) -> &[E] {
        self.items[id.index()].tensor.values()
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        self.items[id.index()].tensor.shape()
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.items.iter().position(|p| p.name == name).map(|i| ParamId(i as u32))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.items.len() as u32).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<E>)> {
        self.items.iter().enumerate().map(|(i, p)| (ParamId(i as u32), p))
    }

    /// Flip trainability for every parameter whose name satisfies `pred`.
    /// Returns how many parameters matched.
    pub fn set_trainable_where(&mut self, pred: impl Fn(&str) -> bool, trainable: bool) -> usize {
        let mut hits = 0;
        for p in &mut self.items {
            if pred(&p.name) {
                p.trainable = trainable;
                hits += 1;
            }
        }
        hits
    }

    /// Add a gradient store into the parameter gradient slots.
    pub fn accumulate(&mut self, grads: &GradStore<E>) -> Result<()> {
        if grads.slots.len() != self.items.len() {
            return Err(Error::Shape(format!(
                "gradient store over {} parameters applied to registry of {}",
                grads.slots.len(),
                self.items.len()
            )));
        }
        for (p, slot) in self.items.iter_mut().zip(&grads.slots) {
            if !slot.is_empty() {
                p.tensor.accumulate_grad(slot)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.tensor.clear_grad();
        }
    }

    /// Error if any parameter holds a non-finite value.
    pub fn validate_finite(&self) -> Result<()> {
        for p in &self.items {
            p.tensor
                .validate_finite()
                .map_err(|e| Error::Numeric(format!("parameter {}: {e}", p.name)))?;
        }
        Ok(())
    }

    /// Snapshot of all values, for best-checkpoint tracking.
    pub fn snapshot(&self) -> Vec<Vec<E>> {
        self.items.iter().map(|p| p.tensor.values().to_vec()).collect()
    }

    /// Restore a snapshot taken from this same registry.
    pub fn restore(&mut self, snap: &[Vec<E>]) -> Result<()> {
        if snap.len() != self.items.len() {
            return Err(Error::Shape("snapshot does not match parameter registry".into()));
        }
        for (p, vals) in self.items.iter_mut().zip(snap) {
            if vals.len() != p.tensor.len() {
                return Err(Error::Shape(format!("snapshot mismatch for parameter {}", p.name)));
            }
            p.tensor.values_mut().copy_from_slice(vals);
        }
        Ok(())
    }
}

/// Per-parameter gradients from one backward pass, indexed like the
/// registry that produced them. An empty slot means zero gradient, which
/// is what unreachable parameters get.
#[derive(Debug, Clone)]
pub struct GradStore<E> {
    slots: Vec<Vec<E>>,
}

impl<E: Scalar> GradStore<E> {
    pub(crate) fn new(params: usize) -> Self {
        GradStore { slots: vec![Vec::new(); params] }
    }

    /// An all-zero store shaped for `params`, ready to merge into.
    pub fn zeros(params: &Parameters<E>) -> Self {
        GradStore::new(params.len())
    }

    /// Multiply every gradient by `factor`.
    pub fn scale(&mut self, factor: E) {
        for slot in &mut self.slots {
            for v in slot {
                *v *= factor;
            }
        }
    }

    pub(crate) fn acc(&mut self, id: ParamId, g: &[E]) {
        let slot = &mut self.slots[id.index()];
        if slot.is_empty() {
            slot.resize(g.len(), E::zero());
        }
        for (s, &v) in slot.iter_mut().zip(g) {
            *s += v;
        }
    }

    /// Gradient for one parameter; `None` when it never received one.
    pub fn get(&self, id: ParamId) -> Option<&[E]> {
        let slot = &self.slots[id.index()];
        if slot.is_empty() {
            None
        } else {
            Some(slot)
        }
    }

    /// Merge another store into this one (sum of gradients).
    pub fn merge(&mut self, other: &GradStore<E>) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if src.is_empty() {
                continue;
            }
            if dst.is_empty() {
                dst.resize(src.len(), E::zero());
            }
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_looked_up() {
        let mut ps = Parameters::<f64>::new();
        let a = ps.add("layer1.w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(ps.add("layer1.w", Tensor::zeros(vec![2])).is_err());
        let b = ps.add("layer1.b", Tensor::zeros(vec![2])).unwrap();
        assert_eq!(ps.id_by_name("layer1.w"), Some(a));
        assert_eq!(ps.id_by_name("layer1.b"), Some(b));
        assert_eq!(ps.id_by_name("nope"), None);
        assert_eq!(ps.total_scalars(), 6);
    }

    #[test]
    fn trainable_flags_by_predicate() {
        let mut ps = Parameters::<f64>::new();
        ps.add("head0.w", Tensor::zeros(vec![2])).unwrap();
        ps.add("head1.w", Tensor::zeros(vec![2])).unwrap();
        let hits = ps.set_trainable_where(|n| n.starts_with("head0."), false);
        assert_eq!(hits, 1);
        assert!(!ps.get(ps.id_by_name("head0.w").unwrap()).trainable);
        assert!(ps.get(ps.id_by_name("head1.w").unwrap()).trainable);
    }

    #[test]
    fn grad_store_merges_in_place() {
        let mut ps = Parameters::<f64>::new();
        let a = ps.add("a", Tensor::zeros(vec![2])).unwrap();
        let b = ps.add("b", Tensor::zeros(vec![1])).unwrap();
        let mut g1 = GradStore::new(2);
        g1.acc(a, &[1.0, 2.0]);
        let mut g2 = GradStore::new(2);
        g2.acc(a, &[0.5, 0.5]);
        g2.acc(b, &[3.0]);
        g1.merge(&g2);
        assert_eq!(g1.get(a).unwrap(), &[1.5, 2.5]);
        assert_eq!(g1.get(b).unwrap(), &[3.0]);
        ps.accumulate(&g1).unwrap();
        ps.accumulate(&g1).unwrap();
        assert_eq!(ps.get(a).tensor.grad().unwrap(), &[3.0, 5.0]);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut ps = Parameters::<f32>::new();
        let id = ps.add("w", Tensor::filled(vec![3], 1.5)).unwrap();
        let snap = ps.snapshot();
        ps.get_mut(id).tensor.values_mut()[0] = 9.0;
        ps.restore(&snap).unwrap();
        assert_eq!(ps.values(id), &[1.5, 1.5, 1.5]);
    }
}
