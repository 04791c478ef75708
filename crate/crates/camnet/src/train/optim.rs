//! Gradient descent optimizers.
//!
//! Both optimizers keep per-parameter state indexed like the registry
//! and update only trainable parameters that actually received a
//! gradient, so frozen layers and unused heads hold still.

use crate::tensor::{GradStore, Parameters, Scalar};

/// Optimizer choice by name, for configs and command lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptKind {
    Adam,
    Sgd { momentum: f64 },
}

/// One optimizer behind a common update call.
#[derive(Debug)]
pub enum Optimizer<E: Scalar> {
    Adam(Adam<E>),
    Sgd(Sgd<E>),
}

impl<E: Scalar> Optimizer<E> {
    pub fn new(kind: OptKind, lr: f64) -> Self {
        match kind {
            OptKind::Adam => Optimizer::Adam(Adam::new(lr)),
            OptKind::Sgd { momentum } => Optimizer::Sgd(Sgd::new(lr, momentum)),
        }
    }

    pub fn step(&mut self, params: &mut Parameters<E>, grads: &GradStore<E>) {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }
}

/// Adam with the usual defaults: beta 0.9 and 0.999, epsilon 1e-8.
#[derive(Debug)]
pub struct Adam<E> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Scalar> Adam<E> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut Parameters<E>, grads: &GradStore<E>) {
        self.t += 1;
        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let one_less_b1 = E::from_f64(1.0 - self.beta1);
        let one_less_b2 = E::from_f64(1.0 - self.beta2);
        let corr1 = E::from_f64(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let corr2 = E::from_f64(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr = E::from_f64(self.lr);
        let eps = E::from_f64(self.eps);
        if self.m.len() < params.len() {
            self.m.resize(params.len(), Vec::new());
            self.v.resize(params.len(), Vec::new());
        }
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            if !p.trainable {
                continue;
            }
            let slot = id.index();
            if self.m[slot].is_empty() {
                self.m[slot] = vec![E::zero(); g.len()];
                self.v[slot] = vec![E::zero(); g.len()];
            }
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for ((w, &gi), (mi, vi)) in
                p.tensor.values_mut().iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + one_less_b1 * gi;
                *vi = b2 * *vi + one_less_b2 * gi * gi;
                let m_hat = *mi * corr1;
                let v_hat = *vi * corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Stochastic gradient descent with classical momentum.
#[derive(Debug)]
pub struct Sgd<E> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<E>>,
}

impl<E: Scalar> Sgd<E> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &mut Parameters<E>, grads: &GradStore<E>) {
        let mu = E::from_f64(self.momentum);
        let lr = E::from_f64(self.lr);
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), Vec::new());
        }
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            if !p.trainable {
                continue;
            }
            let slot = id.index();
            if self.velocity[slot].is_empty() {
                self.velocity[slot] = vec![E::zero(); g.len()];
            }
            for ((w, &gi), vi) in
                p.tensor.values_mut().iter_mut().zip(g).zip(self.velocity[slot].iter_mut())
            {
                *vi = mu * *vi + gi;
                *w -= lr * *vi;
            }
        }
    }
}
