//! Routing layers over parallel tensors.
//!
//! A routing layer connects `m` source tensors to `n` downstream tensors.
//! It predicts one candidate for every (source, destination) pair with a
//! pair-specific convolution or dense map, scores each source's
//! predictions with a data-dependent gate row (softmax over the `n`
//! destinations), and builds every destination as the gate-weighted sum
//! of its candidates, followed by the layer activation:
//!
//! ```text
//! t_ij = W_ij * T_i + b_ij
//! G_i  = softmax(W_Gi * reduce(T_i) + b_Gi)
//! T'_j = f(sum_i g_ij * t_ij)
//! ```
//!
//! For spatial sources the gate input is first reduced to one channel by
//! a learned 1x1 convolution, then flattened; dense sources feed the gate
//! map directly. Gate weights and biases start at zero so routing begins
//! uniform, while the 1x1 reduction starts at a He-scaled random draw so
//! gate gradients are alive from the first step.
//!
//! `GateMode::FrozenParallel` replaces learned gates with fixed one-hot
//! (or averaging) coefficients and keeps only the matching predictions,
//! which turns a width-`n` network into `n` disjoint conventional nets.

use crate::tensor::{Padding, ParamId, Parameters, Scalar, Tape, Tensor, Value};
use crate::{Error, Result};
use rand::Rng;
use serde::Serialize;

/// Nonlinearity applied to constructed tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Softmax,
    Identity,
}

impl Activation {
    pub(crate) fn apply<E: Scalar>(self, tape: &mut Tape<'_, E>, v: Value) -> Value {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh_act(v),
            Activation::Softmax => tape.softmax(v),
            Activation::Identity => v,
        }
    }
}

/// Shape family of a routing layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutingKind {
    /// 3x3 convolutions between `[cin,h,w]` sources and `[cout,..]`
    /// destinations; `pixels` is `h*w` of one source, which the gate maps
    /// to `n` logits after 1x1 reduction.
    Conv { cin: usize, cout: usize, stride: usize, padding: Padding, pixels: usize },
    /// Dense maps between rank-1 sources and destinations.
    Dense { input: usize, output: usize },
}

/// Whether gates are learned from data or frozen to disjoint wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    Learned,
    FrozenParallel,
}

/// One (source, destination) prediction map.
#[derive(Debug, Clone, Copy)]
struct PredEntry {
    src: usize,
    dst: usize,
    w: ParamId,
    b: ParamId,
}

/// Gate parameters for one source tensor.
#[derive(Debug, Clone, Copy)]
struct GateEntry {
    reduce: Option<(ParamId, ParamId)>,
    w: ParamId,
    b: ParamId,
}

/// A prediction `t_ij` recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub src: usize,
    pub dst: usize,
    pub value: Value,
}

/// Gate coefficients actually used by one layer pass, row per source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateMatrix {
    pub m: usize,
    pub n: usize,
    values: Vec<f64>,
}

impl GateMatrix {
    pub(crate) fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        GateMatrix { m, n, values: rows.into_iter().flatten().collect() }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n)
    }

    /// Mean over rows of the L1 distance between corresponding rows.
    pub fn l1_row_distance(&self, other: &GateMatrix) -> Result<f64> {
        if self.m != other.m || self.n != other.n {
            return Err(Error::Shape(format!(
                "gate matrices {}x{} vs {}x{}",
                self.m, self.n, other.m, other.n
            )));
        }
        let total: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(total / self.m as f64)
    }

    /// Elementwise mean of several same-shaped matrices.
    pub fn mean(mats: &[GateMatrix]) -> Result<GateMatrix> {
        let Some(first) = mats.first() else {
            return Err(Error::Data("mean of zero gate matrices".into()));
        };
        let mut acc = vec![0.0; first.values.len()];
        for m in mats {
            if m.m != first.m || m.n != first.n {
                return Err(Error::Shape("gate matrices of mixed shapes".into()));
            }
            for (a, v) in acc.iter_mut().zip(&m.values) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= mats.len() as f64;
        }
        Ok(GateMatrix { m: first.m, n: first.n, values: acc })
    }
}

/// Output of one routing layer pass.
#[derive(Debug, Clone)]
pub struct RoutingOutput {
    /// The `n` constructed, activated tensors.
    pub outputs: Vec<Value>,
    /// The same tensors before the activation (used for temperature
    /// softmax over classifier logits).
    pub pre_activation: Vec<Value>,
    /// Gate coefficients used, one row per source.
    pub gates: GateMatrix,
}

/// Routing layer parameters and wiring. The struct holds parameter
/// handles only; values live in the model's [`Parameters`] registry.
#[derive(Debug, Clone)]
pub struct RoutingLayer {
    name: String,
    m: usize,
    n: usize,
    kind: RoutingKind,
    activation: Activation,
    mode: GateMode,
    preds: Vec<PredEntry>,
    gates: Vec<GateEntry>,
}

impl RoutingLayer {
    /// Build a convolutional routing layer between `m` sources of shape
    /// `[cin, h, w]` (with `pixels = h * w`) and `n` destinations with
    /// `cout` channels, registering parameters under `name`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv<E: Scalar>(
        params: &mut Parameters<E>,
        rng: &mut impl Rng,
        name: impl Into<String>,
        m: usize,
        n: usize,
        cin: usize,
        cout: usize,
        pixels: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
        mode: GateMode,
    ) -> Result<Self> {
        let kind = RoutingKind::Conv { cin, cout, stride, padding, pixels };
        Self::build(params, rng, name.into(), m, n, kind, activation, mode)
    }

    /// Build a dense routing layer between `m` sources of length `input`
    /// and `n` destinations of length `output`.
    pub fn dense<E: Scalar>(
        params: &mut Parameters<E>,
        rng: &mut impl Rng,
        name: impl Into<String>,
        m: usize,
        n: usize,
        input: usize,
        output: usize,
        activation: Activation,
        mode: GateMode,
    ) -> Result<Self> {
        let kind = RoutingKind::Dense { input, output };
        Self::build(params, rng, name.into(), m, n, kind, activation, mode)
    }

    fn build<E: Scalar>(
        params: &mut Parameters<E>,
        rng: &mut impl Rng,
        name: String,
        m: usize,
        n: usize,
        kind: RoutingKind,
        activation: Activation,
        mode: GateMode,
    ) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Config(format!("routing layer {name} with m={m}, n={n}")));
        }
        let mut layer =
            RoutingLayer { name, m, n, kind, activation, mode, preds: Vec::new(), gates: Vec::new() };
        match mode {
            GateMode::Learned => {
                for src in 0..m {
                    for dst in 0..n {
                        layer.add_pred(params, rng, src, dst)?;
                    }
                }
                for src in 0..m {
                    layer.add_gate(params, rng, src)?;
                }
            }
            GateMode::FrozenParallel => {
                if m != 1 && n != 1 && m != n {
                    return Err(Error::Config(format!(
                        "frozen routing layer {} must expand from one, stay square, or contract to one; got m={m}, n={n}",
                        layer.name
                    )));
                }
                for src in 0..m {
                    for dst in 0..n {
                        let keep = m == 1 || n == 1 || src == dst;
                        if keep {
                            layer.add_pred(params, rng, src, dst)?;
                        }
                    }
                }
            }
        }
        Ok(layer)
    }

    fn add_pred<E: Scalar>(
        &mut self,
        params: &mut Parameters<E>,
        rng: &mut impl Rng,
        src: usize,
        dst: usize,
    ) -> Result<()> {
        let (w_shape, b_shape, fan_in) = match self.kind {
            RoutingKind::Conv { cin, cout, .. } => {
                (vec![cout, cin, 3, 3], vec![cout], cin * 9)
            }
            RoutingKind::Dense { input, output } => (vec![output, input], vec![output], input),
        };
        let limit = (6.0 / fan_in as f64).sqrt();
        let w = params.add(
            format!("{}.pred.w_{}_{}", self.name, src + 1, dst + 1),
            Tensor::rand_uniform(w_shape, -limit, limit, rng),
        )?;
        let b = params.add(
            format!("{}.pred.b_{}_{}", self.name, src + 1, dst + 1),
            Tensor::zeros(b_shape),
        )?;
        self.preds.push(PredEntry { src, dst, w, b });
        Ok(())
    }

    fn add_gate<E: Scalar>(
        &mut self,
        params: &mut Parameters<E>,
        rng: &mut impl Rng,
        src: usize,
    ) -> Result<()> {
        let (reduce, gate_in) = match self.kind {
            RoutingKind::Conv { cin, pixels, .. } => {
                let limit = (6.0 / cin as f64).sqrt();
                let rw = params.add(
                    format!("{}.gate.reduce_w_{}", self.name, src + 1),
                    Tensor::rand_uniform(vec![1, cin, 1, 1], -limit, limit, rng),
                )?;
                let rb = params
                    .add(format!("{}.gate.reduce_b_{}", self.name, src + 1), Tensor::zeros(vec![1]))?;
                (Some((rw, rb)), pixels)
            }
            RoutingKind::Dense { input, .. } => (None, input),
        };
        let w = params.add(
            format!("{}.gate.w_{}", self.name, src + 1),
            Tensor::zeros(vec![self.n, gate_in]),
        )?;
        let b = params.add(format!("{}.gate.b_{}", self.name, src + 1), Tensor::zeros(vec![self.n]))?;
        self.gates.push(GateEntry { reduce, w, b });
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sources(&self) -> usize {
        self.m
    }

    pub fn destinations(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> RoutingKind {
        self.kind
    }

    pub fn mode(&self) -> GateMode {
        self.mode
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn check_inputs<E: Scalar>(&self, tape: &Tape<'_, E>, inputs: &[Value]) -> Result<()> {
        if inputs.len() != self.m {
            return Err(Error::Shape(format!(
                "layer {} wants {} source tensors, got {}",
                self.name,
                self.m,
                inputs.len()
            )));
        }
        for &v in inputs {
            let shape = tape.shape_of(v);
            match self.kind {
                RoutingKind::Conv { cin, pixels, .. } => {
                    if shape.len() != 3 || shape[0] != cin || shape[1] * shape[2] != pixels {
                        return Err(Error::Shape(format!(
                            "layer {} wants sources [{}, h, w] with h*w = {}, got {shape:?}",
                            self.name, cin, pixels
                        )));
                    }
                }
                RoutingKind::Dense { input, .. } => {
                    if shape.len() != 1 || shape[0] != input {
                        return Err(Error::Shape(format!(
                            "layer {} wants sources [{}], got {shape:?}",
                            self.name, input
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Predict one candidate tensor per stored (source, destination) pair.
    pub fn predict<E: Scalar>(
        &self,
        tape: &mut Tape<'_, E>,
        inputs: &[Value],
    ) -> Result<Vec<Prediction>> {
        self.check_inputs(tape, inputs)?;
        let mut out = Vec::with_capacity(self.preds.len());
        for e in &self.preds {
            let w = tape.param(e.w);
            let b = tape.param(e.b);
            let value = match self.kind {
                RoutingKind::Conv { stride, padding, .. } => {
                    tape.conv2d(inputs[e.src], w, b, stride, padding)?
                }
                RoutingKind::Dense { .. } => tape.affine(inputs[e.src], w, b)?,
            };
            out.push(Prediction { src: e.src, dst: e.dst, value });
        }
        Ok(out)
    }

    /// Compute one gate row per source: learned rows are softmax outputs,
    /// frozen rows are the fixed coefficients.
    pub fn compute_gates<E: Scalar>(
        &self,
        tape: &mut Tape<'_, E>,
        inputs: &[Value],
    ) -> Result<Vec<Value>> {
        self.check_inputs(tape, inputs)?;
        match self.mode {
            GateMode::Learned => {
                let mut rows = Vec::with_capacity(self.m);
                for (src, e) in self.gates.iter().enumerate() {
                    let gate_input = match e.reduce {
                        Some((rw, rb)) => {
                            let rwv = tape.param(rw);
                            let rbv = tape.param(rb);
                            let reduced =
                                tape.conv2d(inputs[src], rwv, rbv, 1, Padding::Same)?;
                            tape.flatten(reduced)
                        }
                        None => inputs[src],
                    };
                    let w = tape.param(e.w);
                    let b = tape.param(e.b);
                    let logits = tape.affine(gate_input, w, b)?;
                    rows.push(tape.softmax(logits));
                }
                Ok(rows)
            }
            GateMode::FrozenParallel => {
                let mut rows = Vec::with_capacity(self.m);
                for src in 0..self.m {
                    let row = self.frozen_row(src);
                    let t = Tensor::new(vec![self.n], row.iter().map(|&v| E::from_f64(v)).collect())?;
                    rows.push(tape.constant(&t));
                }
                Ok(rows)
            }
        }
    }

    fn frozen_row(&self, src: usize) -> Vec<f64> {
        if self.n == 1 {
            vec![1.0 / self.m as f64]
        } else if self.m == 1 {
            vec![1.0; self.n]
        } else {
            let mut row = vec![0.0; self.n];
            row[src] = 1.0;
            row
        }
    }

    /// Build each destination as the gate-weighted sum of its candidates
    /// and apply the activation. Returns `(pre_activation, outputs)`.
    pub fn construct<E: Scalar>(
        &self,
        tape: &mut Tape<'_, E>,
        preds: &[Prediction],
        gate_rows: &[Value],
    ) -> Result<(Vec<Value>, Vec<Value>)> {
        if gate_rows.len() != self.m {
            return Err(Error::Shape(format!(
                "layer {} wants {} gate rows, got {}",
                self.name,
                self.m,
                gate_rows.len()
            )));
        }
        let mut pre = Vec::with_capacity(self.n);
        let mut post = Vec::with_capacity(self.n);
        for dst in 0..self.n {
            let terms: Vec<(Value, Value, usize)> = preds
                .iter()
                .filter(|p| p.dst == dst)
                .map(|p| (p.value, gate_rows[p.src], dst))
                .collect();
            if terms.is_empty() {
                return Err(Error::Shape(format!(
                    "layer {}: destination {} has no predictions",
                    self.name,
                    dst + 1
                )));
            }
            let sum = tape.blend(&terms)?;
            pre.push(sum);
            post.push(self.activation.apply(tape, sum));
        }
        Ok((pre, post))
    }

    /// Full layer pass: predict, gate, construct.
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<'_, E>,
        inputs: &[Value],
    ) -> Result<RoutingOutput> {
        let preds = self.predict(tape, inputs)?;
        let rows = self.compute_gates(tape, inputs)?;
        let matrix = GateMatrix::from_rows(
            rows.iter()
                .map(|&r| tape.values_of(r).iter().map(|&v| Scalar::to_f64(v)).collect())
                .collect(),
        );
        let (pre, post) = self.construct(tape, &preds, &rows)?;
        Ok(RoutingOutput { outputs: post, pre_activation: pre, gates: matrix })
    }

    /// Parameter handles of this layer, in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for e in &self.preds {
            ids.push(e.w);
            ids.push(e.b);
        }
        for e in &self.gates {
            if let Some((rw, rb)) = e.reduce {
                ids.push(rw);
                ids.push(rb);
            }
            ids.push(e.w);
            ids.push(e.b);
        }
        ids
    }
}
