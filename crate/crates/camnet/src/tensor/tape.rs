//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! A `Tape` borrows the parameter registry read-only and records every
//! forward operation as a node holding its output values. `backward`
//! walks the nodes once in reverse, so gradient cost is a small constant
//! times forward cost. Parameters a loss never touches simply receive no
//! adjoint and report a zero gradient.

use super::kernels::{self, ConvGeom, Padding};
use super::params::{GradStore, ParamId, Parameters};
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to one node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(u32);

struct Node<E> {
    shape: Vec<usize>,
    values: Vec<E>,
    op: Op<E>,
}

struct BlendTerm {
    pred: u32,
    gates: u32,
    idx: usize,
}

enum Op<E> {
    Constant,
    Param(ParamId),
    Affine { x: u32, w: u32, b: u32 },
    Conv2d { x: u32, k: u32, b: u32, geom: ConvGeom, cols: Vec<E> },
    Relu { x: u32 },
    Tanh { x: u32 },
    Softmax { x: u32, d: usize },
    Scale { x: u32, c: f64 },
    Add { a: u32, b: u32 },
    Blend { terms: Vec<BlendTerm> },
    MaxPool2 { x: u32, argmax: Vec<u32> },
    Flatten { x: u32 },
    Upsample2 { x: u32, c: usize, h: usize, w: usize },
    Mse { pred: u32, target: u32 },
    CrossEntropy { pred: u32, target: u32 },
}

/// Additive floor inside `ln` for cross-entropy.
pub const CE_EPSILON: f64 = 1e-12;

pub struct Tape<'p, E: Scalar> {
    params: &'p Parameters<E>,
    nodes: Vec<Node<E>>,
}

impl<'p, E: Scalar> Tape<'p, E> {
    pub fn new(params: &'p Parameters<E>) -> Self {
        Tape { params, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<E>, op: Op<E>) -> Value {
        assert!(self.nodes.len() < u32::MAX as usize, "tape overflow");
        self.nodes.push(Node { shape, values, op });
        Value(self.nodes.len() as u32 - 1)
    }

    fn vals_at(&self, idx: u32) -> &[E] {
        let n = &self.nodes[idx as usize];
        match n.op {
            Op::Param(id) => self.params.values(id),
            _ => &n.values,
        }
    }

    fn elems_at(&self, idx: u32) -> usize {
        self.nodes[idx as usize].shape.iter().product()
    }

    pub fn shape_of(&self, v: Value) -> &[usize] {
        &self.nodes[v.0 as usize].shape
    }

    pub fn values_of(&self, v: Value) -> &[E] {
        self.vals_at(v.0)
    }

    /// Copy a node out as a standalone tensor.
    pub fn tensor_of(&self, v: Value) -> Tensor<E> {
        Tensor::new(self.shape_of(v).to_vec(), self.values_of(v).to_vec())
            .expect("tape node is internally consistent")
    }

    /// Record an input or fixed tensor.
    pub fn constant(&mut self, t: &Tensor<E>) -> Value {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Constant)
    }

    /// Record a parameter leaf. Values are read through the registry, so
    /// large weights are not copied per tape.
    pub fn param(&mut self, id: ParamId) -> Value {
        let shape = self.params.shape(id).to_vec();
        self.push(shape, Vec::new(), Op::Param(id))
    }

    /// `w @ x + b` for `w: [out,in]`, `x: [in]`, `b: [out]`.
    pub fn affine(&mut self, x: Value, w: Value, b: Value) -> Result<Value> {
        let xs = self.shape_of(x).to_vec();
        let ws = self.shape_of(w).to_vec();
        let bs = self.shape_of(b).to_vec();
        if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return Err(Error::Shape(format!(
                "affine wants x:[in] w:[out,in] b:[out], got x:{xs:?} w:{ws:?} b:{bs:?}"
            )));
        }
        let (nout, nin) = (ws[0], ws[1]);
        let xv = self.vals_at(x.0);
        let wv = self.vals_at(w.0);
        let bv = self.vals_at(b.0);
        let mut y = vec![E::zero(); nout];
        for o in 0..nout {
            y[o] = bv[o] + kernels::dot(&wv[o * nin..(o + 1) * nin], xv);
        }
        Ok(self.push(vec![nout], y, Op::Affine { x: x.0, w: w.0, b: b.0 }))
    }

    /// 2-D convolution of `x: [cin,h,w]` with `k: [cout,cin,kh,kw]` and
    /// bias `b: [cout]`.
    pub fn conv2d(
        &mut self,
        x: Value,
        k: Value,
        b: Value,
        stride: usize,
        padding: Padding,
    ) -> Result<Value> {
        let xs = self.shape_of(x).to_vec();
        let ks = self.shape_of(k).to_vec();
        let bs = self.shape_of(b).to_vec();
        if xs.len() != 3 || ks.len() != 4 || bs.len() != 1 {
            return Err(Error::Shape(format!(
                "conv2d wants x:[c,h,w] k:[o,c,kh,kw] b:[o], got x:{xs:?} k:{ks:?} b:{bs:?}"
            )));
        }
        if ks[1] != xs[0] || ks[0] != bs[0] {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: x:{xs:?} k:{ks:?} b:{bs:?}"
            )));
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], ks[0], ks[2], ks[3], stride, padding)?;
        let xv = self.vals_at(x.0);
        let kv = self.vals_at(k.0);
        let bv = self.vals_at(b.0);
        let mut cols = vec![E::zero(); geom.patch() * geom.out_pixels()];
        let mut y = vec![E::zero(); geom.out_len()];
        kernels::conv2d_fwd(xv, kv, bv, &geom, &mut cols, &mut y);
        let shape = vec![geom.cout, geom.hout, geom.wout];
        Ok(self.push(shape, y, Op::Conv2d { x: x.0, k: k.0, b: b.0, geom, cols }))
    }

    pub fn relu(&mut self, x: Value) -> Value {
        let shape = self.shape_of(x).to_vec();
        let y: Vec<E> = self.vals_at(x.0).iter().map(|&v| v.max(E::zero())).collect();
        self.push(shape, y, Op::Relu { x: x.0 })
    }

    pub fn tanh_act(&mut self, x: Value) -> Value {
        let shape = self.shape_of(x).to_vec();
        let y: Vec<E> = self.vals_at(x.0).iter().map(|&v| v.tanh()).collect();
        self.push(shape, y, Op::Tanh { x: x.0 })
    }

    /// Stabilized softmax over the trailing axis.
    pub fn softmax(&mut self, x: Value) -> Value {
        let shape = self.shape_of(x).to_vec();
        let d = *shape.last().expect("nodes have nonempty shapes");
        let xv = self.vals_at(x.0);
        let mut y = vec![E::zero(); xv.len()];
        kernels::softmax_rows(xv, d, &mut y);
        self.push(shape, y, Op::Softmax { x: x.0, d })
    }

    pub fn scale(&mut self, x: Value, c: f64) -> Value {
        let shape = self.shape_of(x).to_vec();
        let ce = E::from_f64(c);
        let y: Vec<E> = self.vals_at(x.0).iter().map(|&v| v * ce).collect();
        self.push(shape, y, Op::Scale { x: x.0, c })
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(Error::Shape(format!(
                "add of mismatched shapes {:?} and {:?}",
                self.shape_of(a),
                self.shape_of(b)
            )));
        }
        let shape = self.shape_of(a).to_vec();
        let y: Vec<E> =
            self.vals_at(a.0).iter().zip(self.vals_at(b.0)).map(|(&p, &q)| p + q).collect();
        Ok(self.push(shape, y, Op::Add { a: a.0, b: b.0 }))
    }

    /// Gate-weighted sum `sum_t gates_t[idx_t] * pred_t`.
    ///
    /// Each term scales a prediction tensor by one entry of a gate vector
    /// node; gradients flow into both the predictions and the gates.
    pub fn blend(&mut self, terms: &[(Value, Value, usize)]) -> Result<Value> {
        let Some(&(first, _, _)) = terms.first() else {
            return Err(Error::Shape("blend of zero terms".into()));
        };
        let shape = self.shape_of(first).to_vec();
        for &(pred, gates, idx) in terms {
            if self.shape_of(pred) != shape {
                return Err(Error::Shape(format!(
                    "blend terms disagree on shape: {:?} vs {shape:?}",
                    self.shape_of(pred)
                )));
            }
            if idx >= self.elems_at(gates.0) {
                return Err(Error::Shape(format!(
                    "blend gate index {idx} out of range for gate vector of {}",
                    self.elems_at(gates.0)
                )));
            }
        }
        let mut y = vec![E::zero(); shape.iter().product()];
        for &(pred, gates, idx) in terms {
            let gv = self.vals_at(gates.0)[idx];
            kernels::axpy(&mut y, gv, self.vals_at(pred.0));
        }
        let terms =
            terms.iter().map(|&(p, g, idx)| BlendTerm { pred: p.0, gates: g.0, idx }).collect();
        Ok(self.push(shape, y, Op::Blend { terms }))
    }

    /// 2x2 max pool, stride 2, floor on odd extents.
    pub fn maxpool2(&mut self, x: Value) -> Result<Value> {
        let xs = self.shape_of(x).to_vec();
        if xs.len() != 3 || xs[1] < 2 || xs[2] < 2 {
            return Err(Error::Shape(format!("maxpool2 wants [c,h,w] with h,w >= 2, got {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (h2, w2) = (h / 2, w / 2);
        let mut y = vec![E::zero(); c * h2 * w2];
        let mut argmax = Vec::new();
        kernels::maxpool2_fwd(self.vals_at(x.0), c, h, w, &mut y, &mut argmax);
        Ok(self.push(vec![c, h2, w2], y, Op::MaxPool2 { x: x.0, argmax }))
    }

    /// Collapse to rank 1, keeping the data order.
    pub fn flatten(&mut self, x: Value) -> Value {
        let n = self.elems_at(x.0);
        let y = self.vals_at(x.0).to_vec();
        self.push(vec![n], y, Op::Flatten { x: x.0 })
    }

    /// Nearest-neighbor upsample by 2 in both spatial axes.
    pub fn upsample2(&mut self, x: Value) -> Result<Value> {
        let xs = self.shape_of(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::Shape(format!("upsample2 wants [c,h,w], got {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let xv = self.vals_at(x.0);
        let mut y = vec![E::zero(); c * 4 * h * w];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = xv[(ch * h + i) * w + j];
                    let base = (ch * 2 * h + 2 * i) * 2 * w + 2 * j;
                    y[base] = v;
                    y[base + 1] = v;
                    y[base + 2 * w] = v;
                    y[base + 2 * w + 1] = v;
                }
            }
        }
        Ok(self.push(vec![c, 2 * h, 2 * w], y, Op::Upsample2 { x: x.0, c, h, w }))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Value, target: Value) -> Result<Value> {
        if self.shape_of(pred) != self.shape_of(target) {
            return Err(Error::Shape(format!(
                "mse of mismatched shapes {:?} and {:?}",
                self.shape_of(pred),
                self.shape_of(target)
            )));
        }
        let n = self.elems_at(pred.0);
        let mut acc = E::zero();
        for (&p, &t) in self.vals_at(pred.0).iter().zip(self.vals_at(target.0)) {
            let d = p - t;
            acc += d * d;
        }
        let y = acc / E::from_f64(n as f64);
        Ok(self.push(vec![1], vec![y], Op::Mse { pred: pred.0, target: target.0 }))
    }

    /// Cross-entropy `-sum target * ln(pred + eps)` with `pred` already a
    /// probability vector. Accepts soft targets.
    pub fn cross_entropy(&mut self, pred: Value, target: Value) -> Result<Value> {
        if self.shape_of(pred) != self.shape_of(target) {
            return Err(Error::Shape(format!(
                "cross_entropy of mismatched shapes {:?} and {:?}",
                self.shape_of(pred),
                self.shape_of(target)
            )));
        }
        let eps = E::from_f64(CE_EPSILON);
        let mut acc = E::zero();
        for (&p, &t) in self.vals_at(pred.0).iter().zip(self.vals_at(target.0)) {
            acc -= t * (p + eps).ln();
        }
        Ok(self.push(vec![1], vec![acc], Op::CrossEntropy { pred: pred.0, target: target.0 }))
    }

    /// Reverse pass from a scalar loss. Returns the gradient of the loss
    /// with respect to every registered parameter; parameters the loss
    /// does not reach get zero gradient.
    pub fn backward(&self, loss: Value) -> Result<GradStore<E>> {
        let li = loss.0 as usize;
        if self.elems_at(loss.0) != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape_of(loss)
            )));
        }
        let lv = self.vals_at(loss.0)[0];
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("loss is {lv}")));
        }

        let mut adj: Vec<Option<Vec<E>>> = Vec::with_capacity(li + 1);
        adj.resize_with(li + 1, || None);
        adj[li] = Some(vec![E::one()]);
        let mut grads = GradStore::new(self.params.len());

        fn slot<'a, E: Scalar>(adj: &'a mut [Option<Vec<E>>], idx: u32, len: usize) -> &'a mut [E] {
            adj[idx as usize].get_or_insert_with(|| vec![E::zero(); len])
        }

        for i in (0..=li).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(id) => grads.acc(*id, &g),
                Op::Affine { x, w, b } => {
                    let xv = self.vals_at(*x);
                    let wv = self.vals_at(*w);
                    let (nin, nout) = (xv.len(), g.len());
                    {
                        let dx = slot(&mut adj, *x, nin);
                        for o in 0..nout {
                            kernels::axpy(dx, g[o], &wv[o * nin..(o + 1) * nin]);
                        }
                    }
                    {
                        let dw = slot(&mut adj, *w, nin * nout);
                        for o in 0..nout {
                            kernels::axpy(&mut dw[o * nin..(o + 1) * nin], g[o], xv);
                        }
                    }
                    let db = slot(&mut adj, *b, nout);
                    for (d, &gv) in db.iter_mut().zip(&g) {
                        *d += gv;
                    }
                }
                Op::Conv2d { x, k, b, geom, cols } => {
                    let kv = self.vals_at(*k);
                    let np = geom.out_pixels();
                    let ckk = geom.patch();
                    {
                        let db = slot(&mut adj, *b, geom.cout);
                        for o in 0..geom.cout {
                            let mut s = E::zero();
                            for &v in &g[o * np..(o + 1) * np] {
                                s += v;
                            }
                            db[o] += s;
                        }
                    }
                    {
                        let dk = slot(&mut adj, *k, geom.cout * ckk);
                        kernels::matmul_nt_acc(&g, cols, dk, geom.cout, ckk, np);
                    }
                    let mut kt = vec![E::zero(); ckk * geom.cout];
                    for o in 0..geom.cout {
                        for r in 0..ckk {
                            kt[r * geom.cout + o] = kv[o * ckk + r];
                        }
                    }
                    let mut dcols = vec![E::zero(); ckk * np];
                    kernels::matmul_acc(&kt, &g, &mut dcols, ckk, geom.cout, np);
                    let dx = slot(&mut adj, *x, geom.cin * geom.h * geom.w);
                    kernels::col2im_acc(&dcols, geom, dx);
                }
                Op::Relu { x } => {
                    let y = &self.nodes[i].values;
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, &gv), &yv) in dx.iter_mut().zip(&g).zip(y) {
                        if yv > E::zero() {
                            *d += gv;
                        }
                    }
                }
                Op::Tanh { x } => {
                    let y = &self.nodes[i].values;
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, &gv), &yv) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gv * (E::one() - yv * yv);
                    }
                }
                Op::Softmax { x, d } => {
                    let y = &self.nodes[i].values;
                    let dx = slot(&mut adj, *x, g.len());
                    for ((dr, gr), yr) in
                        dx.chunks_exact_mut(*d).zip(g.chunks_exact(*d)).zip(y.chunks_exact(*d))
                    {
                        let s = kernels::dot(gr, yr);
                        for ((dv, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *dv += yv * (gv - s);
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let ce = E::from_f64(*c);
                    let dx = slot(&mut adj, *x, g.len());
                    kernels::axpy(dx, ce, &g);
                }
                Op::Add { a, b } => {
                    {
                        let da = slot(&mut adj, *a, g.len());
                        for (d, &gv) in da.iter_mut().zip(&g) {
                            *d += gv;
                        }
                    }
                    let db = slot(&mut adj, *b, g.len());
                    for (d, &gv) in db.iter_mut().zip(&g) {
                        *d += gv;
                    }
                }
                Op::Blend { terms } => {
                    for t in terms {
                        let gv = self.vals_at(t.gates)[t.idx];
                        {
                            let dp = slot(&mut adj, t.pred, g.len());
                            kernels::axpy(dp, gv, &g);
                        }
                        let contrib = kernels::dot(&g, self.vals_at(t.pred));
                        let glen = self.elems_at(t.gates);
                        let dg = slot(&mut adj, t.gates, glen);
                        dg[t.idx] += contrib;
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let dx = slot(&mut adj, *x, self.elems_at(*x));
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        dx[src as usize] += gv;
                    }
                }
                Op::Flatten { x } => {
                    let dx = slot(&mut adj, *x, g.len());
                    for (d, &gv) in dx.iter_mut().zip(&g) {
                        *d += gv;
                    }
                }
                Op::Upsample2 { x, c, h, w } => {
                    let dx = slot(&mut adj, *x, c * h * w);
                    for ch in 0..*c {
                        for i in 0..*h {
                            for j in 0..*w {
                                let base = (ch * 2 * h + 2 * i) * 2 * w + 2 * j;
                                dx[(ch * h + i) * w + j] +=
                                    g[base] + g[base + 1] + g[base + 2 * w] + g[base + 2 * w + 1];
                            }
                        }
                    }
                }
                Op::Mse { pred, target } => {
                    let pv = self.vals_at(*pred);
                    let tv = self.vals_at(*target);
                    let n = E::from_f64(pv.len() as f64);
                    let two = E::from_f64(2.0);
                    let g0 = g[0];
                    {
                        let dp = slot(&mut adj, *pred, pv.len());
                        for ((d, &p), &t) in dp.iter_mut().zip(pv).zip(tv) {
                            *d += g0 * two * (p - t) / n;
                        }
                    }
                    let dt = slot(&mut adj, *target, pv.len());
                    for ((d, &p), &t) in dt.iter_mut().zip(pv).zip(tv) {
                        *d -= g0 * two * (p - t) / n;
                    }
                }
                Op::CrossEntropy { pred, target } => {
                    let pv = self.vals_at(*pred);
                    let tv = self.vals_at(*target);
                    let eps = E::from_f64(CE_EPSILON);
                    let g0 = g[0];
                    {
                        let dp = slot(&mut adj, *pred, pv.len());
                        for ((d, &p), &t) in dp.iter_mut().zip(pv).zip(tv) {
                            *d -= g0 * t / (p + eps);
                        }
                    }
                    let dt = slot(&mut adj, *target, pv.len());
                    for ((d, &p), _) in dt.iter_mut().zip(pv).zip(tv) {
                        *d -= g0 * (p + eps).ln();
                    }
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn tensor(shape: Vec<usize>, name: &str) -> Tensor<f64> {
        let mut r = stream(7, name, &[]);
        Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn affine_matches_triple_loop() {
        let params = Parameters::<f64>::new();
        let mut tape = Tape::new(&params);
        let x = tensor(vec![13], "aff-x");
        let w = tensor(vec![5, 13], "aff-w");
        let b = tensor(vec![5], "aff-b");
        let xv = tape.constant(&x);
        let wv = tape.constant(&w);
        let bv = tape.constant(&b);
        let y = tape.affine(xv, wv, bv).unwrap();

        for o in 0..5 {
            let mut expect = b.values()[o];
            for i in 0..13 {
                expect += w.values()[o * 13 + i] * x.values()[i];
            }
            let got = tape.values_of(y)[o];
            assert!((got - expect).abs() < 1e-12, "row {o}: {got} vs {expect}");
        }
    }

    #[test]
    fn cross_entropy_of_uniform_is_ln_classes() {
        let params = Parameters::<f64>::new();
        let mut tape = Tape::new(&params);
        let probs = tape.constant(&Tensor::filled(vec![10], 0.1));
        let mut one_hot = Tensor::zeros(vec![10]);
        one_hot.values_mut()[3] = 1.0;
        let target = tape.constant(&one_hot);
        let loss = tape.cross_entropy(probs, target).unwrap();
        let got = tape.values_of(loss)[0];
        assert!((got - 10.0f64.ln()).abs() < 1e-9, "{got}");
    }

    #[test]
    fn softmax_shift_invariance() {
        let params = Parameters::<f64>::new();
        let logits = tensor(vec![9], "shift");
        let shifted = Tensor::new(
            vec![9],
            logits.values().iter().map(|v| v + 123.456).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut tape = Tape::new(&params);
        let a = tape.constant(&logits);
        let b = tape.constant(&shifted);
        let sa = tape.softmax(a);
        let sb = tape.softmax(b);
        for (x, y) in tape.values_of(sa).iter().zip(tape.values_of(sb)) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn blend_weighs_predictions_by_gate_entries() {
        let params = Parameters::<f64>::new();
        let mut tape = Tape::new(&params);
        let t11 = tape.constant(&Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let t21 = tape.constant(&Tensor::new(vec![2], vec![0.0, 2.0]).unwrap());
        let g1 = tape.constant(&Tensor::new(vec![1], vec![0.25]).unwrap());
        let g2 = tape.constant(&Tensor::new(vec![1], vec![0.75]).unwrap());
        let sum = tape.blend(&[(t11, g1, 0), (t21, g2, 0)]).unwrap();
        let out = tape.relu(sum);
        assert_eq!(tape.values_of(out), &[0.25, 1.5]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut params = Parameters::<f64>::new();
        let x = params
            .add(
                "x",
                Tensor::new(vec![1, 2, 2], vec![1.0, 5.0, 2.0, 3.0]).unwrap(),
            )
            .unwrap();
        let mut tape = Tape::new(&params);
        let xv = tape.param(x);
        let pooled = tape.maxpool2(xv).unwrap();
        let flat = tape.flatten(pooled);
        let target = tape.constant(&Tensor::zeros(vec![1]));
        let loss = tape.mse(flat, target).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        assert_eq!(gx[0], 0.0);
        assert!((gx[1] - 10.0).abs() < 1e-12);
        assert_eq!(&gx[2..], &[0.0, 0.0]);
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let params = Parameters::<f64>::new();
        let mut tape = Tape::new(&params);
        let x = tensor(vec![2, 3, 4], "ups");
        let xv = tape.constant(&x);
        let up = tape.upsample2(xv).unwrap();
        assert_eq!(tape.shape_of(up), &[2, 6, 8]);
        let down = tape.maxpool2(up).unwrap();
        assert_eq!(tape.values_of(down), x.values());
    }

    #[test]
    fn unreachable_parameters_get_zero_gradient() {
        let mut params = Parameters::<f64>::new();
        let used = params.add("used", Tensor::filled(vec![1], 2.0)).unwrap();
        let unused = params.add("unused", Tensor::filled(vec![1], 3.0)).unwrap();
        let mut tape = Tape::new(&params);
        let u = tape.param(used);
        let _lonely = tape.param(unused);
        let target = tape.constant(&Tensor::zeros(vec![1]));
        let loss = tape.mse(u, target).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(used).is_some());
        assert!(grads.get(unused).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_and_non_finite() {
        let params = Parameters::<f64>::new();
        let mut tape = Tape::new(&params);
        let v = tape.constant(&Tensor::zeros(vec![3]));
        assert!(tape.backward(v).is_err());
        let bad = tape.constant(&Tensor::scalar(f64::NAN));
        assert!(tape.backward(bad).is_err());
    }

    #[test]
    fn conv_same_padding_matches_quadruple_loop_through_tape() {
        let params = Parameters::<f64>::new();
        let mut tape = Tape::new(&params);
        let x = tensor(vec![2, 6, 6], "tconv-x");
        let k = tensor(vec![3, 2, 3, 3], "tconv-k");
        let b = tensor(vec![3], "tconv-b");
        let xv = tape.constant(&x);
        let kv = tape.constant(&k);
        let bv = tape.constant(&b);
        let y = tape.conv2d(xv, kv, bv, 1, Padding::Same).unwrap();
        assert_eq!(tape.shape_of(y), &[3, 6, 6]);

        for o in 0..3 {
            for oh in 0..6usize {
                for ow in 0..6usize {
                    let mut acc = b.values()[o];
                    for c in 0..2 {
                        for ki in 0..3usize {
                            for kj in 0..3usize {
                                let ih = oh as isize + ki as isize - 1;
                                let iw = ow as isize + kj as isize - 1;
                                if ih < 0 || ih >= 6 || iw < 0 || iw >= 6 {
                                    continue;
                                }
                                acc += x.values()[(c * 6 + ih as usize) * 6 + iw as usize]
                                    * k.values()[((o * 2 + c) * 3 + ki) * 3 + kj];
                            }
                        }
                    }
                    let got = tape.values_of(y)[(o * 6 + oh) * 6 + ow];
                    assert!((got - acc).abs() < 1e-10);
                }
            }
        }
    }
}
