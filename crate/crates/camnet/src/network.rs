//! Whole-network assembly: a trunk of layers feeding one or more
//! classifier heads over a shared parameter registry.
//!
//! Layers carry parallel tensors. Routing layers may change how many run
//! side by side; every other layer applies per tensor. Heads own their
//! trailing layers so new tasks can attach fresh classifiers while the
//! trunk stays shared.

use crate::routing::{Activation, GateMatrix, RoutingLayer, RoutingOutput};
use crate::tensor::{Padding, ParamId, Parameters, Scalar, Tape, Tensor, Value};
use crate::{Error, Result};
use rand::Rng;

/// One layer of a network, operating on a set of parallel tensors.
#[derive(Debug, Clone)]
pub enum LayerNode {
    /// Learned or frozen routing between parallel tensors.
    Routing(RoutingLayer),
    /// Independent 3x3 convolution per parallel tensor.
    ForwardConv {
        name: String,
        paths: Vec<(ParamId, ParamId)>,
        stride: usize,
        padding: Padding,
        activation: Activation,
    },
    /// Independent dense map per parallel tensor.
    ForwardDense {
        name: String,
        paths: Vec<(ParamId, ParamId)>,
        activation: Activation,
    },
    /// 2x2 max pooling, stride 2, per parallel tensor.
    MaxPool2 { name: String },
    /// Flatten each parallel tensor to rank 1.
    Flatten { name: String },
    /// Nearest-neighbour 2x upsampling per parallel tensor.
    Upsample2 { name: String },
}

/// What one layer produced during a pass.
struct NodeOut {
    post: Vec<Value>,
    pre: Vec<Value>,
    gates: Option<GateMatrix>,
}

impl LayerNode {
    /// Register a per-path 3x3 convolution for `width` parallel tensors.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_conv<E: Scalar>(
        params: &mut Parameters<E>,
        rng: &mut impl Rng,
        name: impl Into<String>,
        width: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
    ) -> Result<LayerNode> {
        let name = name.into();
        let limit = (6.0 / (cin * 9) as f64).sqrt();
        let mut paths = Vec::with_capacity(width);
        for p in 0..width {
            let w = params.add(
                format!("{name}.fwd.w_{}", p + 1),
                Tensor::rand_uniform(vec![cout, cin, 3, 3], -limit, limit, rng),
            )?;
            let b = params.add(format!("{name}.fwd.b_{}", p + 1), Tensor::zeros(vec![cout]))?;
            paths.push((w, b));
        }
        Ok(LayerNode::ForwardConv { name, paths, stride, padding, activation })
    }

    /// Register a per-path dense map for `width` parallel tensors.
    pub fn forward_dense<E: Scalar>(
        params: &mut Parameters<E>,
        rng: &mut impl Rng,
        name: impl Into<String>,
        width: usize,
        input: usize,
        output: usize,
        activation: Activation,
    ) -> Result<LayerNode> {
        let name = name.into();
        let limit = (6.0 / input as f64).sqrt();
        let mut paths = Vec::with_capacity(width);
        for p in 0..width {
            let w = params.add(
                format!("{name}.fwd.w_{}", p + 1),
                Tensor::rand_uniform(vec![output, input], -limit, limit, rng),
            )?;
            let b = params.add(format!("{name}.fwd.b_{}", p + 1), Tensor::zeros(vec![output]))?;
            paths.push((w, b));
        }
        Ok(LayerNode::ForwardDense { name, paths, activation })
    }

    pub fn name(&self) -> &str {
        match self {
            LayerNode::Routing(r) => r.name(),
            LayerNode::ForwardConv { name, .. }
            | LayerNode::ForwardDense { name, .. }
            | LayerNode::MaxPool2 { name }
            | LayerNode::Flatten { name }
            | LayerNode::Upsample2 { name } => name,
        }
    }

    /// Parallel tensors coming out, given `width` going in.
    pub fn width_out(&self, width: usize) -> usize {
        match self {
            LayerNode::Routing(r) => r.destinations(),
            _ => width,
        }
    }

    fn check_width(&self, want: usize, got: usize) -> Result<()> {
        if want != got {
            return Err(Error::Shape(format!(
                "layer {} wants {want} parallel tensors, got {got}",
                self.name()
            )));
        }
        Ok(())
    }

    fn apply<E: Scalar>(&self, tape: &mut Tape<'_, E>, inputs: &[Value]) -> Result<NodeOut> {
        match self {
            LayerNode::Routing(r) => {
                let RoutingOutput { outputs, pre_activation, gates } = r.forward(tape, inputs)?;
                Ok(NodeOut { post: outputs, pre: pre_activation, gates: Some(gates) })
            }
            LayerNode::ForwardConv { paths, stride, padding, activation, .. } => {
                self.check_width(paths.len(), inputs.len())?;
                let mut pre = Vec::with_capacity(paths.len());
                let mut post = Vec::with_capacity(paths.len());
                for (&x, &(w, b)) in inputs.iter().zip(paths) {
                    let wv = tape.param(w);
                    let bv = tape.param(b);
                    let s = tape.conv2d(x, wv, bv, *stride, *padding)?;
                    pre.push(s);
                    post.push(activation.apply(tape, s));
                }
                Ok(NodeOut { post, pre, gates: None })
            }
            LayerNode::ForwardDense { paths, activation, .. } => {
                self.check_width(paths.len(), inputs.len())?;
                let mut pre = Vec::with_capacity(paths.len());
                let mut post = Vec::with_capacity(paths.len());
                for (&x, &(w, b)) in inputs.iter().zip(paths) {
                    let wv = tape.param(w);
                    let bv = tape.param(b);
                    let s = tape.affine(x, wv, bv)?;
                    pre.push(s);
                    post.push(activation.apply(tape, s));
                }
                Ok(NodeOut { post, pre, gates: None })
            }
            LayerNode::MaxPool2 { .. } => {
                let post: Result<Vec<Value>> =
                    inputs.iter().map(|&x| tape.maxpool2(x)).collect();
                let post = post?;
                Ok(NodeOut { pre: post.clone(), post, gates: None })
            }
            LayerNode::Flatten { .. } => {
                let post: Vec<Value> = inputs.iter().map(|&x| tape.flatten(x)).collect();
                Ok(NodeOut { pre: post.clone(), post, gates: None })
            }
            LayerNode::Upsample2 { .. } => {
                let post: Result<Vec<Value>> =
                    inputs.iter().map(|&x| tape.upsample2(x)).collect();
                let post = post?;
                Ok(NodeOut { pre: post.clone(), post, gates: None })
            }
        }
    }

    /// Parameter handles owned by this layer.
    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            LayerNode::Routing(r) => r.param_ids(),
            LayerNode::ForwardConv { paths, .. } | LayerNode::ForwardDense { paths, .. } => {
                paths.iter().flat_map(|&(w, b)| [w, b]).collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Drive a node list over a tape, returning the post-activation tensors
/// of the last layer together with its pre-activation tensors. Cloning
/// a model's node lists and driving them here lets callers record the
/// same computation over parameters they hold mutably, which
/// [`forward`](NetworkModel::forward) cannot offer.
pub fn forward_nodes<E: Scalar>(
    tape: &mut Tape<'_, E>,
    nodes: &[LayerNode],
    start: Vec<Value>,
    mut reports: Option<&mut Vec<LayerReport>>,
) -> Result<(Vec<Value>, Vec<Value>)> {
    let mut current = start;
    let mut pre = current.clone();
    for node in nodes {
        let out = node.apply(tape, &current)?;
        if let Some(reports) = reports.as_deref_mut() {
            let strengths = out
                .post
                .iter()
                .map(|&v| {
                    let vals = tape.values_of(v);
                    let sum: f64 = vals.iter().map(|&x| Scalar::to_f64(x).abs()).sum();
                    sum / vals.len() as f64
                })
                .collect();
            reports.push(LayerReport {
                name: node.name().to_string(),
                gates: out.gates,
                strengths,
            });
        }
        pre = out.pre;
        current = out.post;
    }
    Ok((current, pre))
}

/// How a network was put together, enough to rebuild its structure.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMeta {
    /// Architecture description the builder understands.
    pub arch: String,
    /// Input tensor shape, e.g. `[1, 28, 28]`.
    pub input: Vec<usize>,
    /// Output classes (or channels) per head, head 1 first.
    pub head_classes: Vec<usize>,
    /// True when routing runs with frozen disjoint wiring.
    pub frozen: bool,
    /// Seed the parameters were drawn from.
    pub seed: u64,
}

/// Observations from one layer during a traced pass.
#[derive(Debug, Clone)]
pub struct LayerReport {
    pub name: String,
    /// Gate coefficients, for routing layers.
    pub gates: Option<GateMatrix>,
    /// Mean absolute activation per parallel tensor after the layer.
    pub strengths: Vec<f64>,
}

/// Result of a traced pass: logits per requested head plus per-layer
/// observations along the trunk and those heads.
#[derive(Debug, Clone)]
pub struct TracedPass {
    pub logits: Vec<Value>,
    pub reports: Vec<LayerReport>,
}

/// A complete network: shared trunk, one or more heads, and the
/// parameter registry them both.
#[derive(Debug)]
pub struct NetworkModel<E: Scalar> {
    pub params: Parameters<E>,
    trunk: Vec<LayerNode>,
    heads: Vec<Vec<LayerNode>>,
    meta: NetworkMeta,
}

impl<E: Scalar> NetworkModel<E> {
    pub fn from_parts(
        params: Parameters<E>,
        trunk: Vec<LayerNode>,
        head: Vec<LayerNode>,
        meta: NetworkMeta,
    ) -> Self {
        NetworkModel { params, trunk, heads: vec![head], meta }
    }

    pub fn meta(&self) -> &NetworkMeta {
        &self.meta
    }

    pub fn trunk(&self) -> &[LayerNode] {
        &self.trunk
    }

    pub fn heads(&self) -> usize {
        self.heads.len()
    }

    pub fn head_layers(&self, head: usize) -> &[LayerNode] {
        &self.heads[head]
    }

    /// Attach another head; returns its index.
    pub fn push_head(&mut self, nodes: Vec<LayerNode>, classes: usize) -> usize {
        self.heads.push(nodes);
        self.meta.head_classes.push(classes);
        self.heads.len() - 1
    }

    /// Parameter handles of the trunk, in layer order.
    pub fn trunk_param_ids(&self) -> Vec<ParamId> {
        self.trunk.iter().flat_map(LayerNode::param_ids).collect()
    }

    /// Parameter handles of one head, in layer order.
    pub fn head_param_ids(&self, head: usize) -> Vec<ParamId> {
        self.heads[head].iter().flat_map(LayerNode::param_ids).collect()
    }

    fn run_nodes(
        &self,
        tape: &mut Tape<'_, E>,
        nodes: &[LayerNode],
        start: Vec<Value>,
        reports: Option<&mut Vec<LayerReport>>,
    ) -> Result<(Vec<Value>, Vec<Value>)> {
        forward_nodes(tape, nodes, start, reports)
    }

    /// Run the trunk and the requested heads, returning each head's
    /// logits (its final layer before the output activation).
    pub fn forward_heads(
        &self,
        tape: &mut Tape<'_, E>,
        input: Value,
        heads: &[usize],
    ) -> Result<Vec<Value>> {
        let (trunk_out, _) = self.run_nodes(tape, &self.trunk, vec![input], None)?;
        let mut logits = Vec::with_capacity(heads.len());
        for &h in heads {
            if h >= self.heads.len() {
                return Err(Error::Config(format!(
                    "head {} of a network with {} heads",
                    h + 1,
                    self.heads.len()
                )));
            }
            let (out, pre) = self.run_nodes(tape, &self.heads[h], trunk_out.clone(), None)?;
            if out.len() != 1 {
                return Err(Error::Shape(format!(
                    "head {} ends with {} parallel tensors instead of one",
                    h + 1,
                    out.len()
                )));
            }
            logits.push(pre[0]);
        }
        Ok(logits)
    }

    /// Run the trunk and one head, returning the head's logits.
    pub fn forward(&self, tape: &mut Tape<'_, E>, input: Value, head: usize) -> Result<Value> {
        Ok(self.forward_heads(tape, input, &[head])?[0])
    }

    /// Like [`forward_heads`](Self::forward_heads) but also records gate
    /// matrices and per-tensor activation strengths for every layer.
    pub fn forward_traced(
        &self,
        tape: &mut Tape<'_, E>,
        input: Value,
        heads: &[usize],
    ) -> Result<TracedPass> {
        let mut reports = Vec::new();
        let (trunk_out, _) =
            self.run_nodes(tape, &self.trunk, vec![input], Some(&mut reports))?;
        let mut logits = Vec::with_capacity(heads.len());
        for &h in heads {
            if h >= self.heads.len() {
                return Err(Error::Config(format!(
                    "head {} of a network with {} heads",
                    h + 1,
                    self.heads.len()
                )));
            }
            let (out, pre) =
                self.run_nodes(tape, &self.heads[h], trunk_out.clone(), Some(&mut reports))?;
            if out.len() != 1 {
                return Err(Error::Shape(format!(
                    "head {} ends with {} parallel tensors instead of one",
                    h + 1,
                    out.len()
                )));
            }
            logits.push(pre[0]);
        }
        Ok(TracedPass { logits, reports })
    }

    /// Class probabilities from one head for one input tensor.
    pub fn predict_probs(&self, input: &Tensor<E>, head: usize) -> Result<Vec<E>> {
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(input);
        let logits = self.forward(&mut tape, x, head)?;
        let probs = tape.softmax(logits);
        Ok(tape.values_of(probs).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::routing::GateMode;

    fn tiny_model(frozen: bool, seed: u64) -> NetworkModel<f64> {
        let mode = if frozen { GateMode::FrozenParallel } else { GateMode::Learned };
        let mut params = Parameters::<f64>::new();
        let mut rng = stream(seed, "init", &[]);
        let trunk = vec![
            LayerNode::Routing(
                RoutingLayer::conv(
                    &mut params,
                    &mut rng,
                    "l1",
                    1,
                    2,
                    1,
                    4,
                    64,
                    1,
                    Padding::Same,
                    Activation::Relu,
                    mode,
                )
                .unwrap(),
            ),
            LayerNode::MaxPool2 { name: "l1.pool".into() },
            LayerNode::forward_conv(&mut params, &mut rng, "l2", 2, 4, 4, 1, Padding::Same, Activation::Relu)
                .unwrap(),
            LayerNode::Flatten { name: "l2.flatten".into() },
        ];
        let head = vec![LayerNode::Routing(
            RoutingLayer::dense(
                &mut params,
                &mut rng,
                "head1.l3",
                2,
                1,
                4 * 16,
                3,
                Activation::Softmax,
                mode,
            )
            .unwrap(),
        )];
        let meta = NetworkMeta {
            arch: "test".into(),
            input: vec![1, 8, 8],
            head_classes: vec![3],
            frozen,
            seed,
        };
        NetworkModel::from_parts(params, trunk, head, meta)
    }

    fn input(seed: u64) -> Tensor<f64> {
        let mut r = stream(seed, "net-in", &[]);
        Tensor::from_fn(vec![1, 8, 8], |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn forward_produces_logits_of_head_size() {
        let model = tiny_model(false, 1);
        let x = input(50);
        let mut tape = Tape::new(&model.params);
        let v = tape.constant(&x);
        let logits = model.forward(&mut tape, v, 0).unwrap();
        assert_eq!(tape.shape_of(logits), &[3]);
        let probs = model.predict_probs(&x, 0).unwrap();
        let s: f64 = probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn traced_pass_reports_every_layer() {
        let model = tiny_model(false, 2);
        let x = input(51);
        let mut tape = Tape::new(&model.params);
        let v = tape.constant(&x);
        let traced = model.forward_traced(&mut tape, v, &[0]).unwrap();
        assert_eq!(traced.logits.len(), 1);
        assert_eq!(traced.reports.len(), 5);
        assert_eq!(traced.reports[0].name, "l1");
        assert!(traced.reports[0].gates.is_some());
        assert_eq!(traced.reports[0].strengths.len(), 2);
        assert!(traced.reports[1].gates.is_none());
        assert_eq!(traced.reports[4].name, "head1.l3");
        for r in &traced.reports {
            for &s in &r.strengths {
                assert!(s.is_finite() && s >= 0.0);
            }
        }
    }

    #[test]
    fn unknown_head_is_rejected() {
        let model = tiny_model(false, 3);
        let x = input(52);
        let mut tape = Tape::new(&model.params);
        let v = tape.constant(&x);
        assert!(model.forward(&mut tape, v, 1).is_err());
    }

    #[test]
    fn added_head_runs_from_shared_trunk() {
        let mut model = tiny_model(false, 4);
        let mut rng = stream(4, "head2", &[]);
        let head2 = vec![LayerNode::Routing(
            RoutingLayer::dense(
                &mut model.params,
                &mut rng,
                "head2.l3",
                2,
                1,
                4 * 16,
                5,
                Activation::Softmax,
                GateMode::Learned,
            )
            .unwrap(),
        )];
        let idx = model.push_head(head2, 5);
        assert_eq!(idx, 1);
        assert_eq!(model.meta().head_classes, vec![3, 5]);

        let x = input(53);
        let mut tape = Tape::new(&model.params);
        let v = tape.constant(&x);
        let logits = model.forward_heads(&mut tape, v, &[0, 1]).unwrap();
        assert_eq!(tape.shape_of(logits[0]), &[3]);
        assert_eq!(tape.shape_of(logits[1]), &[5]);
    }

    #[test]
    fn frozen_network_forward_matches_hand_wired_paths() {
        let model = tiny_model(true, 5);
        let x = input(54);
        let mut tape = Tape::new(&model.params);
        let v = tape.constant(&x);
        let logits = model.forward(&mut tape, v, 0).unwrap();
        let got = tape.values_of(logits).to_vec();

        let mut solo = Tape::new(&model.params);
        let sx = solo.constant(&x);
        let mut paths = Vec::new();
        for p in 1..=2 {
            let w = solo.param(model.params.id_by_name(&format!("l1.pred.w_1_{p}")).unwrap());
            let b = solo.param(model.params.id_by_name(&format!("l1.pred.b_1_{p}")).unwrap());
            let c = solo.conv2d(sx, w, b, 1, Padding::Same).unwrap();
            let a = solo.relu(c);
            let pooled = solo.maxpool2(a).unwrap();
            let w2 = solo.param(model.params.id_by_name(&format!("l2.fwd.w_{p}")).unwrap());
            let b2 = solo.param(model.params.id_by_name(&format!("l2.fwd.b_{p}")).unwrap());
            let c2 = solo.conv2d(pooled, w2, b2, 1, Padding::Same).unwrap();
            let a2 = solo.relu(c2);
            let flat = solo.flatten(a2);
            let hw = solo.param(model.params.id_by_name(&format!("head1.l3.pred.w_{p}_1")).unwrap());
            let hb = solo.param(model.params.id_by_name(&format!("head1.l3.pred.b_{p}_1")).unwrap());
            let out = solo.affine(flat, hw, hb).unwrap();
            paths.push(solo.scale(out, 0.5));
        }
        let sum = solo.add(paths[0], paths[1]).unwrap();
        let want = solo.values_of(sum).to_vec();

        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}
