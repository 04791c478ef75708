//! Architecture descriptions and the network builder.
//!
//! A classifier is written as a list of layer tokens, left to right:
//!
//! ```text
//! rC32  routed 3x3 convolution producing 32 channels per tensor
//! C32   per-tensor 3x3 convolution, 32 channels
//! rF10  routed dense layer, 10 units
//! F10   per-tensor dense layer, 10 units
//! ```
//!
//! Custom strings take an optional `xW` width prefix (parallel tensors)
//! and an optional `@i,j,...` suffix naming the tokens after which a 2x2
//! max pool runs; without the suffix, pooling follows each run of convs
//! with equal channel counts except the last. A flatten is inserted
//! before the first dense token. The first routed layer fans the single
//! input out to `W` tensors, later routed layers keep width `W`, and the
//! final token must bring the width back to one.
//!
//! Preset names: `BaseCNN`, `BaseCNN2`, `CAMNetX`, `tinyCAMNetX`, and
//! `MultiCNNX` (CAMNet wiring with gates frozen to disjoint paths), with
//! `X` the number of parallel tensors.
//!
//! Image-to-image networks use `encdec{S}x{W}b{B}[deep]`: an
//! encoder-decoder over `S`x`S` images with `W` parallel tensors,
//! `B` base channels doubling per downsampling level (capped at 128),
//! and optionally a per-tensor conv after every routed stage.

use crate::network::{LayerNode, NetworkMeta, NetworkModel};
use crate::rng::stream;
use crate::routing::{Activation, GateMode, RoutingLayer};
use crate::tensor::{Padding, Parameters, Scalar};
use crate::{Error, Result};

const BASECNN_TOKENS: &str = "C32 C32 C64 C64 C128 C128 F32 F32 F10";
const BASECNN2_TOKENS: &str = "C32 C32 C64 C64 C128 C128 C128 C256 C256 C256 F32 F32 F10";
const CAMNET_TOKENS: &str = "rC32 C32 rC64 C64 rC128 C128 F32 rF32 rF10";
const TINY_CAMNET_TOKENS: &str = "rC16 C16 rC32 C32 rC64 C64 rF10";

/// One architecture token, e.g. `rC32` or `F10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerToken {
    pub routed: bool,
    pub conv: bool,
    pub size: usize,
}

impl LayerToken {
    pub fn parse(s: &str) -> Result<LayerToken> {
        let bad = || Error::Config(format!("unknown layer token {s:?}"));
        let (routed, rest) = match s.strip_prefix('r') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let mut chars = rest.chars();
        let conv = match chars.next() {
            Some('C') => true,
            Some('F') => false,
            _ => return Err(bad()),
        };
        let size: usize = chars.as_str().parse().map_err(|_| bad())?;
        if size == 0 {
            return Err(bad());
        }
        Ok(LayerToken { routed, conv, size })
    }

    /// The text `parse` accepts for this token.
    pub fn render(&self) -> String {
        let r = if self.routed { "r" } else { "" };
        let kind = if self.conv { "C" } else { "F" };
        format!("{r}{kind}{}", self.size)
    }
}

/// Structural family of an architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchKind {
    /// Token-listed classifier with a pooling schedule.
    Tokens { tokens: Vec<LayerToken>, pools: Vec<usize> },
    /// Encoder-decoder for image translation.
    Encdec { size: usize, base: usize, deep: bool },
}

/// A parsed architecture: structure, width, and gating regime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: String,
    pub kind: ArchKind,
    pub width: usize,
    pub frozen: bool,
}

impl ArchSpec {
    /// Parse a preset name, token string, or encoder-decoder form.
    pub fn parse(name: &str) -> Result<ArchSpec> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::Config("empty architecture name".into()));
        }
        if let Some(rest) = name.strip_prefix("encdec") {
            return Self::parse_encdec(name, rest);
        }
        if name == "BaseCNN" {
            return Self::tokens(name, BASECNN_TOKENS, Some(vec![2, 4]), 1, false);
        }
        if name == "BaseCNN2" {
            return Self::tokens(name, BASECNN2_TOKENS, Some(vec![2, 4, 7, 10]), 1, false);
        }
        if let Some(x) = name.strip_prefix("CAMNet") {
            let width = parse_width(name, x)?;
            return Self::tokens(name, CAMNET_TOKENS, Some(vec![2, 4]), width, false);
        }
        if let Some(x) = name.strip_prefix("tinyCAMNet") {
            let width = parse_width(name, x)?;
            return Self::tokens(name, TINY_CAMNET_TOKENS, Some(vec![2, 4]), width, false);
        }
        if let Some(x) = name.strip_prefix("MultiCNN") {
            let width = parse_width(name, x)?;
            return Self::tokens(name, CAMNET_TOKENS, Some(vec![2, 4]), width, true);
        }
        Self::parse_custom(name)
    }

    fn parse_custom(name: &str) -> Result<ArchSpec> {
        let mut body = name;
        let mut pools = None;
        if let Some((head, tail)) = body.split_once('@') {
            let mut list = Vec::new();
            for p in tail.split(',') {
                let idx: usize = p.trim().parse().map_err(|_| {
                    Error::Config(format!("bad pool position {p:?} in {name:?}"))
                })?;
                list.push(idx);
            }
            pools = Some(list);
            body = head;
        }
        let mut width = 1;
        let mut rest = body.trim();
        if let Some(first) = rest.split_whitespace().next() {
            if let Some(w) = first.strip_prefix('x') {
                if let Ok(w) = w.parse::<usize>() {
                    width = w;
                    rest = rest.trim_start().strip_prefix(first).unwrap_or("").trim_start();
                }
            }
        }
        if width == 0 {
            return Err(Error::Config(format!("architecture {name:?} has width zero")));
        }
        Self::tokens(name, rest, pools, width, false)
    }

    fn tokens(
        name: &str,
        token_str: &str,
        pools: Option<Vec<usize>>,
        width: usize,
        frozen: bool,
    ) -> Result<ArchSpec> {
        let tokens: Vec<LayerToken> =
            token_str.split_whitespace().map(LayerToken::parse).collect::<Result<_>>()?;
        if tokens.is_empty() {
            return Err(Error::Config(format!("architecture {name:?} has no layers")));
        }
        let pools = pools.unwrap_or_else(|| default_pools(&tokens));
        for win in pools.windows(2) {
            if win[1] <= win[0] {
                return Err(Error::Config(format!(
                    "pool positions in {name:?} must be strictly increasing"
                )));
            }
        }
        if let Some(&last) = pools.last() {
            if last > tokens.len() || pools[0] == 0 {
                return Err(Error::Config(format!("pool position out of range in {name:?}")));
            }
        }
        Ok(ArchSpec {
            name: name.to_string(),
            kind: ArchKind::Tokens { tokens, pools },
            width,
            frozen,
        })
    }

    fn parse_encdec(name: &str, rest: &str) -> Result<ArchSpec> {
        let bad = || {
            Error::Config(format!(
                "bad encoder-decoder name {name:?}, expected encdec{{size}}x{{width}}b{{base}}[deep]"
            ))
        };
        let (rest, deep) = match rest.strip_suffix("deep") {
            Some(r) => (r, true),
            None => (rest, false),
        };
        let (size_s, rest) = rest.split_once('x').ok_or_else(bad)?;
        let (width_s, base_s) = rest.split_once('b').ok_or_else(bad)?;
        let size: usize = size_s.parse().map_err(|_| bad())?;
        let width: usize = width_s.parse().map_err(|_| bad())?;
        let base: usize = base_s.parse().map_err(|_| bad())?;
        if !size.is_power_of_two() || size < 8 {
            return Err(Error::Config(format!(
                "encoder-decoder size {size} must be a power of two, at least 8"
            )));
        }
        if width == 0 || base == 0 {
            return Err(bad());
        }
        Ok(ArchSpec {
            name: name.to_string(),
            kind: ArchKind::Encdec { size, base, deep },
            width,
            frozen: false,
        })
    }

    fn gate_mode(&self) -> GateMode {
        if self.frozen {
            GateMode::FrozenParallel
        } else {
            GateMode::Learned
        }
    }

    /// Canonical text for this architecture: preset structures render
    /// as their preset names, everything else in the grammar `parse`
    /// accepts, so `parse(render())` reproduces the structure, width,
    /// and gating regime. Frozen gates have no textual form outside the
    /// MultiCNN presets; a hand-frozen custom spec renders as its
    /// learned-gate text.
    pub fn render(&self) -> String {
        match &self.kind {
            ArchKind::Encdec { size, base, deep } => {
                let deep = if *deep { "deep" } else { "" };
                format!("encdec{size}x{}b{base}{deep}", self.width)
            }
            ArchKind::Tokens { tokens, pools } => {
                if let Some(name) = self.preset_name() {
                    return name;
                }
                let mut out = String::new();
                if self.width != 1 {
                    out.push_str(&format!("x{} ", self.width));
                }
                let body: Vec<String> = tokens.iter().map(LayerToken::render).collect();
                out.push_str(&body.join(" "));
                if *pools != default_pools(tokens) {
                    let list: Vec<String> = pools.iter().map(usize::to_string).collect();
                    out.push('@');
                    out.push_str(&list.join(","));
                }
                out
            }
        }
    }

    fn preset_name(&self) -> Option<String> {
        let ArchKind::Tokens { tokens, pools } = &self.kind else {
            return None;
        };
        let matches = |body: &str, p: &[usize]| {
            if pools.as_slice() != p {
                return false;
            }
            let want: Vec<LayerToken> = body
                .split_whitespace()
                .map(|t| LayerToken::parse(t).expect("preset token"))
                .collect();
            *tokens == want
        };
        if self.frozen {
            if matches(CAMNET_TOKENS, &[2, 4]) {
                return Some(format!("MultiCNN{}", self.width));
            }
            return None;
        }
        if self.width == 1 && matches(BASECNN_TOKENS, &[2, 4]) {
            return Some("BaseCNN".into());
        }
        if self.width == 1 && matches(BASECNN2_TOKENS, &[2, 4, 7, 10]) {
            return Some("BaseCNN2".into());
        }
        if matches(CAMNET_TOKENS, &[2, 4]) {
            return Some(format!("CAMNet{}", self.width));
        }
        if matches(TINY_CAMNET_TOKENS, &[2, 4]) {
            return Some(format!("tinyCAMNet{}", self.width));
        }
        None
    }
}

impl std::fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

fn parse_width(name: &str, digits: &str) -> Result<usize> {
    let width: usize = digits
        .parse()
        .map_err(|_| Error::Config(format!("bad width in architecture name {name:?}")))?;
    if width == 0 {
        return Err(Error::Config(format!("architecture {name:?} has width zero")));
    }
    Ok(width)
}

/// Pool after each run of equal-channel convs except the last run.
fn default_pools(tokens: &[LayerToken]) -> Vec<usize> {
    let mut ends: Vec<usize> = Vec::new();
    let mut cur = None;
    for (i, t) in tokens.iter().enumerate() {
        if !t.conv {
            break;
        }
        if cur == Some(t.size) {
            *ends.last_mut().unwrap() = i + 1;
        } else {
            ends.push(i + 1);
            cur = Some(t.size);
        }
    }
    ends.pop();
    ends
}

/// Index of the first token owned by the classifier head: the trailing
/// run of routed dense tokens, or just the final token.
fn head_start(tokens: &[LayerToken]) -> usize {
    let mut k = tokens.len();
    while k > 0 && tokens[k - 1].routed && !tokens[k - 1].conv {
        k -= 1;
    }
    if k == tokens.len() {
        tokens.len() - 1
    } else {
        k
    }
}

#[derive(Debug, Clone, Copy)]
enum St {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

#[allow(clippy::too_many_arguments)]
fn build_segment<E: Scalar>(
    params: &mut Parameters<E>,
    spec: &ArchSpec,
    tokens: &[LayerToken],
    pools: &[usize],
    range: std::ops::Range<usize>,
    mut width: usize,
    mut st: St,
    head_num: usize,
    seed: u64,
    last_out: usize,
) -> Result<(Vec<LayerNode>, usize, St)> {
    let mode = spec.gate_mode();
    let total = tokens.len();
    let mut nodes = Vec::new();
    for idx0 in range {
        let tok = tokens[idx0];
        let i = idx0 + 1;
        let last = i == total;
        let lname = if head_num == 0 {
            format!("l{i}")
        } else {
            format!("head{head_num}.l{i}")
        };
        let mut rng = stream(seed, "init", &[head_num as u64, i as u64]);
        let activation = if last { Activation::Softmax } else { Activation::Relu };
        if tok.conv {
            let St::Spatial { c, h, w } = st else {
                return Err(Error::Config(format!(
                    "architecture {:?} has a conv token after flattening",
                    spec.name
                )));
            };
            if last {
                return Err(Error::Config(format!(
                    "architecture {:?} must end with a dense token",
                    spec.name
                )));
            }
            if tok.routed {
                let layer = RoutingLayer::conv(
                    params,
                    &mut rng,
                    lname.clone(),
                    width,
                    spec.width,
                    c,
                    tok.size,
                    h * w,
                    1,
                    Padding::Same,
                    activation,
                    mode,
                )?;
                nodes.push(LayerNode::Routing(layer));
                width = spec.width;
            } else {
                nodes.push(LayerNode::forward_conv(
                    params,
                    &mut rng,
                    lname.clone(),
                    width,
                    c,
                    tok.size,
                    1,
                    Padding::Same,
                    activation,
                )?);
            }
            st = St::Spatial { c: tok.size, h, w };
        } else {
            if let St::Spatial { c, h, w } = st {
                nodes.push(LayerNode::Flatten { name: format!("{lname}.flatten") });
                st = St::Flat(c * h * w);
            }
            let St::Flat(len) = st else { unreachable!() };
            let out = if last { last_out } else { tok.size };
            if tok.routed {
                let n = if last { 1 } else { spec.width };
                let layer = RoutingLayer::dense(
                    params,
                    &mut rng,
                    lname.clone(),
                    width,
                    n,
                    len,
                    out,
                    activation,
                    mode,
                )?;
                nodes.push(LayerNode::Routing(layer));
                width = n;
            } else {
                nodes.push(LayerNode::forward_dense(
                    params,
                    &mut rng,
                    lname.clone(),
                    width,
                    len,
                    out,
                    activation,
                )?);
            }
            st = St::Flat(out);
        }
        if pools.contains(&i) {
            let St::Spatial { c, h, w } = st else {
                return Err(Error::Config(format!(
                    "architecture {:?} pools after a dense token",
                    spec.name
                )));
            };
            if h / 2 == 0 || w / 2 == 0 {
                return Err(Error::Config(format!(
                    "architecture {:?} pools a {h}x{w} map away to nothing",
                    spec.name
                )));
            }
            nodes.push(LayerNode::MaxPool2 { name: format!("{lname}.pool") });
            st = St::Spatial { c, h: h / 2, w: w / 2 };
        }
    }
    Ok((nodes, width, st))
}

fn build_tokens_network<E: Scalar>(
    spec: &ArchSpec,
    tokens: &[LayerToken],
    pools: &[usize],
    input: &[usize],
    classes: usize,
    seed: u64,
) -> Result<NetworkModel<E>> {
    let st = match *input {
        [c, h, w] => St::Spatial { c, h, w },
        [len] => St::Flat(len),
        _ => {
            return Err(Error::Config(format!(
                "input shape {input:?} must be [channels, height, width] or [length]"
            )))
        }
    };
    let last = tokens[tokens.len() - 1];
    if last.conv {
        return Err(Error::Config(format!(
            "architecture {:?} must end with a dense token",
            spec.name
        )));
    }
    if last.size != classes {
        return Err(Error::Config(format!(
            "architecture {:?} ends in {} units but the data has {classes} classes",
            spec.name, last.size
        )));
    }
    let k = head_start(tokens);
    let mut params = Parameters::new();
    let (trunk, width, st) =
        build_segment(&mut params, spec, tokens, pools, 0..k, 1, st, 0, seed, classes)?;
    let (head, width, _) = build_segment(
        &mut params,
        spec,
        tokens,
        pools,
        k..tokens.len(),
        width,
        st,
        1,
        seed,
        classes,
    )?;
    if width != 1 {
        return Err(Error::Config(format!(
            "architecture {:?} ends with {width} parallel tensors instead of one",
            spec.name
        )));
    }
    let meta = NetworkMeta {
        arch: spec.name.clone(),
        input: input.to_vec(),
        head_classes: vec![classes],
        frozen: spec.frozen,
        seed,
    };
    Ok(NetworkModel::from_parts(params, trunk, head, meta))
}

fn encdec_channels(base: usize, level: usize) -> usize {
    (base << level).min(128)
}

fn build_encdec_network<E: Scalar>(
    spec: &ArchSpec,
    size: usize,
    base: usize,
    deep: bool,
    input: &[usize],
    out_channels: usize,
    seed: u64,
) -> Result<NetworkModel<E>> {
    let [cin, h, w] = *input else {
        return Err(Error::Config(format!(
            "input shape {input:?} must be [channels, height, width]"
        )));
    };
    if h != size || w != size {
        return Err(Error::Config(format!(
            "architecture {:?} wants {size}x{size} inputs, got {h}x{w}",
            spec.name
        )));
    }
    let levels = (size.trailing_zeros() as usize) - 2;
    let mode = spec.gate_mode();
    let mut params = Parameters::new();
    let mut nodes = Vec::new();
    let mut li = 0usize;
    let mut width = 1usize;
    let mut c = cin;
    let mut px = size * size;

    let routed_conv = |params: &mut Parameters<E>,
                           nodes: &mut Vec<LayerNode>,
                           li: &mut usize,
                           width: &mut usize,
                           c: &mut usize,
                           px: usize,
                           cout: usize,
                           n: usize,
                           stride: usize,
                           act: Activation,
                           head: bool|
     -> Result<()> {
        *li += 1;
        let lname = if head { format!("head1.l{li}") } else { format!("l{li}") };
        let hn = if head { 1 } else { 0 };
        let mut rng = stream(seed, "init", &[hn, *li as u64]);
        let layer = RoutingLayer::conv(
            params,
            &mut rng,
            lname,
            *width,
            n,
            *c,
            cout,
            px,
            stride,
            Padding::Same,
            act,
            mode,
        )?;
        nodes.push(LayerNode::Routing(layer));
        *width = n;
        *c = cout;
        Ok(())
    };
    let deep_conv = |params: &mut Parameters<E>,
                         nodes: &mut Vec<LayerNode>,
                         li: &mut usize,
                         width: usize,
                         c: usize|
     -> Result<()> {
        *li += 1;
        let mut rng = stream(seed, "init", &[0, *li as u64]);
        nodes.push(LayerNode::forward_conv(
            params,
            &mut rng,
            format!("l{li}"),
            width,
            c,
            c,
            1,
            Padding::Same,
            Activation::Relu,
        )?);
        Ok(())
    };

    for level in 0..levels {
        let cout = encdec_channels(base, level);
        routed_conv(
            &mut params,
            &mut nodes,
            &mut li,
            &mut width,
            &mut c,
            px,
            cout,
            spec.width,
            2,
            Activation::Relu,
            false,
        )?;
        px /= 4;
        if deep {
            deep_conv(&mut params, &mut nodes, &mut li, width, c)?;
        }
    }
    for level in (1..levels).rev() {
        nodes.push(LayerNode::Upsample2 { name: format!("l{}.up", li + 1) });
        px *= 4;
        let cout = encdec_channels(base, level - 1);
        routed_conv(
            &mut params,
            &mut nodes,
            &mut li,
            &mut width,
            &mut c,
            px,
            cout,
            spec.width,
            1,
            Activation::Relu,
            false,
        )?;
        if deep {
            deep_conv(&mut params, &mut nodes, &mut li, width, c)?;
        }
    }
    nodes.push(LayerNode::Upsample2 { name: format!("l{}.up", li + 1) });
    px *= 4;
    let mut head = Vec::new();
    routed_conv(
        &mut params,
        &mut head,
        &mut li,
        &mut width,
        &mut c,
        px,
        out_channels,
        1,
        1,
        Activation::Tanh,
        true,
    )?;
    if width != 1 {
        return Err(Error::Config(format!(
            "architecture {:?} ends with {width} parallel tensors instead of one",
            spec.name
        )));
    }
    let meta = NetworkMeta {
        arch: spec.name.clone(),
        input: input.to_vec(),
        head_classes: vec![out_channels],
        frozen: spec.frozen,
        seed,
    };
    Ok(NetworkModel::from_parts(params, nodes, head, meta))
}

/// Build a network from a parsed architecture. For classifiers `classes`
/// is the label count; for encoder-decoders it is the output channel
/// count.
pub fn build_network<E: Scalar>(
    spec: &ArchSpec,
    input: &[usize],
    classes: usize,
    seed: u64,
) -> Result<NetworkModel<E>> {
    if classes == 0 {
        return Err(Error::Config("a network needs at least one output".into()));
    }
    match &spec.kind {
        ArchKind::Tokens { tokens, pools } => {
            build_tokens_network(spec, tokens, pools, input, classes, seed)
        }
        ArchKind::Encdec { size, base, deep } => {
            build_encdec_network(spec, *size, *base, *deep, input, classes, seed)
        }
    }
}

/// Parse an architecture name and build the network in one step.
pub fn build_named<E: Scalar>(
    name: &str,
    input: &[usize],
    classes: usize,
    seed: u64,
) -> Result<NetworkModel<E>> {
    build_network(&ArchSpec::parse(name)?, input, classes, seed)
}

/// Attach a freshly initialised classifier head for a new task, cloning
/// the structure of the first head. Returns the new head's index.
pub fn add_head<E: Scalar>(
    model: &mut NetworkModel<E>,
    classes: usize,
    seed: u64,
) -> Result<usize> {
    let meta = model.meta().clone();
    let spec = ArchSpec::parse(&meta.arch)?;
    let ArchKind::Tokens { tokens, pools } = &spec.kind else {
        return Err(Error::Config(format!(
            "architecture {:?} takes no extra heads",
            meta.arch
        )));
    };
    let st = match meta.input[..] {
        [c, h, w] => St::Spatial { c, h, w },
        [len] => St::Flat(len),
        _ => return Err(Error::Config(format!("bad stored input shape {:?}", meta.input))),
    };
    let k = head_start(tokens);
    let mut scratch = Parameters::<E>::new();
    let (_, width, st) =
        build_segment(&mut scratch, &spec, tokens, pools, 0..k, 1, st, 0, meta.seed, classes)?;
    let head_num = model.heads() + 1;
    let (nodes, width, _) = build_segment(
        &mut model.params,
        &spec,
        tokens,
        pools,
        k..tokens.len(),
        width,
        st,
        head_num,
        seed,
        classes,
    )?;
    if width != 1 {
        return Err(Error::Config(format!(
            "architecture {:?} ends with {width} parallel tensors instead of one",
            meta.arch
        )));
    }
    Ok(model.push_head(nodes, classes))
}
