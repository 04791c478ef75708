//! Route visualization and weight analysis.
//!
//! A trace records, for one input, every layer's gate matrix and the
//! relative strength of each parallel tensor (mean absolute activation
//! of the constructed tensors, normalized to sum to 1 per layer).
//! Traces export to DOT graphs and JSON, and groups of traces from
//! different domains reduce to a per-layer gate divergence. Histograms
//! compare the weights that parallel forward layers learned per path.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::network::{LayerNode, NetworkModel};
use crate::routing::GateMatrix;
use crate::tensor::{Scalar, Tape, Tensor};
use crate::{Error, Result};

/// One layer's share of a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceLayer {
    pub name: String,
    /// Gate coefficients, present for routing layers.
    pub gates: Option<GateMatrix>,
    /// Relative strength of each parallel tensor, summing to 1.
    pub strengths: Vec<f64>,
}

/// The routes one input took through a network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteTrace {
    pub input_id: String,
    pub domain: String,
    pub layers: Vec<TraceLayer>,
}

/// Run one input through the network and record gates and tensor
/// strengths for every layer of the trunk and the chosen head. A layer
/// whose tensors are all zero reports uniform strengths.
pub fn capture_trace<E: Scalar>(
    model: &NetworkModel<E>,
    input: &Tensor<E>,
    head: usize,
    input_id: impl Into<String>,
    domain: impl Into<String>,
) -> Result<RouteTrace> {
    let mut tape = Tape::new(&model.params);
    let x = tape.constant(input);
    let pass = model.forward_traced(&mut tape, x, &[head])?;
    let layers = pass
        .reports
        .into_iter()
        .map(|r| {
            let sum: f64 = r.strengths.iter().sum();
            let strengths = if sum > 0.0 {
                r.strengths.iter().map(|s| s / sum).collect()
            } else {
                vec![1.0 / r.strengths.len() as f64; r.strengths.len()]
            };
            TraceLayer { name: r.name, gates: r.gates, strengths }
        })
        .collect();
    Ok(RouteTrace { input_id: input_id.into(), domain: domain.into(), layers })
}

/// [`capture_trace`] over many inputs of one domain, identified by
/// their position.
pub fn capture_traces<E: Scalar>(
    model: &NetworkModel<E>,
    inputs: &[Tensor<E>],
    head: usize,
    domain: &str,
) -> Result<Vec<RouteTrace>> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, img)| capture_trace(model, img, head, format!("{domain}/{i}"), domain))
        .collect()
}

fn node_color(strength: f64) -> String {
    let v = 0.98 - 0.58 * strength.clamp(0.0, 1.0);
    format!("0.580 0.250 {v:.3}")
}

fn edge_pen(gate: f64) -> f64 {
    0.5 + 4.0 * gate.clamp(0.0, 1.0)
}

/// Render a trace as a DOT graph: one node per parallel tensor, filled
/// darker for stronger tensors; one edge per gate, with
/// `penwidth = 0.5 + 4·g`. The output is a pure function of the trace.
pub fn export_dot(trace: &RouteTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph route {{");
    let _ = writeln!(out, "  rankdir=LR;");
    let _ = writeln!(out, "  label=\"{} ({})\";", trace.input_id, trace.domain);
    let _ = writeln!(out, "  node [shape=box, style=filled, fontname=\"Helvetica\"];");
    let _ = writeln!(out, "  input [fillcolor=\"gray92\"];");
    let mut prev: Vec<String> = vec!["input".into()];
    for (li, layer) in trace.layers.iter().enumerate() {
        let ids: Vec<String> =
            (0..layer.strengths.len()).map(|p| format!("n{}_{}", li + 1, p + 1)).collect();
        for (p, id) in ids.iter().enumerate() {
            let _ = writeln!(
                out,
                "  {id} [label=\"{}:{}\", fillcolor=\"{}\"];",
                layer.name,
                p + 1,
                node_color(layer.strengths[p])
            );
        }
        match &layer.gates {
            Some(g) => {
                for i in 0..g.m.min(prev.len()) {
                    for j in 0..g.n.min(ids.len()) {
                        let gate = g.get(i, j);
                        let _ = writeln!(
                            out,
                            "  {} -> {} [penwidth={:.3}, color=\"gray{}\"];",
                            prev[i],
                            ids[j],
                            edge_pen(gate),
                            (78.0 - 70.0 * gate.clamp(0.0, 1.0)).round() as i64
                        );
                    }
                }
            }
            None => {
                for (i, id) in ids.iter().enumerate() {
                    let from = &prev[i.min(prev.len() - 1)];
                    let _ = writeln!(out, "  {from} -> {id} [penwidth=1.0, color=\"gray60\"];");
                }
            }
        }
        prev = ids;
    }
    let _ = writeln!(out, "}}");
    out
}

/// Serialize a trace (layer names, gate matrices, strengths) as JSON.
pub fn export_json(trace: &RouteTrace) -> Result<String> {
    serde_json::to_string_pretty(trace)
        .map_err(|e| Error::Data(format!("trace serialization: {e}")))
}

/// How far apart one routing layer's mean gates are across domains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerDivergence {
    pub layer: String,
    pub value: f64,
}

/// Per routing layer: the L1 distance between the domain-mean gate
/// matrices, averaged over rows (and over domain pairs when more than
/// two groups are given). Zero means the domains route identically; a
/// single row can differ by at most 2.
pub fn gate_divergence(groups: &[Vec<RouteTrace>]) -> Result<Vec<LayerDivergence>> {
    if groups.len() < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Config(
            "gate divergence needs at least two non-empty domain groups".into(),
        ));
    }
    let layout: Vec<String> = groups[0][0]
        .layers
        .iter()
        .filter(|l| l.gates.is_some())
        .map(|l| l.name.clone())
        .collect();
    if layout.is_empty() {
        return Err(Error::Config("the traced model has no routing layers".into()));
    }
    let mut means: Vec<Vec<GateMatrix>> = Vec::with_capacity(groups.len());
    for group in groups {
        let mut per_layer: Vec<Vec<GateMatrix>> = vec![Vec::new(); layout.len()];
        for trace in group {
            let mut k = 0;
            for layer in &trace.layers {
                if let Some(g) = &layer.gates {
                    if k >= layout.len() || layer.name != layout[k] {
                        return Err(Error::Data(
                            "traces disagree on the routing layers they cover".into(),
                        ));
                    }
                    per_layer[k].push(g.clone());
                    k += 1;
                }
            }
            if k != layout.len() {
                return Err(Error::Data(
                    "traces disagree on the routing layers they cover".into(),
                ));
            }
        }
        means.push(per_layer.iter().map(|m| GateMatrix::mean(m)).collect::<Result<_>>()?);
    }
    let mut out = Vec::with_capacity(layout.len());
    for (k, name) in layout.iter().enumerate() {
        let mut acc = 0.0;
        let mut pairs = 0;
        for a in 0..means.len() {
            for b in a + 1..means.len() {
                acc += means[a][k].l1_row_distance(&means[b][k])?;
                pairs += 1;
            }
        }
        out.push(LayerDivergence { layer: name.clone(), value: acc / pairs as f64 });
    }
    Ok(out)
}

/// Per-path weight histogram of one forward layer, over bin edges
/// shared by all of the layer's paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerHistogram {
    pub layer: String,
    /// `bins + 1` ascending edges spanning all paths' weights.
    pub edges: Vec<f64>,
    /// One count vector per path; each sums to that path's weight count.
    pub counts: Vec<Vec<usize>>,
}

fn all_nodes<E: Scalar>(model: &NetworkModel<E>) -> impl Iterator<Item = &LayerNode> {
    model
        .trunk()
        .iter()
        .chain((0..model.heads()).flat_map(move |h| model.head_layers(h).iter()))
}

/// Histograms of the weights of every forward layer with at least two
/// parallel paths whose name contains `selector` (empty selects all).
/// Biases are not counted.
pub fn weight_histograms<E: Scalar>(
    model: &NetworkModel<E>,
    selector: &str,
    bins: usize,
) -> Result<Vec<LayerHistogram>> {
    if bins == 0 {
        return Err(Error::Config("histograms need at least one bin".into()));
    }
    let mut out = Vec::new();
    for node in all_nodes(model) {
        let (name, paths) = match node {
            LayerNode::ForwardConv { name, paths, .. }
            | LayerNode::ForwardDense { name, paths, .. } => (name, paths),
            _ => continue,
        };
        if paths.len() < 2 || !name.contains(selector) {
            continue;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(w, _) in paths {
            for &v in model.params.values(w) {
                let v = Scalar::to_f64(v);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Numeric(format!("layer {name} has non-finite weights")));
        }
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let edges: Vec<f64> =
            (0..=bins).map(|b| lo + (hi - lo) * b as f64 / bins as f64).collect();
        let counts: Vec<Vec<usize>> = paths
            .iter()
            .map(|&(w, _)| {
                let mut c = vec![0usize; bins];
                for &v in model.params.values(w) {
                    let v = Scalar::to_f64(v);
                    let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
                    c[b.min(bins - 1)] += 1;
                }
                c
            })
            .collect();
        out.push(LayerHistogram { layer: name.clone(), edges, counts });
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "no forward layer with parallel paths matches {selector:?}"
        )));
    }
    Ok(out)
}

/// Total-variation distance between two count vectors after
/// normalizing each to a distribution: `0.5 · Σ|p − q|`, in [0, 1].
pub fn tv_distance(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "histograms with {} and {} bins",
            a.len(),
            b.len()
        )));
    }
    let (sa, sb) = (a.iter().sum::<usize>() as f64, b.iter().sum::<usize>() as f64);
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::Data("total-variation distance of an empty histogram".into()));
    }
    Ok(0.5
        * a.iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 / sa - y as f64 / sb).abs())
            .sum::<f64>())
}

/// Write histograms as `layer,path,bin_lo,bin_hi,count` CSV.
pub fn write_histogram_csv(path: &Path, hists: &[LayerHistogram]) -> Result<()> {
    let mut out = String::from("layer,path,bin_lo,bin_hi,count\n");
    for h in hists {
        for (p, counts) in h.counts.iter().enumerate() {
            for (b, &count) in counts.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{count}",
                    h.layer,
                    p + 1,
                    h.edges[b],
                    h.edges[b + 1]
                );
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_named;
    use crate::rng::stream;
    use rand::Rng;

    fn random_input(seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, "trace-in", &[]);
        Tensor::from_fn(vec![1, 6, 6], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn strengths_normalize_and_repeat_runs_match() {
        let model = build_named::<f64>("x2 rC4 C4 rF3", &[1, 6, 6], 3, 51).unwrap();
        let input = random_input(52);
        let trace = capture_trace(&model, &input, 0, "i0", "synthetic").unwrap();
        assert!(!trace.layers.is_empty());
        for layer in &trace.layers {
            let sum: f64 = layer.strengths.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "{}: {sum}", layer.name);
            assert!(layer.strengths.iter().all(|&s| s >= 0.0));
            if let Some(g) = &layer.gates {
                for row in g.rows() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        }
        let again = capture_trace(&model, &input, 0, "i0", "synthetic").unwrap();
        assert_eq!(trace, again);
        assert_eq!(export_dot(&trace), export_dot(&again));
    }

    #[test]
    fn width_one_traces_to_a_chain() {
        let model = build_named::<f64>("x1 rC4 C4 rF2", &[1, 6, 6], 2, 53).unwrap();
        let trace = capture_trace(&model, &random_input(54), 0, "i0", "d").unwrap();
        for layer in &trace.layers {
            assert_eq!(layer.strengths, vec![1.0]);
            if let Some(g) = &layer.gates {
                assert_eq!((g.m, g.n), (1, 1));
                assert_eq!(g.get(0, 0), 1.0);
            }
        }
        let dot = export_dot(&trace);
        let path_nodes = dot.matches("[label=").count();
        let edges = dot.matches(" -> ").count();
        assert_eq!(edges, path_nodes, "chain graph from:\n{dot}");
    }

    #[test]
    fn silenced_path_reports_zero_strength() {
        let mut model = build_named::<f64>("x2 rC4 C4 rF2", &[1, 6, 6], 2, 55).unwrap();
        for id in model.params.ids().collect::<Vec<_>>() {
            let p = model.params.get_mut(id);
            let dead = p.name.ends_with("_2") && p.name.contains(".pred.")
                || p.name.ends_with(".fwd.w_2")
                || p.name.ends_with(".fwd.b_2");
            if !dead {
                continue;
            }
            let fill = if p.name.contains(".b_") || p.name.contains(".fwd.b_") {
                -1.0
            } else {
                0.0
            };
            for v in p.tensor.values_mut() {
                *v = fill;
            }
        }
        let trace = capture_trace(&model, &random_input(56), 0, "i0", "d").unwrap();
        let l1 = &trace.layers[0];
        let l2 = &trace.layers[1];
        assert_eq!(l1.strengths[1], 0.0, "{:?}", l1);
        assert_eq!(l2.strengths[1], 0.0, "{:?}", l2);
        assert!((l1.strengths[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dot_edges_follow_the_documented_penwidth_map() {
        let trace = RouteTrace {
            input_id: "i0".into(),
            domain: "d".into(),
            layers: vec![TraceLayer {
                name: "l1".into(),
                gates: Some(GateMatrix::from_rows(vec![vec![0.75, 0.25]])),
                strengths: vec![0.6, 0.4],
            }],
        };
        let dot = export_dot(&trace);
        assert!(dot.starts_with("digraph route {"));
        assert_eq!(dot.matches('{').count(), dot.matches('}').count());
        assert!(dot.contains("penwidth=3.500"), "{dot}");
        assert!(dot.contains("penwidth=1.500"), "{dot}");
    }

    #[test]
    fn divergence_is_zero_on_identical_groups_and_maximal_on_opposites() {
        let mk = |row: Vec<f64>| RouteTrace {
            input_id: "i".into(),
            domain: "d".into(),
            layers: vec![TraceLayer {
                name: "l1".into(),
                gates: Some(GateMatrix::from_rows(vec![row])),
                strengths: vec![0.5, 0.5],
            }],
        };
        let a = vec![mk(vec![1.0, 0.0])];
        let b = vec![mk(vec![0.0, 1.0])];

        let same = gate_divergence(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same[0].value, 0.0);

        let opposite = gate_divergence(&[a.clone(), b.clone()]).unwrap();
        assert!((opposite[0].value - 2.0).abs() < 1e-12);

        let swapped = gate_divergence(&[b, a]).unwrap();
        assert_eq!(opposite[0].value, swapped[0].value);

        assert!(gate_divergence(&[vec![mk(vec![1.0, 0.0])]]).is_err());
    }

    #[test]
    fn histograms_share_edges_and_count_every_weight() {
        let mut model = build_named::<f64>("x2 rC4 C4 rF2", &[1, 6, 6], 2, 57).unwrap();
        let hists = weight_histograms(&model, "", 10).unwrap();
        assert_eq!(hists.len(), 1);
        let h = &hists[0];
        assert_eq!(h.layer, "l2");
        assert_eq!(h.edges.len(), 11);
        assert_eq!(h.counts.len(), 2);
        let w1 = model.params.id_by_name("l2.fwd.w_1").unwrap();
        for counts in &h.counts {
            assert_eq!(counts.iter().sum::<usize>(), model.params.values(w1).len());
        }
        assert_ne!(h.counts[0], h.counts[1]);

        let w2 = model.params.id_by_name("l2.fwd.w_2").unwrap();
        let copy = model.params.values(w1).to_vec();
        model.params.get_mut(w2).tensor.values_mut().copy_from_slice(&copy);
        let copied = weight_histograms(&model, "l2", 10).unwrap();
        assert_eq!(copied[0].counts[0], copied[0].counts[1]);

        assert!(weight_histograms(&model, "nope", 10).is_err());
    }

    #[test]
    fn tv_distance_spans_its_bounds() {
        assert_eq!(tv_distance(&[5, 5, 0], &[5, 5, 0]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[10, 0], &[0, 10]).unwrap(), 1.0);
        let half = tv_distance(&[8, 0, 8], &[8, 8, 0]).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        assert!(tv_distance(&[1, 2], &[1, 2, 3]).is_err());
        assert!(tv_distance(&[0, 0], &[1, 2]).is_err());
    }

    #[test]
    fn histogram_csv_has_one_row_per_bin_per_path() {
        let model = build_named::<f64>("x2 rC4 C4 rF2", &[1, 6, 6], 2, 59).unwrap();
        let hists = weight_histograms(&model, "", 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hist.csv");
        write_histogram_csv(&path, &hists).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: usize = hists.iter().map(|h| h.counts.len() * 8).sum();
        assert_eq!(text.lines().count(), rows + 1);
        assert!(text.starts_with("layer,path,bin_lo,bin_hi,count\n"));
    }
}
