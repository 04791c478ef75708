//! Multipath neural networks with learnable soft routing.
//!
//! A network layer here is not one tensor but a set of parallel tensors.
//! Every layer predicts a candidate for each downstream tensor from each
//! upstream tensor, scores those candidates with data-dependent gates, and
//! builds each downstream tensor as the gate-weighted sum of its candidates.
//! With one path per layer this reduces to an ordinary CNN; with frozen
//! one-hot gates it reduces to an ensemble of disjoint CNNs; with learned
//! gates the routing itself is trained end to end.
//!
//! The crate is self-contained: a reverse-mode tape over `f32`/`f64`
//! tensors, conv/dense routing layers, an architecture grammar with the
//! stock network zoo, IDX and PNG data loading plus procedural corpora,
//! SGD/Adam training with deterministic parallelism, lifelong learning via
//! distillation against recorded soft targets, and route/weight
//! diagnostics (DOT traces, gate divergence, per-path weight histograms).
//!
//! Start with the runnable examples, one per capability:
//!
//! * `arch_zoo` parses architecture strings and prints parameter counts.
//! * `grad_check` verifies tape gradients against finite differences.
//! * `train_digits` trains a small classifier end to end.
//! * `joint_routing` trains one net on two domains and measures how far
//!   apart their gate patterns drift.
//! * `lifelong_lwf` runs two-task sequential training with and without
//!   distillation and compares retention.
//! * `image_translation` trains an encoder-decoder on paired images.
//! * `route_trace` renders per-input routing graphs to DOT.
//! * `weight_histograms` compares weight distributions across parallel
//!   paths of one layer.
//!
//! The `camnet` binary wraps the same capabilities as subcommands
//! (`train`, `eval`, `joint`, `lifelong`, `trace`, `hist`).

pub mod arch;
pub mod cli;
pub mod data;
mod error;
pub mod lifelong;
pub mod network;
pub mod rng;
pub mod routing;
pub mod tensor;
pub mod trace;
pub mod train;
pub(crate) mod util;

pub use error::{Error, Result};
pub use tensor::{GradStore, Padding, ParamId, Parameter, Parameters, Scalar, Tape, Tensor, Value};
