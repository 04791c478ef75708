//! Minibatch training with deterministic shuffling, domain
//! interleaving, optional augmentation, and best-model restoration.
//!
//! [`fit`] trains one classifier head on one or more labelled domains;
//! [`fit_pairs`] trains an image-to-image head on paired sets. Both
//! shuffle with seeded streams, so a run is reproducible from its
//! configuration alone. Test error is tracked every epoch and the best
//! parameters are restored at the end, which also serves as the
//! recovery point if the loss ever turns non-finite.

pub mod checkpoint;
pub mod optim;

pub use optim::{OptKind, Optimizer};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{interleave, one_hot, Augment, Dataset, PairSet};
use crate::network::NetworkModel;
use crate::rng::stream;
use crate::tensor::{GradStore, Scalar, Tape, Tensor, Value};
use crate::{Error, Result};

/// Knobs for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: OptKind,
    pub lr: f64,
    /// Random warps applied to training images, when set.
    pub augment: Option<Augment>,
    /// Master seed for shuffling and augmentation draws.
    pub seed: u64,
    /// Chunk fraction for interleaving several training domains.
    pub mix_fraction: f64,
    /// Cap on per-domain samples for the per-epoch test pass. The final
    /// pass after restoration always runs in full.
    pub eval_subset: Option<usize>,
    /// Worker threads for per-sample gradient passes within a batch.
    pub workers: usize,
    /// Print one progress line per epoch to stderr.
    pub log: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch: 64,
            optimizer: OptKind::Adam,
            lr: 1e-3,
            augment: None,
            seed: 7,
            mix_fraction: 0.05,
            eval_subset: None,
            workers: 1,
            log: false,
        }
    }
}

/// One line of the training log: a loss and error for one split and
/// domain at one epoch. `domain` is `"all"` for the pooled row; `split`
/// is `train`, `test`, or `final` for the full pass after the best
/// parameters are restored.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub domain: String,
    pub loss: f64,
    pub error: f64,
}

/// Loss and error of one domain under [`evaluate`], with the sample
/// count that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainEval {
    pub domain: String,
    pub samples: usize,
    pub loss: f64,
    pub error: f64,
}

/// What a training run did.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub metrics: Vec<MetricRow>,
    /// Epoch whose parameters the model ended up with.
    pub best_epoch: usize,
    pub best_test_error: f64,
    /// Error of the restored model over the full test split.
    pub final_test_error: f64,
    pub final_test_loss: f64,
    pub epochs_run: usize,
    /// True when a non-finite loss cut the run short.
    pub diverged: bool,
}

/// A training source: hands out inputs and builds the per-sample loss.
///
/// Implemented by labelled datasets (softmax cross-entropy), paired
/// image sets (tanh output against the target image), and the
/// distillation wrapper in the lifelong module.
pub(crate) trait Corpus<E: Scalar>: Sync {
    fn name(&self) -> &str;
    fn len(&self) -> usize;
    fn input(&self, i: usize) -> &Tensor<E>;
    /// Build sample `i`'s loss on the tape from input value `x`.
    /// Returns the loss value and the sample's error contribution
    /// (0 or 1 for classification, a pixel error for regression).
    fn forward_loss(
        &self,
        model: &NetworkModel<E>,
        tape: &mut Tape<'_, E>,
        x: Value,
        head: usize,
        i: usize,
    ) -> Result<(Value, f64)>;
    /// Whether input warps leave the target meaningful.
    fn augmentable(&self) -> bool {
        true
    }
}

pub(crate) fn argmax<E: Scalar>(vals: &[E]) -> usize {
    let mut best = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > vals[best] {
            best = i;
        }
    }
    best
}

impl<E: Scalar> Corpus<E> for Dataset<E> {
    fn name(&self) -> &str {
        &self.name
    }

    fn len(&self) -> usize {
        self.images.len()
    }

    fn input(&self, i: usize) -> &Tensor<E> {
        &self.images[i]
    }

    fn forward_loss(
        &self,
        model: &NetworkModel<E>,
        tape: &mut Tape<'_, E>,
        x: Value,
        head: usize,
        i: usize,
    ) -> Result<(Value, f64)> {
        let logits = model.forward(tape, x, head)?;
        let probs = tape.softmax(logits);
        let target = tape.constant(&one_hot(self.labels[i], self.classes));
        let loss = tape.cross_entropy(probs, target)?;
        let err = if argmax(tape.values_of(logits)) == self.labels[i] { 0.0 } else { 1.0 };
        Ok((loss, err))
    }
}

impl<E: Scalar> Corpus<E> for PairSet<E> {
    fn name(&self) -> &str {
        &self.name
    }

    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn input(&self, i: usize) -> &Tensor<E> {
        &self.inputs[i]
    }

    fn forward_loss(
        &self,
        model: &NetworkModel<E>,
        tape: &mut Tape<'_, E>,
        x: Value,
        head: usize,
        i: usize,
    ) -> Result<(Value, f64)> {
        let pre = model.forward(tape, x, head)?;
        let out = tape.tanh_act(pre);
        let target = tape.constant(&self.targets[i]);
        let loss = tape.mse(out, target)?;
        let ov = tape.values_of(out);
        let tv = self.targets[i].values();
        let mae: f64 = ov
            .iter()
            .zip(tv)
            .map(|(&o, &t)| (Scalar::to_f64(o) - Scalar::to_f64(t)).abs())
            .sum::<f64>()
            / ov.len().max(1) as f64;
        Ok((loss, mae))
    }

    fn augmentable(&self) -> bool {
        false
    }
}

/// Train `head` on labelled datasets, one domain per entry.
pub fn fit<E: Scalar>(
    model: &mut NetworkModel<E>,
    head: usize,
    train: &[Dataset<E>],
    test: &[Dataset<E>],
    cfg: &TrainConfig,
) -> Result<FitReport> {
    let classes = head_classes(model, head)?;
    for d in train.iter().chain(test) {
        d.validate()?;
        if d.classes != classes {
            return Err(Error::Config(format!(
                "dataset {:?} has {} classes, head {} expects {classes}",
                d.name,
                d.classes,
                head + 1
            )));
        }
    }
    let train: Vec<&dyn Corpus<E>> = train.iter().map(|d| d as _).collect();
    let test: Vec<&dyn Corpus<E>> = test.iter().map(|d| d as _).collect();
    fit_impl(model, head, &train, &test, cfg)
}

/// Train `head` to map each input image to its paired target image.
pub fn fit_pairs<E: Scalar>(
    model: &mut NetworkModel<E>,
    head: usize,
    train: &[PairSet<E>],
    test: &[PairSet<E>],
    cfg: &TrainConfig,
) -> Result<FitReport> {
    for p in train.iter().chain(test) {
        if p.inputs.len() != p.targets.len() {
            return Err(Error::Data(format!(
                "pair set {:?} has {} inputs but {} targets",
                p.name,
                p.inputs.len(),
                p.targets.len()
            )));
        }
    }
    let train: Vec<&dyn Corpus<E>> = train.iter().map(|p| p as _).collect();
    let test: Vec<&dyn Corpus<E>> = test.iter().map(|p| p as _).collect();
    fit_impl(model, head, &train, &test, cfg)
}

fn head_classes<E: Scalar>(model: &NetworkModel<E>, head: usize) -> Result<usize> {
    model.meta().head_classes.get(head).copied().ok_or_else(|| {
        Error::Config(format!(
            "head {} of a network with {} heads",
            head + 1,
            model.heads()
        ))
    })
}

pub(crate) fn fit_impl<E: Scalar>(
    model: &mut NetworkModel<E>,
    head: usize,
    train: &[&dyn Corpus<E>],
    test: &[&dyn Corpus<E>],
    cfg: &TrainConfig,
) -> Result<FitReport> {
    if train.is_empty() || train.iter().any(|c| c.len() == 0) {
        return Err(Error::Config("training needs at least one non-empty domain".into()));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };
    let held_out = if test.is_empty() { train } else { test };

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut metrics = Vec::new();
    let mut best_snap = model.params.snapshot();
    let mut best_error = f64::INFINITY;
    let mut best_epoch = 0;
    let mut diverged = false;
    let mut epochs_run = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lens: Vec<usize> = train.iter().map(|c| c.len()).collect();
        let orders: Vec<Vec<usize>> = (0..train.len())
            .map(|d| {
                let mut idx: Vec<usize> = (0..lens[d]).collect();
                idx.shuffle(&mut stream(cfg.seed, "shuffle", &[epoch as u64, d as u64]));
                idx
            })
            .collect();
        let schedule: Vec<(usize, usize)> = if train.len() == 1 {
            orders[0].iter().map(|&i| (0, i)).collect()
        } else {
            interleave(&lens, cfg.mix_fraction)?
                .into_iter()
                .map(|(d, pos)| (d, orders[d][pos]))
                .collect()
        };

        let mut loss_sum = vec![0.0; train.len()];
        let mut err_sum = vec![0.0; train.len()];
        let mut seen = vec![0usize; train.len()];

        for batch in schedule.chunks(cfg.batch) {
            let sample = |&(d, i): &(usize, usize)| -> Result<(GradStore<E>, usize, f64, f64)> {
                let corpus = train[d];
                let mut tape = Tape::new(&model.params);
                let x = match &cfg.augment {
                    Some(aug) if corpus.augmentable() && !aug.is_identity() => {
                        let mut rng =
                            stream(cfg.seed, "augment", &[epoch as u64, d as u64, i as u64]);
                        let warped = aug.apply(corpus.input(i), &mut rng)?;
                        tape.constant(&warped)
                    }
                    _ => tape.constant(corpus.input(i)),
                };
                let (loss, err) = corpus.forward_loss(model, &mut tape, x, head, i)?;
                let lval = Scalar::to_f64(tape.values_of(loss)[0]);
                if !lval.is_finite() {
                    return Ok((GradStore::zeros(&model.params), d, lval, err));
                }
                let grads = tape.backward(loss)?;
                Ok((grads, d, lval, err))
            };

            let results: Vec<(GradStore<E>, usize, f64, f64)> = match &pool {
                Some(pool) => {
                    pool.install(|| batch.par_iter().map(sample).collect::<Result<_>>())?
                }
                None => batch.iter().map(sample).collect::<Result<_>>()?,
            };

            let mut grads = GradStore::zeros(&model.params);
            let mut batch_loss = 0.0;
            for (g, d, l, e) in &results {
                grads.merge(g);
                batch_loss += l;
                loss_sum[*d] += l;
                err_sum[*d] += e;
                seen[*d] += 1;
            }
            if !batch_loss.is_finite() {
                model.params.restore(&best_snap)?;
                diverged = true;
                if cfg.log {
                    eprintln!("epoch {epoch}: loss went non-finite, restoring epoch {best_epoch}");
                }
                break 'epochs;
            }
            grads.scale(E::from_f64(1.0 / batch.len() as f64));
            optimizer.step(&mut model.params, &grads);
        }
        epochs_run = epoch;

        if model.params.validate_finite().is_err() {
            model.params.restore(&best_snap)?;
            diverged = true;
            if cfg.log {
                eprintln!("epoch {epoch}: parameters went non-finite, restoring epoch {best_epoch}");
            }
            break 'epochs;
        }

        push_rows(&mut metrics, epoch, "train", train, &loss_sum, &err_sum, &seen);
        let evals = eval_impl(model, head, held_out, cfg.eval_subset)?;
        let overall = evals.last().expect("eval always returns a pooled row").clone();
        for ev in &evals {
            metrics.push(MetricRow {
                epoch,
                split: "test".into(),
                domain: ev.domain.clone(),
                loss: ev.loss,
                error: ev.error,
            });
        }
        if overall.error < best_error {
            best_error = overall.error;
            best_epoch = epoch;
            best_snap = model.params.snapshot();
        }
        if cfg.log {
            let total: usize = seen.iter().sum();
            let train_loss: f64 = loss_sum.iter().sum::<f64>() / total as f64;
            let train_err: f64 = err_sum.iter().sum::<f64>() / total as f64;
            eprintln!(
                "epoch {epoch}/{}: train loss {train_loss:.4} error {:.2}%, test error {:.2}% ({:.1}s)",
                cfg.epochs,
                100.0 * train_err,
                100.0 * overall.error,
                started.elapsed().as_secs_f64()
            );
        }
    }

    model.params.restore(&best_snap)?;
    let finals = eval_impl(model, head, held_out, None)?;
    let overall = finals.last().expect("eval always returns a pooled row").clone();
    for ev in &finals {
        metrics.push(MetricRow {
            epoch: best_epoch,
            split: "final".into(),
            domain: ev.domain.clone(),
            loss: ev.loss,
            error: ev.error,
        });
    }
    Ok(FitReport {
        metrics,
        best_epoch,
        best_test_error: best_error,
        final_test_error: overall.error,
        final_test_loss: overall.loss,
        epochs_run,
        diverged,
    })
}

fn push_rows<E: Scalar>(
    metrics: &mut Vec<MetricRow>,
    epoch: usize,
    split: &str,
    sets: &[&dyn Corpus<E>],
    loss_sum: &[f64],
    err_sum: &[f64],
    seen: &[usize],
) {
    for (d, corpus) in sets.iter().enumerate() {
        if seen[d] == 0 {
            continue;
        }
        metrics.push(MetricRow {
            epoch,
            split: split.into(),
            domain: corpus.name().to_string(),
            loss: loss_sum[d] / seen[d] as f64,
            error: err_sum[d] / seen[d] as f64,
        });
    }
    let total: usize = seen.iter().sum();
    if total > 0 {
        metrics.push(MetricRow {
            epoch,
            split: split.into(),
            domain: "all".into(),
            loss: loss_sum.iter().sum::<f64>() / total as f64,
            error: err_sum.iter().sum::<f64>() / total as f64,
        });
    }
}

/// Loss and error of one head over labelled datasets, one row per
/// domain plus a pooled `"all"` row. `subset` caps the samples taken
/// from each domain.
pub fn evaluate<E: Scalar>(
    model: &NetworkModel<E>,
    head: usize,
    data: &[Dataset<E>],
    subset: Option<usize>,
) -> Result<Vec<DomainEval>> {
    let sets: Vec<&dyn Corpus<E>> = data.iter().map(|d| d as _).collect();
    eval_impl(model, head, &sets, subset)
}

/// [`evaluate`] for paired image sets; the error column is mean
/// absolute pixel error.
pub fn evaluate_pairs<E: Scalar>(
    model: &NetworkModel<E>,
    head: usize,
    data: &[PairSet<E>],
    subset: Option<usize>,
) -> Result<Vec<DomainEval>> {
    let sets: Vec<&dyn Corpus<E>> = data.iter().map(|p| p as _).collect();
    eval_impl(model, head, &sets, subset)
}

pub(crate) fn eval_impl<E: Scalar>(
    model: &NetworkModel<E>,
    head: usize,
    sets: &[&dyn Corpus<E>],
    subset: Option<usize>,
) -> Result<Vec<DomainEval>> {
    let mut out = Vec::with_capacity(sets.len() + 1);
    let mut loss_total = 0.0;
    let mut err_total = 0.0;
    let mut n_total = 0usize;
    for corpus in sets {
        let n = subset.unwrap_or(usize::MAX).min(corpus.len());
        let mut loss_sum = 0.0;
        let mut err_sum = 0.0;
        for i in 0..n {
            let mut tape = Tape::new(&model.params);
            let x = tape.constant(corpus.input(i));
            let (loss, err) = corpus.forward_loss(model, &mut tape, x, head, i)?;
            loss_sum += Scalar::to_f64(tape.values_of(loss)[0]);
            err_sum += err;
        }
        loss_total += loss_sum;
        err_total += err_sum;
        n_total += n;
        out.push(DomainEval {
            domain: corpus.name().to_string(),
            samples: n,
            loss: if n > 0 { loss_sum / n as f64 } else { f64::NAN },
            error: if n > 0 { err_sum / n as f64 } else { f64::NAN },
        });
    }
    out.push(DomainEval {
        domain: "all".into(),
        samples: n_total,
        loss: if n_total > 0 { loss_total / n_total as f64 } else { f64::NAN },
        error: if n_total > 0 { err_total / n_total as f64 } else { f64::NAN },
    });
    Ok(out)
}

/// Write metric rows as `epoch,split,domain,loss,error` CSV.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = String::from("epoch,split,domain,loss,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.split, r.domain, r.loss, r.error
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_named;
    use crate::rng::stream;
    use rand::Rng;

    fn blob_set(name: &str, n: usize, seed: u64) -> Dataset<f32> {
        let mut rng = stream(seed, "toy", &[]);
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.random_range(0..2usize);
            let img = Tensor::from_fn(vec![1, 6, 6], |k| {
                let (r, c) = (k / 6, k % 6);
                let lit = if label == 0 { r < 3 && c < 3 } else { r >= 3 && c >= 3 };
                let base = if lit { 0.9 } else { 0.1 };
                base + rng.random_range(-0.05..0.05f32)
            });
            images.push(img);
            labels.push(label);
        }
        Dataset { name: name.into(), images, labels, classes: 2 }
    }

    #[test]
    fn fit_learns_a_separable_toy_problem() {
        let mut model = build_named::<f32>("x1 rF2", &[1, 6, 6], 2, 11).unwrap();
        let train = [blob_set("blobs", 80, 1)];
        let test = [blob_set("blobs", 40, 2)];
        let cfg = TrainConfig {
            epochs: 12,
            batch: 16,
            lr: 0.02,
            seed: 5,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, 0, &train, &test, &cfg).unwrap();
        assert!(!report.diverged);
        assert!(
            report.final_test_error <= 0.05,
            "final test error {}",
            report.final_test_error
        );
        assert!(report.metrics.iter().all(|r| r.loss.is_finite() && r.error.is_finite()));
        assert!(report.metrics.iter().any(|r| r.split == "final"));
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let run = || {
            let mut model = build_named::<f32>("x2 rF4 rF2", &[1, 6, 6], 2, 11).unwrap();
            let train = [blob_set("a", 30, 1), blob_set("b", 30, 3)];
            let test = [blob_set("a", 10, 2)];
            let cfg = TrainConfig {
                epochs: 2,
                batch: 8,
                seed: 9,
                augment: Some(Augment::default()),
                mix_fraction: 0.2,
                ..TrainConfig::default()
            };
            let report = fit(&mut model, 0, &train, &test, &cfg).unwrap();
            (model.params.snapshot(), report.metrics)
        };
        let (p1, m1) = run();
        let (p2, m2) = run();
        assert_eq!(p1, p2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn evaluate_pools_domains_exactly_and_honors_the_cap() {
        let model = build_named::<f32>("x1 rF2", &[1, 6, 6], 2, 13).unwrap();
        let sets = [blob_set("a", 12, 4), blob_set("b", 30, 5)];
        let evals = evaluate(&model, 0, &sets, Some(20)).unwrap();
        assert_eq!(evals.len(), 3);
        assert_eq!(evals[0].samples, 12);
        assert_eq!(evals[1].samples, 20);
        let all = &evals[2];
        assert_eq!(all.samples, 32);
        let pooled_loss = (evals[0].loss * 12.0 + evals[1].loss * 20.0) / 32.0;
        assert!((all.loss - pooled_loss).abs() < 1e-9);
        let pooled_err = (evals[0].error * 12.0 + evals[1].error * 20.0) / 32.0;
        assert!((all.error - pooled_err).abs() < 1e-9);
    }

    #[test]
    fn divergence_restores_the_last_good_parameters() {
        let mut model = build_named::<f32>("x1 rF2", &[1, 6, 6], 2, 17).unwrap();
        let before = model.params.snapshot();
        let train = [blob_set("blobs", 40, 1)];
        let cfg = TrainConfig {
            epochs: 5,
            batch: 8,
            optimizer: OptKind::Sgd { momentum: 0.0 },
            lr: 1e39,
            seed: 5,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, 0, &train, &[], &cfg).unwrap();
        assert!(report.diverged);
        assert!(report.epochs_run < 5 || report.best_epoch == 0);
        model.params.validate_finite().unwrap();
        assert_eq!(model.params.snapshot(), before);
    }

    #[test]
    fn metrics_csv_is_written_with_one_row_per_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricRow {
                epoch: 1,
                split: "train".into(),
                domain: "digits".into(),
                loss: 0.5,
                error: 0.125,
            },
            MetricRow {
                epoch: 1,
                split: "test".into(),
                domain: "all".into(),
                loss: 0.25,
                error: 0.0625,
            },
        ];
        write_metrics_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "epoch,split,domain,loss,error\n1,train,digits,0.5,0.125\n1,test,all,0.25,0.0625\n"
        );
    }

    #[test]
    fn mismatched_classes_are_rejected() {
        let mut model = build_named::<f32>("x1 rF2", &[1, 6, 6], 2, 19).unwrap();
        let mut bad = blob_set("bad", 10, 1);
        bad.classes = 3;
        bad.labels[0] = 2;
        let err = fit(&mut model, 0, &[bad], &[], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
}
