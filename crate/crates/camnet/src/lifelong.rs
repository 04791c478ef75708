//! Learning without Forgetting across a sequence of tasks.
//!
//! Each task gets its own head. Before a new phase starts, the old
//! heads' tempered predictions on the new task's images are recorded;
//! during the phase the old heads are frozen and the total loss is the
//! new head's cross-entropy plus a weighted distillation term that
//! holds every old head to its recorded predictions. No images from
//! earlier tasks are kept.

use std::path::Path;

use crate::arch;
use crate::data::{one_hot, Dataset};
use crate::network::NetworkModel;
use crate::tensor::{Scalar, Tape, Tensor, Value};
use crate::train::{self, Corpus, FitReport, TrainConfig};
use crate::{Error, Result};

/// Distillation weights for one phase.
#[derive(Debug, Clone, Copy)]
pub struct LwfConfig {
    /// Weight of each old head's distillation term in the total loss.
    /// Zero makes the phase plain fine-tuning.
    pub lambda_old: f64,
    /// Softmax temperature for both recording and distillation.
    pub temperature: f64,
}

impl Default for LwfConfig {
    fn default() -> Self {
        LwfConfig { lambda_old: 1.0, temperature: 2.0 }
    }
}

/// Old heads' tempered predictions on the new task's training images,
/// recorded once before a phase.
#[derive(Debug, Clone)]
pub struct SoftTargets<E: Scalar> {
    /// Which heads were recorded.
    pub heads: Vec<usize>,
    /// `rows[h][i]` is head `heads[h]`'s probability row for image `i`.
    pub rows: Vec<Vec<Tensor<E>>>,
    pub temperature: f64,
}

/// Append a freshly initialized head for the next task and freeze every
/// existing head. The shared trunk stays trainable. Returns the new
/// head's index.
pub fn add_task_head<E: Scalar>(model: &mut NetworkModel<E>, classes: usize) -> Result<usize> {
    let seed = model.meta().seed;
    let old_heads = model.heads();
    let head = arch::add_head(model, classes, seed)?;
    for h in 0..old_heads {
        for id in model.head_param_ids(h) {
            model.params.get_mut(id).trainable = false;
        }
    }
    Ok(head)
}

/// Record `heads`' probabilities at `temperature` for every image.
pub fn record_soft_targets<E: Scalar>(
    model: &NetworkModel<E>,
    heads: &[usize],
    images: &[Tensor<E>],
    temperature: f64,
) -> Result<SoftTargets<E>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let mut rows = vec![Vec::with_capacity(images.len()); heads.len()];
    for img in images {
        let mut tape = Tape::new(&model.params);
        let x = tape.constant(img);
        let logits = model.forward_heads(&mut tape, x, heads)?;
        for (h, &l) in logits.iter().enumerate() {
            let scaled = tape.scale(l, 1.0 / temperature);
            let probs = tape.softmax(scaled);
            rows[h].push(tape.tensor_of(probs));
        }
    }
    Ok(SoftTargets { heads: heads.to_vec(), rows, temperature })
}

/// Tempered cross-entropy of one old head against its recorded row,
/// scaled by the squared temperature so the term's gradient magnitude
/// stays comparable across temperatures.
pub fn distillation_loss<E: Scalar>(
    tape: &mut Tape<'_, E>,
    old_logits: Value,
    recorded: &Tensor<E>,
    temperature: f64,
) -> Result<Value> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let scaled = tape.scale(old_logits, 1.0 / temperature);
    let probs = tape.softmax(scaled);
    let target = tape.constant(recorded);
    let ce = tape.cross_entropy(probs, target)?;
    Ok(tape.scale(ce, temperature * temperature))
}

struct LwfCorpus<'a, E: Scalar> {
    data: &'a Dataset<E>,
    soft: &'a SoftTargets<E>,
    lambda: f64,
    new_head: usize,
}

impl<E: Scalar> Corpus<E> for LwfCorpus<'_, E> {
    fn name(&self) -> &str {
        &self.data.name
    }

    fn len(&self) -> usize {
        self.data.images.len()
    }

    fn input(&self, i: usize) -> &Tensor<E> {
        &self.data.images[i]
    }

    fn forward_loss(
        &self,
        model: &NetworkModel<E>,
        tape: &mut Tape<'_, E>,
        x: Value,
        head: usize,
        i: usize,
    ) -> Result<(Value, f64)> {
        if self.lambda == 0.0 || self.soft.heads.is_empty() {
            return self.data.forward_loss(model, tape, x, head, i);
        }
        let mut run = self.soft.heads.clone();
        run.push(self.new_head);
        let logits = model.forward_heads(tape, x, &run)?;
        let new_logits = logits[logits.len() - 1];
        let probs = tape.softmax(new_logits);
        let target = tape.constant(&one_hot(self.data.labels[i], self.data.classes));
        let mut total = tape.cross_entropy(probs, target)?;
        for (h, &l) in logits[..logits.len() - 1].iter().enumerate() {
            let d = distillation_loss(tape, l, &self.soft.rows[h][i], self.soft.temperature)?;
            let weighted = tape.scale(d, self.lambda);
            total = tape.add(total, weighted)?;
        }
        let err =
            if train::argmax(tape.values_of(new_logits)) == self.data.labels[i] { 0.0 } else { 1.0 };
        Ok((total, err))
    }
}

/// One phase: train the newest head on its task while distilling every
/// old head toward its recorded targets.
pub fn lwf_train<E: Scalar>(
    model: &mut NetworkModel<E>,
    new_head: usize,
    soft: &SoftTargets<E>,
    train_set: &Dataset<E>,
    test_set: &Dataset<E>,
    cfg: &LwfConfig,
    train_cfg: &TrainConfig,
) -> Result<FitReport> {
    train_set.validate()?;
    test_set.validate()?;
    if cfg.lambda_old < 0.0 {
        return Err(Error::Config(format!("lambda {} must not be negative", cfg.lambda_old)));
    }
    let want = model.meta().head_classes.get(new_head).copied().unwrap_or(0);
    if train_set.classes != want {
        return Err(Error::Config(format!(
            "task has {} classes, head {} expects {want}",
            train_set.classes,
            new_head + 1
        )));
    }
    for (h, rows) in soft.rows.iter().enumerate() {
        if rows.len() != train_set.images.len() {
            return Err(Error::Data(format!(
                "soft targets for head {} cover {} images, the task has {}",
                soft.heads[h] + 1,
                rows.len(),
                train_set.images.len()
            )));
        }
    }
    let corpus = LwfCorpus { data: train_set, soft, lambda: cfg.lambda_old, new_head };
    let train: [&dyn Corpus<E>; 1] = [&corpus];
    let test: [&dyn Corpus<E>; 1] = [test_set];
    train::fit_impl(model, new_head, &train, &test, train_cfg)
}

/// One task in a lifelong sequence.
#[derive(Debug, Clone)]
pub struct TaskData<E: Scalar> {
    pub train: Dataset<E>,
    pub test: Dataset<E>,
}

/// Accuracy of one task's head after one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct LwfHistoryRow {
    pub phase: usize,
    pub task: usize,
    pub accuracy: f64,
}

/// Train on `tasks` in order, starting from a fresh single-head model:
/// the first task trains normally, each later task gets a new head and
/// a distillation phase. After every phase, each trained task is scored
/// on its own test set, giving a lower-triangular accuracy history.
pub fn lwf_run<E: Scalar>(
    model: &mut NetworkModel<E>,
    tasks: &[TaskData<E>],
    cfg: &LwfConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<LwfHistoryRow>> {
    if tasks.is_empty() {
        return Err(Error::Config("a lifelong run needs at least one task".into()));
    }
    if model.heads() != 1 {
        return Err(Error::Config(format!(
            "lifelong runs start from a single-head model, this one has {} heads",
            model.heads()
        )));
    }
    let mut history = Vec::new();
    for (k, task) in tasks.iter().enumerate() {
        let phase = k + 1;
        if k == 0 {
            train::fit(
                model,
                0,
                std::slice::from_ref(&task.train),
                std::slice::from_ref(&task.test),
                train_cfg,
            )?;
        } else {
            let old: Vec<usize> = (0..model.heads()).collect();
            let soft = record_soft_targets(model, &old, &task.train.images, cfg.temperature)?;
            let head = add_task_head(model, task.train.classes)?;
            lwf_train(model, head, &soft, &task.train, &task.test, cfg, train_cfg)?;
        }
        for (t, earlier) in tasks.iter().take(phase).enumerate() {
            let evals =
                train::evaluate(model, t, std::slice::from_ref(&earlier.test), None)?;
            let pooled = evals.last().expect("evaluate always returns a pooled row");
            history.push(LwfHistoryRow { phase, task: t + 1, accuracy: 1.0 - pooled.error });
        }
    }
    Ok(history)
}

/// Write history rows as `phase,task,accuracy` CSV.
pub fn write_history_csv(path: &Path, rows: &[LwfHistoryRow]) -> Result<()> {
    let mut out = String::from("phase,task,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.phase, r.task, r.accuracy));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
