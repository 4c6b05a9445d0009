//! Sequential training over a task stream with finetune, EWC, experience
//! replay, A-GEM or Stable SGD, optionally wrapped in SAM.
//!
//! Per step the order is fixed: the base objective (current batch, plus the
//! replay batch for ER) is differentiated, through SAM when enabled; then the
//! EWC penalty gradient is added; then A-GEM projects against the memory
//! gradient; then a plain SGD update is applied.

mod ewc;
mod replay;

use serde::{Deserialize, Serialize};

pub use ewc::{ewc_fisher_diag, ewc_penalty_grad, fisher_from_gradients, EwcAnchor};
pub use replay::{agem_project, er_objective, er_step, er_update, replay_loss_and_grad, ReplayBuffer, ReplayExample};

use crate::error::{Error, Result};
use crate::metrics::ScoreMatrix;
use crate::model::{Batch, HeadSpec, InitScheme, ModelState, TaskId};
use crate::numcore::{ParamVector, RngStream};
use crate::sam::{sam_gradient, SamConfig};
use crate::tasks::{TaskStream, WarmStartCorpus};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Finetune,
    Ewc,
    Er,
    Agem,
    StableSgd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Ewc => "ewc",
            Method::Er => "er",
            Method::Agem => "agem",
            Method::StableSgd => "stable_sgd",
        }
    }

    fn uses_memory(self) -> bool {
        matches!(self, Method::Er | Method::Agem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StableSgdConfig {
    pub lr0: f64,
    pub lr_decay_per_task: f64,
    pub batch: usize,
}

impl Default for StableSgdConfig {
    fn default() -> Self {
        Self { lr0: 0.1, lr_decay_per_task: 0.9, batch: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub method: Method,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ewc_lambda: f64,
    /// Examples drawn per Fisher estimate.
    pub ewc_fisher_samples: usize,
    pub er_mem_per_class: usize,
    pub stable: StableSgdConfig,
    pub sam: Option<SamConfig>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: Method::Finetune,
            lr: 0.01,
            batch_size: 10,
            epochs: 5,
            ewc_lambda: 1.0,
            ewc_fisher_samples: 200,
            er_mem_per_class: 1,
            stable: StableSgdConfig::default(),
            sam: None,
        }
    }
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self { method, ..Self::default() }
    }

    pub fn with_sam(mut self, sam: SamConfig) -> Self {
        self.sam = Some(sam);
        self
    }

    /// Short name used in file names, e.g. `er` or `finetune-sam`.
    pub fn label(&self) -> String {
        match self.sam {
            Some(_) => format!("{}-sam", self.method.name()),
            None => self.method.name().to_owned(),
        }
    }

    /// Checks every field; the error names the offending field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let bad = |f: &'static str, m: &str| Err((f, m.to_owned()));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1");
        }
        if !(self.ewc_lambda >= 0.0) {
            return bad("ewc_lambda", "must be >= 0");
        }
        if self.ewc_fisher_samples == 0 {
            return bad("ewc_fisher_samples", "must be >= 1");
        }
        if self.er_mem_per_class == 0 {
            return bad("er_mem_per_class", "must be >= 1");
        }
        if !(self.stable.lr0 > 0.0) {
            return bad("stable.lr0", "must be > 0");
        }
        if !(self.stable.lr_decay_per_task > 0.0 && self.stable.lr_decay_per_task <= 1.0) {
            return bad("stable.lr_decay_per_task", "must be in (0, 1]");
        }
        if self.stable.batch == 0 {
            return bad("stable.batch", "must be >= 1");
        }
        if let Some(sam) = &self.sam {
            sam.validate().map_err(|e| ("sam.rho", e.to_string()))?;
        }
        Ok(())
    }

    fn schedule(&self, task_index: usize) -> (f64, usize) {
        match self.method {
            Method::StableSgd => {
                (stable_sgd_lr(self.stable.lr0, self.stable.lr_decay_per_task, task_index), self.stable.batch)
            }
            _ => (self.lr, self.batch_size),
        }
    }
}

/// `lr0 · decay^task_index`, held constant within a task.
pub fn stable_sgd_lr(lr0: f64, decay: f64, task_index: usize) -> f64 {
    lr0 * decay.powi(task_index as i32)
}

/// Record of one task of a sequential run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub task: TaskId,
    #[serde(with = "crate::io::f17")]
    pub lr: f64,
    /// Mean training objective of every epoch.
    #[serde(with = "crate::io::f17_vec")]
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub order: Vec<TaskId>,
    pub tasks: Vec<TaskLog>,
    pub scores: ScoreMatrix,
    /// Episodic memory size at the end of the run (0 for memory-free methods).
    pub buffer_size: usize,
    /// Parameters after each task, in order.
    #[serde(skip)]
    pub snapshots: Vec<ParamVector>,
}

fn diverged(e: Error, task: TaskId, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFiniteLoss(_) | Error::SamNonFinite { .. } => Error::Diverged { task, epoch, step, loss: f64::NAN },
        other => other,
    }
}

/// Trains `model` on every task of `stream` in order.
///
/// After each task the test accuracy on every task seen so far fills one
/// score-matrix row and the parameters are snapshotted.
pub fn train_sequence(
    model: &mut ModelState,
    stream: &TaskStream,
    cfg: &MethodConfig,
    rng: &RngStream,
) -> Result<TrainLog> {
    cfg.validate().map_err(|(f, m)| Error::InvalidArgument(format!("{f}: {m}")))?;
    if let Some(t) = stream.tasks.iter().find(|t| !model.has_head(t.task)) {
        return Err(Error::MissingHead(t.task));
    }
    let mut buffer = ReplayBuffer::new(cfg.er_mem_per_class);
    let mut anchors: Vec<EwcAnchor> = Vec::new();
    let mut scores = ScoreMatrix::new();
    let mut task_logs = Vec::with_capacity(stream.tasks.len());
    let mut snapshots = Vec::with_capacity(stream.tasks.len());

    for (idx, spec) in stream.tasks.iter().enumerate() {
        let (lr, batch_size) = cfg.schedule(idx);
        let mut step_rng = rng.child(&format!("task{idx}/steps"));
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        if spec.train.is_empty() {
            return Err(Error::EmptyData(format!("training split of task {}", spec.task)));
        }
        for epoch in 0..cfg.epochs {
            let order = step_rng.permutation(spec.train.len());
            let mut total = 0.0;
            let mut steps = 0;
            for (step, chunk) in order.chunks(batch_size).enumerate() {
                let mb = spec.train.subset(chunk);
                let batch = Batch::new(&mb, spec.task);
                let replay = if cfg.method == Method::Er && !buffer.is_empty() {
                    buffer.sample(chunk.len(), &mut step_rng)
                } else {
                    Vec::new()
                };
                let objective = |w: &ParamVector| er_objective(model, w, &batch, &replay);
                let (loss, mut grad) = match &cfg.sam {
                    Some(sam) => {
                        let out = sam_gradient(objective, model.params(), sam);
                        let out = out.map_err(|e| diverged(e, spec.task, epoch, step))?;
                        (out.loss, out.grad)
                    }
                    None => objective(model.params()).map_err(|e| diverged(e, spec.task, epoch, step))?,
                };
                if !loss.is_finite() {
                    return Err(Error::Diverged { task: spec.task, epoch, step, loss });
                }
                if cfg.method == Method::Ewc && !anchors.is_empty() {
                    let (_, pg) = ewc_penalty_grad(model.params(), &anchors, cfg.ewc_lambda)?;
                    grad.axpy(1.0, &pg);
                }
                if cfg.method == Method::Agem && !buffer.is_empty() {
                    let reference = buffer.sample(chunk.len(), &mut step_rng);
                    let (_, g_ref) = replay_loss_and_grad(model, model.params(), &reference)?;
                    grad = agem_project(&grad, &g_ref);
                }
                model.sgd_step(lr, &grad)?;
                total += loss;
                steps += 1;
            }
            epoch_losses.push(total / steps as f64);
        }

        if cfg.method.uses_memory() {
            let mut mem_rng = rng.child(&format!("task{idx}/memory"));
            er_update(&mut buffer, spec.task, &spec.train, spec.classes, &mut mem_rng);
        }
        if cfg.method == Method::Ewc {
            let mut fisher_rng = rng.child(&format!("task{idx}/fisher"));
            let fisher = ewc_fisher_diag(model, &spec.train, spec.task, cfg.ewc_fisher_samples, &mut fisher_rng)?;
            anchors.push(EwcAnchor { task: spec.task, params: model.params().clone(), fisher });
        }

        let row = stream.tasks[..=idx].iter().map(|t| model.accuracy(&t.test, t.task)).collect::<Result<Vec<_>>>()?;
        scores.push_row(row)?;
        snapshots.push(model.params().clone());
        task_logs.push(TaskLog { task: spec.task, lr, epoch_losses });
    }

    Ok(TrainLog { order: stream.task_ids(), tasks: task_logs, scores, buffer_size: buffer.len(), snapshots })
}

/// Task id reserved for the temporary pre-training head.
pub const WARM_START_TASK: TaskId = TaskId::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStartReport {
    pub final_loss: f64,
    pub corpus_accuracy: f64,
}

/// Pre-trains the trunk on a pooled corpus through a temporary head, then
/// discards the head. Task heads of `model` are left untouched.
pub fn warm_start(
    model: &mut ModelState,
    corpus: &WarmStartCorpus,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &RngStream,
) -> Result<WarmStartReport> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut spec = model.spec().clone();
    spec.heads = vec![HeadSpec { task: WARM_START_TASK, classes: corpus.classes }];
    let mut temp = ModelState::init(spec, &mut rng.child("warm/head"), InitScheme::UniformGlorot)?;
    let trunk = model.trunk_span();
    let mut values = temp.params().values.clone();
    values[trunk.clone()].copy_from_slice(&model.params().values[trunk.clone()]);
    temp.set_params(temp.params().with_values(values)?)?;

    let mut step_rng = rng.child("warm/steps");
    let mut final_loss = f64::NAN;
    for epoch in 0..epochs {
        let order = step_rng.permutation(corpus.train.len());
        let mut total = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(batch_size).enumerate() {
            let mb = corpus.train.subset(chunk);
            let (loss, grad) = temp
                .loss_and_grad(&Batch::new(&mb, WARM_START_TASK))
                .map_err(|e| diverged(e, WARM_START_TASK, epoch, step))?;
            temp.sgd_step(lr, &grad)?;
            total += loss;
            steps += 1;
        }
        final_loss = total / steps.max(1) as f64;
    }
    let corpus_accuracy = if corpus.test.is_empty() { f64::NAN } else { temp.accuracy(&corpus.test, WARM_START_TASK)? };

    let mut values = model.params().values.clone();
    values[trunk.clone()].copy_from_slice(&temp.params().values[trunk]);
    model.set_params(model.params().with_values(values)?)?;
    Ok(WarmStartReport { final_loss, corpus_accuracy })
}
