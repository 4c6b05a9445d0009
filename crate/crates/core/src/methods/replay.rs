//! Episodic memory shared by experience replay and A-GEM.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Batch, Dataset, ModelState, TaskId};
use crate::numcore::{Matrix, ParamVector, RngStream};

/// Stored examples keyed by `(task, class)`, at most `mem_per_class` each.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    mem_per_class: usize,
    slots: BTreeMap<(TaskId, usize), Vec<Vec<f64>>>,
}

/// A borrowed stored example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayExample<'a> {
    pub task: TaskId,
    pub label: usize,
    pub input: &'a [f64],
}

impl ReplayBuffer {
    pub fn new(mem_per_class: usize) -> Self {
        Self { mem_per_class, slots: BTreeMap::new() }
    }

    pub fn mem_per_class(&self) -> usize {
        self.mem_per_class
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        let mut t: Vec<TaskId> = self.slots.keys().map(|(t, _)| *t).collect();
        t.dedup();
        t
    }

    /// Every stored example in key order.
    pub fn examples(&self) -> impl Iterator<Item = ReplayExample<'_>> {
        self.slots
            .iter()
            .flat_map(|(&(task, label), xs)| xs.iter().map(move |x| ReplayExample { task, label, input: x.as_slice() }))
    }

    /// `k` distinct stored examples chosen uniformly, `k <= len()`.
    pub fn sample(&self, k: usize, rng: &mut RngStream) -> Vec<ReplayExample<'_>> {
        let all: Vec<ReplayExample<'_>> = self.examples().collect();
        let mut picks = rng.sample_without_replacement(all.len(), k.min(all.len()));
        picks.sort_unstable();
        picks.into_iter().map(|i| all[i]).collect()
    }
}

/// Stores `mem_per_class` randomly chosen training examples of every class
/// of `task`, replacing whatever that task held before. Returns the classes
/// that had no examples; their slots stay empty.
pub fn er_update(
    buffer: &mut ReplayBuffer,
    task: TaskId,
    data: &Dataset,
    classes: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    buffer.slots.retain(|(t, _), _| *t != task);
    let mut missing = Vec::new();
    for class in 0..classes {
        let members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if members.is_empty() {
            log::warn!("task {task} class {class} has no examples; replay slot left empty");
            missing.push(class);
            continue;
        }
        let k = buffer.mem_per_class.min(members.len());
        let picks = rng.sample_without_replacement(members.len(), k);
        let stored = picks.into_iter().map(|p| data.inputs.row(members[p]).to_vec()).collect();
        buffer.slots.insert((task, class), stored);
    }
    missing
}

/// Mean loss over examples that may come from several tasks, with its
/// gradient at `w`. Each task's examples go through that task's head.
pub fn replay_loss_and_grad(
    model: &ModelState,
    w: &ParamVector,
    examples: &[ReplayExample<'_>],
) -> Result<(f64, ParamVector)> {
    if examples.is_empty() {
        return Err(Error::EmptyData("replay batch".into()));
    }
    let mut by_task: BTreeMap<TaskId, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for e in examples {
        let entry = by_task.entry(e.task).or_default();
        entry.0.extend_from_slice(e.input);
        entry.1.push(e.label);
    }
    let total = examples.len() as f64;
    let mut loss = 0.0;
    let mut grad = w.zeros_like();
    for (task, (values, labels)) in by_task {
        let n = labels.len();
        let data = Dataset::new(Matrix::new(n, values.len() / n, values)?, labels)?;
        let (l, g) = model.loss_and_grad_at(w, &Batch::new(&data, task))?;
        let weight = n as f64 / total;
        loss += weight * l;
        grad.axpy(weight, &g);
    }
    Ok((loss, grad))
}

/// Current-batch loss plus the mean loss of a replay batch.
pub fn er_objective(
    model: &ModelState,
    w: &ParamVector,
    batch: &Batch<'_>,
    replay: &[ReplayExample<'_>],
) -> Result<(f64, ParamVector)> {
    let (mut loss, mut grad) = model.loss_and_grad_at(w, batch)?;
    if !replay.is_empty() {
        let (rl, rg) = replay_loss_and_grad(model, w, replay)?;
        loss += rl;
        grad.axpy(1.0, &rg);
    }
    Ok((loss, grad))
}

/// One SGD step on the current batch plus a replay batch of
/// `min(buffer size, batch size)` examples. Returns the combined loss.
pub fn er_step(
    model: &mut ModelState,
    batch: &Batch<'_>,
    buffer: &ReplayBuffer,
    lr: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let replay = if buffer.is_empty() { Vec::new() } else { buffer.sample(batch.len(), rng) };
    let (loss, grad) = er_objective(model, model.params(), batch, &replay)?;
    model.sgd_step(lr, &grad)?;
    Ok(loss)
}

/// Removes the component of `g` that conflicts with `g_ref`.
///
/// Returns `g` unchanged when `g·g_ref >= 0` or `g_ref = 0`, otherwise
/// `g − (g·g_ref / g_ref·g_ref) g_ref`.
pub fn agem_project(g: &ParamVector, g_ref: &ParamVector) -> ParamVector {
    let dot = g.dot(g_ref);
    let ref_sq = g_ref.dot(g_ref);
    if dot >= 0.0 || ref_sq == 0.0 {
        return g.clone();
    }
    g.add_scaled(-dot / ref_sq, g_ref)
}
