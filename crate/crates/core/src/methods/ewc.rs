//! Elastic weight consolidation: diagonal Fisher estimates and the
//! quadratic anchor penalty.

use crate::error::{Error, Result};
use crate::model::{Batch, Dataset, ModelState, TaskId};
use crate::numcore::{ParamVector, RngStream};

/// Parameters after a task plus the diagonal Fisher measured there.
#[derive(Debug, Clone)]
pub struct EwcAnchor {
    pub task: TaskId,
    pub params: ParamVector,
    pub fisher: ParamVector,
}

/// Entrywise mean of squared per-example gradients.
pub fn fisher_from_gradients(grads: &[ParamVector]) -> Result<ParamVector> {
    let first = grads.first().ok_or_else(|| Error::EmptyData("no gradients for Fisher estimate".into()))?;
    let mut acc = first.zeros_like();
    for g in grads {
        acc.check_layout(g)?;
        for (a, v) in acc.values.iter_mut().zip(&g.values) {
            *a += v * v;
        }
    }
    let n = grads.len() as f64;
    for a in &mut acc.values {
        *a /= n;
    }
    Ok(acc)
}

/// Diagonal Fisher of `task` at the model's current parameters.
///
/// For each sampled example a label is drawn from the model's own predictive
/// distribution and the squared gradient of its log-likelihood is averaged.
/// Examples are drawn without replacement, or with replacement when
/// `sample_count` exceeds the data size.
pub fn ewc_fisher_diag(
    model: &ModelState,
    data: &Dataset,
    task: TaskId,
    sample_count: usize,
    rng: &mut RngStream,
) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::EmptyData(format!("Fisher estimate for task {task}")));
    }
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be >= 1".into()));
    }
    let indices: Vec<usize> = if sample_count <= data.len() {
        rng.sample_without_replacement(data.len(), sample_count)
    } else {
        (0..sample_count).map(|_| rng.below(data.len())).collect()
    };
    let mut grads = Vec::with_capacity(indices.len());
    for i in indices {
        let mut one = data.subset(&[i]);
        let logits = model.forward(&Batch::new(&one, task))?.logits;
        let z = logits.row(0);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = probs.iter().sum();
        let u = rng.uniform() * total;
        let mut acc = 0.0;
        let mut label = probs.len() - 1;
        for (c, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                label = c;
                break;
            }
        }
        one.labels[0] = label;
        // gradient of -log p(y|x); the sign vanishes when squared
        let (_, g) = model.loss_and_grad(&Batch::new(&one, task))?;
        grads.push(g);
    }
    fisher_from_gradients(&grads)
}

/// `(λ/2) Σ_k Σ_i F_{k,i} (θ_i − θ*_{k,i})²` and its gradient.
pub fn ewc_penalty_grad(params: &ParamVector, anchors: &[EwcAnchor], lambda: f64) -> Result<(f64, ParamVector)> {
    let mut penalty = 0.0;
    let mut grad = params.zeros_like();
    for a in anchors {
        params.check_layout(&a.params)?;
        params.check_layout(&a.fisher)?;
        for i in 0..params.len() {
            let d = params.values[i] - a.params.values[i];
            let f = a.fisher.values[i];
            penalty += f * d * d;
            grad.values[i] += lambda * f * d;
        }
    }
    Ok((0.5 * lambda * penalty, grad))
}
