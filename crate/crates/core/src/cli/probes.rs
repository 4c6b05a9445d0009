//! Landscape probes bound to a model's task loss.

use serde::{Deserialize, Serialize};

use super::config::{ContourProbe, CurvatureProbe, SharpnessProbe};
use crate::error::Result;
use crate::landscape::{
    build_plane, contour_grid, hessian_vector_product, interpolate, sharpness, verify_forgetting_bound, ContourGrid,
    ForgettingBoundReport, LandscapePlane, PowerIterationConfig, SharpnessConfig,
};
use crate::model::{Batch, Dataset, ModelState, TaskId};
use crate::numcore::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessRecord {
    pub task: TaskId,
    /// 1-based position of the task in its sequence, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    #[serde(with = "crate::io::f17")]
    pub epsilon: f64,
    pub p: usize,
    #[serde(with = "crate::io::f17")]
    pub phi: f64,
    #[serde(with = "crate::io::f17")]
    pub base_loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureRecord {
    pub task: TaskId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    pub report: ForgettingBoundReport,
}

/// Loss of one task's head on a fixed dataset, as a function of parameters.
pub struct TaskLoss<'a> {
    pub model: &'a ModelState,
    pub data: &'a Dataset,
    pub task: TaskId,
}

impl TaskLoss<'_> {
    pub fn loss(&self, w: &ParamVector) -> Result<f64> {
        self.model.loss_at(w, self.data, self.task)
    }

    pub fn loss_and_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        self.model.loss_and_grad_at(w, &Batch::new(self.data, self.task))
    }

    pub fn contour(&self, anchors: [&ParamVector; 3], probe: &ContourProbe) -> Result<(LandscapePlane, ContourGrid)> {
        let plane = build_plane(anchors[0], anchors[1], anchors[2])?;
        let grid = contour_grid(&plane, |w| self.loss(w), probe.resolution, probe.margin)?;
        Ok((plane, grid))
    }

    pub fn interpolation(&self, wa: &ParamVector, wb: &ParamVector, steps: usize) -> Result<Vec<(f64, f64)>> {
        interpolate(wa, wb, steps, |w| self.loss(w))
    }

    /// One record per ε.
    pub fn sharpness(
        &self,
        w: &ParamVector,
        position: Option<usize>,
        probe: &SharpnessProbe,
        seed: u64,
    ) -> Result<Vec<SharpnessRecord>> {
        probe
            .epsilons
            .iter()
            .map(|&epsilon| {
                let cfg = SharpnessConfig { epsilon, p: probe.p, max_iters: probe.max_iters, seed };
                let r = sharpness(|x| self.loss_and_grad(x), w, &cfg)?;
                Ok(SharpnessRecord {
                    task: self.task,
                    position,
                    epsilon,
                    p: probe.p,
                    phi: r.phi,
                    base_loss: r.base_loss,
                    seed,
                })
            })
            .collect()
    }

    /// Forgetting bound for moving from `w1` (this task's minimum) to `w2`.
    pub fn curvature(
        &self,
        w1: &ParamVector,
        w2: &ParamVector,
        position: Option<usize>,
        probe: &CurvatureProbe,
        seed: u64,
    ) -> Result<CurvatureRecord> {
        let grad = |w: &ParamVector| self.loss_and_grad(w).map(|(_, g)| g);
        let hvp = |v: &ParamVector| hessian_vector_product(grad, w1, v, probe.h);
        let power = PowerIterationConfig { iters: probe.iters, tol: probe.tol, seed };
        let report = verify_forgetting_bound(|w| self.loss(w), w1, w2, hvp, &power)?;
        Ok(CurvatureRecord { task: self.task, position, report })
    }
}
