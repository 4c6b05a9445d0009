//! Sharpness-aware minimization.
//!
//! The inner maximization over the L2 ball of radius ρ is approximated by a
//! single ascent step `ε̂ = ρ ∇f / ‖∇f‖₂`; the returned gradient is `∇f`
//! evaluated at `x + ε̂`, with the second-order term dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ParamVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamConfig {
    pub rho: f64,
    pub weight_decay: f64,
}

impl Default for SamConfig {
    fn default() -> Self {
        Self { rho: 0.05, weight_decay: 0.0 }
    }
}

impl SamConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() || self.rho < 0.0 {
            return Err(Error::InvalidArgument(format!("rho must be finite and >= 0, got {}", self.rho)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// `ρ g / ‖g‖₂`, or zero when `g = 0`.
pub fn sam_perturbation(grad: &ParamVector, rho: f64) -> ParamVector {
    let n = grad.norm();
    if n == 0.0 {
        grad.zeros_like()
    } else {
        grad.scale(rho / n)
    }
}

/// Output of one SAM gradient evaluation.
#[derive(Debug, Clone)]
pub struct SamGradient {
    /// Loss at the unperturbed point.
    pub loss: f64,
    pub grad: ParamVector,
}

/// `∇f(x + ε̂(x)) + 2·wd·x`, using exactly two gradient evaluations.
pub fn sam_gradient<F>(mut loss_and_grad: F, x: &ParamVector, cfg: &SamConfig) -> Result<SamGradient>
where
    F: FnMut(&ParamVector) -> Result<(f64, ParamVector)>,
{
    let (loss, g) = loss_and_grad(x).map_err(|e| stage_error(e, "ascent"))?;
    if !loss.is_finite() || !g.is_finite() {
        return Err(Error::SamNonFinite { stage: "ascent" });
    }
    let eps = sam_perturbation(&g, cfg.rho);
    let perturbed = x.add_scaled(1.0, &eps);
    let (_, mut g_adv) = loss_and_grad(&perturbed).map_err(|e| stage_error(e, "descent"))?;
    if !g_adv.is_finite() {
        return Err(Error::SamNonFinite { stage: "descent" });
    }
    if cfg.weight_decay != 0.0 {
        g_adv.axpy(2.0 * cfg.weight_decay, x);
    }
    Ok(SamGradient { loss, grad: g_adv })
}

fn stage_error(e: Error, stage: &'static str) -> Error {
    match e {
        Error::NonFiniteLoss(_) => Error::SamNonFinite { stage },
        other => other,
    }
}

/// Lower bound on `max_{‖ε‖≤ρ} f(x+ε) − f(x)` from the ascent point and
/// `probes` random points on the sphere of radius ρ. Never negative.
pub fn sam_sharpness_gap<F>(
    mut loss_and_grad: F,
    x: &ParamVector,
    rho: f64,
    probes: usize,
    rng: &mut RngStream,
) -> Result<f64>
where
    F: FnMut(&ParamVector) -> Result<(f64, ParamVector)>,
{
    if probes == 0 {
        return Err(Error::InvalidArgument("probes must be >= 1".into()));
    }
    let (f0, g) = loss_and_grad(x)?;
    let mut best = f0;
    let (f_asc, _) = loss_and_grad(&x.add_scaled(1.0, &sam_perturbation(&g, rho)))?;
    if f_asc > best {
        best = f_asc;
    }
    for _ in 0..probes {
        let dir: Vec<f64> = (0..x.len()).map(|_| rng.normal()).collect();
        let dir = x.with_values(dir)?;
        let n = dir.norm();
        if n == 0.0 {
            continue;
        }
        let (f, _) = loss_and_grad(&x.add_scaled(rho / n, &dir))?;
        if f > best {
            best = f;
        }
    }
    Ok(best - f0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: &ParamVector) -> Result<(f64, ParamVector)> {
        Ok((x.dot(x), x.scale(2.0)))
    }

    #[test]
    fn perturbation_examples() {
        let e = sam_perturbation(&ParamVector::from_values(vec![6.0]), 0.05);
        assert_eq!(e.values, vec![0.05]);
        let e = sam_perturbation(&ParamVector::from_values(vec![3.0, 4.0]), 1.0);
        assert!((e.values[0] - 0.6).abs() < 1e-15 && (e.values[1] - 0.8).abs() < 1e-15);
        let e = sam_perturbation(&ParamVector::from_values(vec![0.0, 0.0]), 1.0);
        assert_eq!(e.values, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_square() {
        let x = ParamVector::from_values(vec![3.0]);
        let mut calls = 0;
        let out = sam_gradient(
            |w| {
                calls += 1;
                square(w)
            },
            &x,
            &SamConfig { rho: 0.05, weight_decay: 0.0 },
        )
        .unwrap();
        assert_eq!(calls, 2);
        assert!((out.grad.values[0] - 6.10).abs() < 1e-10);
        assert_eq!(out.loss, 9.0);
    }

    #[test]
    fn zero_rho_and_constant_loss() {
        let x = ParamVector::from_values(vec![1.5, -2.0]);
        let plain = square(&x).unwrap().1;
        let out = sam_gradient(square, &x, &SamConfig { rho: 0.0, weight_decay: 0.0 }).unwrap();
        assert_eq!(out.grad, plain);
        let out =
            sam_gradient(|w: &ParamVector| Ok((4.0, w.zeros_like())), &x, &SamConfig { rho: 0.05, weight_decay: 0.25 })
                .unwrap();
        assert_eq!(out.grad.values, vec![0.75, -1.0]);
    }

    #[test]
    fn non_finite_stage_is_reported() {
        let x = ParamVector::from_values(vec![1.0]);
        let err = sam_gradient(|_| Ok((f64::NAN, ParamVector::from_values(vec![1.0]))), &x, &SamConfig::default());
        assert!(matches!(err, Err(Error::SamNonFinite { stage: "ascent" })));
        let mut first = true;
        let err = sam_gradient(
            |w| {
                if std::mem::take(&mut first) {
                    square(w)
                } else {
                    Ok((0.0, ParamVector::from_values(vec![f64::INFINITY])))
                }
            },
            &x,
            &SamConfig::default(),
        );
        assert!(matches!(err, Err(Error::SamNonFinite { stage: "descent" })));
    }

    #[test]
    fn sharpness_gap_closed_form() {
        // f = ½λx², λ = 2: the ball maximum at x = 0 is ½λρ² = 0.01
        let f = |w: &ParamVector| Ok((w.dot(w), w.scale(2.0)));
        let x = ParamVector::from_values(vec![0.0]);
        let gap = sam_sharpness_gap(f, &x, 0.1, 32, &mut RngStream::new(0)).unwrap();
        assert!((0.9 * 0.01..=0.01 + 1e-15).contains(&gap), "{gap}");
        let c = |w: &ParamVector| Ok((3.0, w.zeros_like()));
        assert_eq!(sam_sharpness_gap(c, &x, 0.1, 4, &mut RngStream::new(0)).unwrap(), 0.0);
    }
}
