//! Loss-geometry probes around task minima.
//!
//! All probes take the loss as a closure over a [`ParamVector`], so they work
//! on a trained model (through [`ModelState::loss_at`](crate::model::ModelState::loss_at))
//! as well as on closed-form test functions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::numcore::{gram_schmidt_pair, least_squares_apply, Matrix, ParamVector, RngStream};

/// Affine plane through three parameter vectors.
#[derive(Debug, Clone)]
pub struct LandscapePlane {
    pub origin: ParamVector,
    pub d1: ParamVector,
    pub d2: ParamVector,
    /// Plane coordinates of `w1`, `w2`, `w3`.
    pub anchor_coords: [(f64, f64); 3],
}

impl LandscapePlane {
    /// `origin + a·d1 + b·d2`
    pub fn point(&self, a: f64, b: f64) -> ParamVector {
        let mut p = self.origin.add_scaled(a, &self.d1);
        p.axpy(b, &self.d2);
        p
    }
}

/// Plane with `w1` at the origin and `w2` on the first axis.
pub fn build_plane(w1: &ParamVector, w2: &ParamVector, w3: &ParamVector) -> Result<LandscapePlane> {
    w1.check_layout(w2)?;
    w1.check_layout(w3)?;
    let u = w2.sub(w1);
    let v = w3.sub(w1);
    let (d1, d2) = gram_schmidt_pair(&u, &v)?;
    let anchor_coords = [(0.0, 0.0), (u.norm(), 0.0), (v.dot(&d1), v.dot(&d2))];
    Ok(LandscapePlane { origin: w1.clone(), d1, d2, anchor_coords })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
    /// `losses[j * a_values.len() + i]` is the loss at `(a_values[i], b_values[j])`.
    pub losses: Vec<f64>,
    /// Loss at each anchor's plane coordinates.
    pub anchor_losses: [f64; 3],
}

impl ContourGrid {
    pub fn resolution(&self) -> usize {
        self.a_values.len()
    }

    /// `a,b,loss` rows, `b` outer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b,loss\n");
        for (j, &b) in self.b_values.iter().enumerate() {
            for (i, &a) in self.a_values.iter().enumerate() {
                let loss = self.losses[j * self.a_values.len() + i];
                out.push_str(&format!("{},{},{}\n", fmt_f64(a), fmt_f64(b), fmt_f64(loss)));
            }
        }
        out
    }

    pub fn anchors_csv(&self, plane: &LandscapePlane) -> String {
        let mut out = String::from("anchor,a,b,loss\n");
        for (k, ((a, b), loss)) in plane.anchor_coords.iter().zip(&self.anchor_losses).enumerate() {
            out.push_str(&format!("w{},{},{},{}\n", k + 1, fmt_f64(*a), fmt_f64(*b), fmt_f64(*loss)));
        }
        out
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
}

/// Evaluates the loss on a `resolution × resolution` lattice covering the
/// anchors' bounding box widened by `margin` of its extent on every side.
/// Cells are evaluated in parallel; the output order is fixed.
pub fn contour_grid<F>(plane: &LandscapePlane, loss_at: F, resolution: usize, margin: f64) -> Result<ContourGrid>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be >= 2".into()));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidArgument("margin must be >= 0".into()));
    }
    let axis = |sel: fn(&(f64, f64)) -> f64| {
        let vals: Vec<f64> = plane.anchor_coords.iter().map(sel).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = margin * (hi - lo);
        linspace(lo - pad, hi + pad, resolution)
    };
    let a_values = axis(|c| c.0);
    let b_values = axis(|c| c.1);
    let losses = (0..resolution * resolution)
        .into_par_iter()
        .map(|cell| loss_at(&plane.point(a_values[cell % resolution], b_values[cell / resolution])))
        .collect::<Result<Vec<f64>>>()?;
    let mut anchor_losses = [0.0; 3];
    for (slot, &(a, b)) in anchor_losses.iter_mut().zip(&plane.anchor_coords) {
        *slot = loss_at(&plane.point(a, b))?;
    }
    Ok(ContourGrid { a_values, b_values, losses, anchor_losses })
}

/// Loss along `(1−α)·wa + α·wb` for `steps` uniform α in [0, 1].
pub fn interpolate<F>(wa: &ParamVector, wb: &ParamVector, steps: usize, loss_at: F) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    if steps < 2 {
        return Err(Error::InvalidArgument("steps must be >= 2".into()));
    }
    wa.check_layout(wb)?;
    linspace(0.0, 1.0, steps)
        .into_par_iter()
        .map(|alpha| {
            let values = wa.values.iter().zip(&wb.values).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect();
            Ok((alpha, loss_at(&wa.with_values(values)?)?))
        })
        .collect()
}

pub fn interpolation_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("alpha,loss\n");
    for (a, l) in curve {
        out.push_str(&format!("{},{}\n", fmt_f64(*a), fmt_f64(*l)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharpnessConfig {
    pub epsilon: f64,
    /// Subspace dimension; 0 searches the full parameter space.
    pub p: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self { epsilon: 1e-3, p: 0, max_iters: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessResult {
    /// `100 · (max f − f(x)) / (1 + f(x))`, never negative.
    #[serde(with = "crate::io::f17")]
    pub phi: f64,
    #[serde(with = "crate::io::f17_vec")]
    pub argmax_z: Vec<f64>,
    #[serde(with = "crate::io::f17")]
    pub base_loss: f64,
    #[serde(with = "crate::io::f17")]
    pub max_loss: f64,
    pub iterations: usize,
}

/// Random `n × p` matrix with entries uniform on [0, 1), rows scaled to unit
/// L2 norm.
pub fn random_projection(n: usize, p: usize, rng: &mut RngStream) -> Matrix {
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| rng.uniform()).collect();
        let norm = crate::numcore::norm(&row);
        data.extend(row.iter().map(|v| if norm > 0.0 { v / norm } else { *v }));
    }
    Matrix::new(n, p, data).expect("finite by construction")
}

/// The search subspace: either the identity or a random projection.
enum Subspace {
    Full(usize),
    Projected(Matrix),
}

impl Subspace {
    fn dim(&self) -> usize {
        match self {
            Subspace::Full(n) => *n,
            Subspace::Projected(a) => a.cols(),
        }
    }

    fn lift(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Subspace::Full(_) => z.to_vec(),
            Subspace::Projected(a) => a.matvec(z),
        }
    }

    fn pull_back(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Subspace::Full(_) => g.to_vec(),
            Subspace::Projected(a) => a.t_matvec(g),
        }
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Box-constrained sharpness of `f` around `x`.
///
/// The box is `|z_i| <= ε (|(A⁺x)_i| + 1)` in the subspace spanned by the
/// columns of `A`, with `A⁺x` taken from a least-squares solve. The maximum
/// of `f(x + A z)` is approached by projected gradient ascent with
/// backtracking from `z = 0`, so the result is a lower bound on the true box
/// maximum. When the gradient vanishes at `z = 0` the ascent starts from a
/// seeded random point of the box instead.
pub fn sharpness<F>(mut loss_and_grad: F, x: &ParamVector, cfg: &SharpnessConfig) -> Result<SharpnessResult>
where
    F: FnMut(&ParamVector) -> Result<(f64, ParamVector)>,
{
    if !(cfg.epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be > 0".into()));
    }
    let n = x.len();
    if cfg.p > n {
        return Err(Error::InvalidArgument(format!("subspace dimension {} exceeds parameter count {n}", cfg.p)));
    }
    let mut rng = RngStream::derive(cfg.seed, "sharpness");
    let (space, ax) = if cfg.p == 0 {
        (Subspace::Full(n), x.values.clone())
    } else {
        let a = random_projection(n, cfg.p, &mut rng);
        let ls = least_squares_apply(&a, &x.values)?;
        if ls.rank_deficient {
            return Err(Error::InvalidArgument(format!("projection matrix has rank {} < {}", ls.rank, cfg.p)));
        }
        (Subspace::Projected(a), ls.solution)
    };
    let bounds: Vec<f64> = ax.iter().map(|v| cfg.epsilon * (v.abs() + 1.0)).collect();
    let project = |z: &mut [f64]| {
        for (zi, b) in z.iter_mut().zip(&bounds) {
            *zi = zi.clamp(-b, *b);
        }
    };

    let mut eval = |z: &[f64]| -> Result<Option<(f64, Vec<f64>)>> {
        let point = x.add_scaled(1.0, &x.with_values(space.lift(z))?);
        match loss_and_grad(&point) {
            Ok((f, g)) if f.is_finite() && g.is_finite() => Ok(Some((f, space.pull_back(&g.values)))),
            Ok(_) | Err(Error::NonFiniteLoss(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let (base_loss, g0) =
        eval(&vec![0.0; space.dim()])?.ok_or_else(|| Error::NonFiniteLoss("sharpness base point".into()))?;
    if base_loss <= -1.0 {
        return Err(Error::InvalidArgument(format!("base loss {base_loss} <= -1")));
    }
    let mut z = vec![0.0; space.dim()];
    let (mut fz, mut gz) = (base_loss, g0);
    let mut best = (base_loss, z.clone());
    if crate::numcore::norm(&gz) <= f64::EPSILON * (1.0 + base_loss.abs()) {
        let mut start: Vec<f64> = bounds.iter().map(|b| b * rng.uniform_in(-1.0, 1.0)).collect();
        project(&mut start);
        if let Some((f, g)) = eval(&start)? {
            z = start;
            fz = f;
            gz = g;
            if f > best.0 {
                best = (f, z.clone());
            }
        }
    }

    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        // coordinates pinned at a bound with the gradient pointing outward
        // cannot move, so they do not set the step scale
        let gmax = gz
            .iter()
            .zip(&z)
            .zip(&bounds)
            .filter(|((g, zi), b)| !((**zi >= **b && **g > 0.0) || (**zi <= -**b && **g < 0.0)))
            .fold(0.0f64, |m, ((g, _), _)| m.max(g.abs()));
        if gmax == 0.0 {
            break;
        }
        let bmax = bounds.iter().fold(0.0f64, |m, v| m.max(*v));
        let mut step = 2.0 * bmax / gmax;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand: Vec<f64> = z.iter().zip(&gz).map(|(zi, gi)| zi + step * gi).collect();
            project(&mut cand);
            let moved: f64 = cand.iter().zip(&z).zip(&gz).map(|((c, zi), gi)| (c - zi) * gi).sum();
            if moved <= 0.0 {
                break;
            }
            if let Some((f, g)) = eval(&cand)? {
                if f >= fz + ARMIJO * moved {
                    accepted = Some((cand, f, g));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, f, g)) = accepted else { break };
        z = cand;
        fz = f;
        gz = g;
        if fz > best.0 {
            best = (fz, z.clone());
        }
    }

    let phi = (100.0 * (best.0 - base_loss) / (1.0 + base_loss)).max(0.0);
    Ok(SharpnessResult { phi, argmax_z: best.1, base_loss, max_loss: best.0, iterations })
}

/// Central-difference Hessian-vector product `(∇f(x+hv) − ∇f(x−hv)) / 2h`.
pub fn hessian_vector_product<F>(mut grad_at: F, x: &ParamVector, v: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    x.check_layout(v)?;
    if v.norm() == 0.0 {
        return Err(Error::InvalidArgument("direction must be nonzero".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("step must be > 0".into()));
    }
    let plus = grad_at(&x.add_scaled(h, v))?;
    let minus = grad_at(&x.add_scaled(-h, v))?;
    Ok(plus.sub(&minus).scale(1.0 / (2.0 * h)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerIterationConfig {
    pub iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self { iters: 200, tol: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureEstimate {
    #[serde(with = "crate::io::f17")]
    pub lambda_max: f64,
    pub iterations_used: usize,
    #[serde(with = "crate::io::f17")]
    pub residual: f64,
    pub converged: bool,
}

fn power_pass<F>(
    hvp: &mut F,
    like: &ParamVector,
    shift: f64,
    cfg: &PowerIterationConfig,
    rng: &mut RngStream,
) -> Result<CurvatureEstimate>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    let mut v = like.with_values((0..like.len()).map(|_| rng.normal()).collect())?;
    let n0 = v.norm();
    v = v.scale(1.0 / n0);
    let mut est = CurvatureEstimate { lambda_max: 0.0, iterations_used: 0, residual: f64::INFINITY, converged: false };
    for k in 1..=cfg.iters {
        let mut hv = hvp(&v)?;
        if shift != 0.0 {
            hv.axpy(shift, &v);
        }
        let lambda = v.dot(&hv);
        let residual = hv.add_scaled(-lambda, &v).norm();
        est = CurvatureEstimate { lambda_max: lambda, iterations_used: k, residual, converged: false };
        if residual <= cfg.tol * lambda.abs().max(1.0) {
            est.converged = true;
            break;
        }
        let norm = hv.norm();
        if norm == 0.0 {
            break;
        }
        v = hv.scale(1.0 / norm);
    }
    Ok(est)
}

/// Largest (algebraic) eigenvalue of the operator `hvp` by power iteration
/// from a seeded random start, returning the Rayleigh quotient and residual
/// `‖Hv − λv‖`. If the dominant eigenvalue is negative a second pass runs on
/// the shifted operator `H + |λ|I`.
pub fn max_eigenvalue<F>(mut hvp: F, like: &ParamVector, cfg: &PowerIterationConfig) -> Result<CurvatureEstimate>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    if cfg.iters == 0 {
        return Err(Error::InvalidArgument("iters must be >= 1".into()));
    }
    if like.is_empty() {
        return Err(Error::InvalidArgument("empty parameter vector".into()));
    }
    let mut rng = RngStream::derive(cfg.seed, "power");
    let first = power_pass(&mut hvp, like, 0.0, cfg, &mut rng)?;
    if first.lambda_max >= 0.0 {
        return Ok(first);
    }
    let shift = first.lambda_max.abs();
    let mut second = power_pass(&mut hvp, like, shift, cfg, &mut rng)?;
    second.lambda_max -= shift;
    second.iterations_used += first.iterations_used;
    Ok(second)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgettingBoundReport {
    /// `L(w2) − L(w1)`
    #[serde(with = "crate::io::f17")]
    pub lhs: f64,
    /// `½ Δwᵀ H Δw`
    #[serde(with = "crate::io::f17")]
    pub quadratic_term: f64,
    /// `½ λ_max ‖Δw‖²`
    #[serde(with = "crate::io::f17")]
    pub bound: f64,
    #[serde(with = "crate::io::f17")]
    pub lambda_max: f64,
    #[serde(with = "crate::io::f17")]
    pub approximation_gap: f64,
    pub bound_holds: bool,
    pub curvature_converged: bool,
}

/// Tolerance on `quadratic_term <= bound`.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Compares the loss increase `L(w2) − L(w1)` with its second-order
/// estimate around `w1` and the curvature bound.
pub fn verify_forgetting_bound<L, H>(
    mut loss_at: L,
    w1: &ParamVector,
    w2: &ParamVector,
    mut hvp_at_w1: H,
    power: &PowerIterationConfig,
) -> Result<ForgettingBoundReport>
where
    L: FnMut(&ParamVector) -> Result<f64>,
    H: FnMut(&ParamVector) -> Result<ParamVector>,
{
    w1.check_layout(w2)?;
    let lhs = loss_at(w2)? - loss_at(w1)?;
    let dw = w2.sub(w1);
    let dw_sq = dw.dot(&dw);
    let curvature = max_eigenvalue(&mut hvp_at_w1, w1, power)?;
    let quadratic_term = if dw_sq == 0.0 { 0.0 } else { 0.5 * dw.dot(&hvp_at_w1(&dw)?) };
    let bound = 0.5 * curvature.lambda_max * dw_sq;
    Ok(ForgettingBoundReport {
        lhs,
        quadratic_term,
        bound,
        lambda_max: curvature.lambda_max,
        approximation_gap: (lhs - quadratic_term).abs(),
        bound_holds: quadratic_term <= bound + BOUND_TOLERANCE,
        curvature_converged: curvature.converged,
    })
}
