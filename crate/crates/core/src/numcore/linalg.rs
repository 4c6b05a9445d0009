use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len())));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { name: "matrix".into(), index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    /// `A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| super::dot(self.row(r), x)).collect()
    }

    /// `Aᵀ y`
    pub fn t_matvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * yr;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }
}

/// Result of a least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub solution: Vec<f64>,
    pub rank: usize,
    /// Set when `A` lacked full column rank; `solution` is then the
    /// minimum-norm minimizer.
    pub rank_deficient: bool,
}

/// Householder QR with optional column pivoting, stored compactly:
/// `r` holds R in its upper triangle, `vs[k]` the k-th reflector acting on
/// rows `k..m`.
struct Householder {
    m: usize,
    n: usize,
    r: Vec<f64>,
    vs: Vec<Vec<f64>>,
    betas: Vec<f64>,
    perm: Vec<usize>,
}

impl Householder {
    fn factor(mut a: Vec<f64>, m: usize, n: usize, pivot: bool) -> Self {
        let steps = m.min(n);
        let mut vs = Vec::with_capacity(steps);
        let mut betas = Vec::with_capacity(steps);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..steps {
            if pivot {
                let col_norm = |a: &[f64], j: usize| (k..m).map(|i| a[i * n + j].powi(2)).sum::<f64>();
                let mut best = k;
                let mut best_norm = col_norm(&a, k);
                for j in k + 1..n {
                    let cn = col_norm(&a, j);
                    if cn > best_norm {
                        best = j;
                        best_norm = cn;
                    }
                }
                if best != k {
                    for i in 0..m {
                        a.swap(i * n + k, i * n + best);
                    }
                    perm.swap(k, best);
                }
            }
            let mut v: Vec<f64> = (k..m).map(|i| a[i * n + k]).collect();
            let xnorm = super::norm(&v);
            if xnorm == 0.0 {
                vs.push(v);
                betas.push(0.0);
                continue;
            }
            let alpha = if v[0] >= 0.0 { -xnorm } else { xnorm };
            v[0] -= alpha;
            let vtv = super::dot(&v, &v);
            let beta = if vtv == 0.0 { 0.0 } else { 2.0 / vtv };
            for j in k..n {
                let s: f64 = (k..m).map(|i| v[i - k] * a[i * n + j]).sum::<f64>() * beta;
                for i in k..m {
                    a[i * n + j] -= s * v[i - k];
                }
            }
            a[k * n + k] = alpha;
            for i in k + 1..m {
                a[i * n + k] = 0.0;
            }
            vs.push(v);
            betas.push(beta);
        }
        Self { m, n, r: a, vs, betas, perm }
    }

    /// Overwrites `b` (length m) with `Qᵀ b`.
    fn apply_qt(&self, b: &mut [f64]) {
        for (k, (v, &beta)) in self.vs.iter().zip(&self.betas).enumerate() {
            let s: f64 = v.iter().zip(&b[k..]).map(|(x, y)| x * y).sum::<f64>() * beta;
            for (bi, vi) in b[k..].iter_mut().zip(v) {
                *bi -= s * vi;
            }
        }
    }

    /// Overwrites `b` (length m) with `Q b`.
    fn apply_q(&self, b: &mut [f64]) {
        for (k, (v, &beta)) in self.vs.iter().zip(&self.betas).enumerate().rev() {
            let s: f64 = v.iter().zip(&b[k..]).map(|(x, y)| x * y).sum::<f64>() * beta;
            for (bi, vi) in b[k..].iter_mut().zip(v) {
                *bi -= s * vi;
            }
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.n + j]
    }
}

/// Minimizes `‖A b − x‖₂` with a column-pivoted Householder QR.
///
/// A rank-deficient `A` yields the minimum-norm minimizer through a second
/// QR of the leading rows of R (complete orthogonal decomposition).
pub fn least_squares_apply(a: &Matrix, x: &[f64]) -> Result<LeastSquares> {
    let (m, n) = (a.rows(), a.cols());
    if x.len() != m {
        return Err(Error::Shape(format!("rhs has {} entries, matrix has {m} rows", x.len())));
    }
    if m < n {
        return Err(Error::Shape(format!("least squares needs rows >= cols, got {m}x{n}")));
    }
    if n == 0 {
        return Ok(LeastSquares { solution: vec![], rank: 0, rank_deficient: false });
    }
    let qr = Householder::factor(a.data().to_vec(), m, n, true);
    let mut c = x.to_vec();
    qr.apply_qt(&mut c);

    let r00 = qr.r(0, 0).abs();
    let tol = (m.max(n) as f64) * f64::EPSILON * r00;
    let rank = (0..n).take_while(|&k| qr.r(k, k).abs() > tol).count();

    let mut y = vec![0.0; n];
    if rank == n {
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| qr.r(k, j) * y[j]).sum();
            y[k] = (c[k] - s) / qr.r(k, k);
        }
    } else if rank > 0 {
        // R_top (rank x n) = Tᵀ Zᵀ, from the QR of R_topᵀ (n x rank)
        let mut rt = vec![0.0; n * rank];
        for i in 0..rank {
            for j in i..n {
                rt[j * rank + i] = qr.r(i, j);
            }
        }
        let lq = Householder::factor(rt, n, rank, false);
        // solve Tᵀ s = c[..rank], Tᵀ lower triangular
        let mut s = vec![0.0; n];
        for i in 0..rank {
            let acc: f64 = (0..i).map(|j| lq.r(j, i) * s[j]).sum();
            s[i] = (c[i] - acc) / lq.r(i, i);
        }
        lq.apply_q(&mut s);
        y = s;
    }
    let mut solution = vec![0.0; n];
    for (j, &p) in qr.perm.iter().enumerate() {
        solution[p] = y[j];
    }
    debug_assert_eq!(qr.m, m);
    Ok(LeastSquares { solution, rank, rank_deficient: rank < n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_scalar() {
        let r = least_squares_apply(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.solution, vec![1.0, 2.0, 3.0]);
        assert!(!r.rank_deficient);
        let r = least_squares_apply(&Matrix::new(1, 1, vec![2.0]).unwrap(), &[4.0]).unwrap();
        assert_eq!(r.solution, vec![2.0]);
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // columns identical: every b with b0 + b1 = 1 fits x = (1, 1); min norm is (0.5, 0.5)
        let a = Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let r = least_squares_apply(&a, &[1.0, 1.0]).unwrap();
        assert!(r.rank_deficient);
        assert_eq!(r.rank, 1);
        assert!((r.solution[0] - 0.5).abs() < 1e-14);
        assert!((r.solution[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix() {
        let r = least_squares_apply(&Matrix::zeros(3, 2), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.rank, 0);
        assert_eq!(r.solution, vec![0.0, 0.0]);
    }

    #[test]
    fn shape_checks() {
        assert!(Matrix::new(2, 2, vec![1.0]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(least_squares_apply(&Matrix::identity(2), &[1.0]).is_err());
        assert!(least_squares_apply(&Matrix::zeros(1, 2), &[1.0]).is_err());
    }
}
