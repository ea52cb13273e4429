//! Low-level numerical routines shared by the estimators: cyclic coordinate
//! descent for the lasso, the group soft-thresholding prox, the truncated
//! L1 penalty and a Cholesky-backed symmetric factorization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type DenseMatrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl SolverOptions {
    pub fn new(tol: f64, max_iters: usize) -> Result<Self> {
        let opts = SolverOptions { tol, max_iters };
        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "solver tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-7,
            max_iters: 10_000,
        }
    }
}

/// `min_b ||y - Z b||_2^2 + penalty * ||b||_1`. Note there is no 1/2 on the
/// squared loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoProblem {
    design: DenseMatrix,
    response: DVector<f64>,
    penalty: f64,
}

impl LassoProblem {
    pub fn new(design: DenseMatrix, response: DVector<f64>, penalty: f64) -> Result<Self> {
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(Error::InvalidInput("lasso design must be non-empty".into()));
        }
        if design.nrows() != response.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but response has {} entries",
                design.nrows(),
                response.len()
            )));
        }
        if !all_finite(design.iter()) || !all_finite(response.iter()) {
            return Err(Error::InvalidInput("lasso data contains non-finite values".into()));
        }
        if !(penalty >= 0.0 && penalty.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lasso penalty must be a nonnegative finite number, got {penalty}"
            )));
        }
        Ok(LassoProblem {
            design,
            response,
            penalty,
        })
    }

    pub fn design(&self) -> &DenseMatrix {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        let resid = &self.response - &self.design * beta;
        resid.norm_squared() + self.penalty * beta.lp_norm(1)
    }

    /// Max-norm violation of the subgradient optimality condition
    /// `0 in -2 Z^T (y - Z b) + penalty * sign(b)`.
    pub fn subgradient_residual(&self, beta: &DVector<f64>) -> f64 {
        let grad = -2.0 * self.design.transpose() * (&self.response - &self.design * beta);
        subgradient_violation(&grad, beta, self.penalty)
    }
}

pub(crate) fn all_finite<'a>(mut values: impl Iterator<Item = &'a f64>) -> bool {
    values.all(|v| v.is_finite())
}

/// Scalar soft-thresholding `sign(x) (|x| - t)_+`.
#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn subgradient_violation(grad: &DVector<f64>, beta: &DVector<f64>, penalty: f64) -> f64 {
    grad.iter()
        .zip(beta.iter())
        .map(|(&g, &b)| {
            if b != 0.0 {
                (g + penalty * b.signum()).abs()
            } else {
                (g.abs() - penalty).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Solves the lasso by cyclic coordinate descent starting from zero.
pub fn lasso_cd(problem: &LassoProblem, opts: &SolverOptions) -> Result<DVector<f64>> {
    lasso_cd_from(problem, opts, None)
}

/// Coordinate descent over coordinates in ascending order; stops once the
/// largest coefficient change over a full sweep falls below `opts.tol`.
pub fn lasso_cd_from(
    problem: &LassoProblem,
    opts: &SolverOptions,
    init: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    opts.validate()?;
    let z = &problem.design;
    let p = z.ncols();
    let mut beta = match init {
        Some(b) if b.len() != p => {
            return Err(Error::DimensionMismatch(format!(
                "initial iterate has length {}, expected {p}",
                b.len()
            )))
        }
        Some(b) => b.clone(),
        None => DVector::zeros(p),
    };
    let col_sq: Vec<f64> = (0..p).map(|j| z.column(j).norm_squared()).collect();
    let mut resid = &problem.response - z * &beta;
    let half_pen = 0.5 * problem.penalty;

    for _ in 0..opts.max_iters {
        let mut max_change = 0.0f64;
        for j in 0..p {
            let old = beta[j];
            let new = if col_sq[j] == 0.0 {
                0.0
            } else {
                let rho = z.column(j).dot(&resid) + col_sq[j] * old;
                soft_threshold(rho, half_pen) / col_sq[j]
            };
            let delta = new - old;
            if delta != 0.0 {
                resid.axpy(-delta, &z.column(j), 1.0);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < opts.tol {
            return Ok(beta);
        }
    }
    Err(Error::NotConverged {
        what: "lasso coordinate descent",
        iterations: opts.max_iters,
        last: beta.iter().copied().collect(),
    })
}

/// Coordinate descent on the covariance form
/// `b^T G b - 2 c^T b + penalty * ||b||_1` with `G` symmetric positive
/// semidefinite. This is the same objective as [`lasso_cd`] with
/// `G = Z^T Z` and `c = Z^T y`, minus a constant.
pub fn lasso_cd_gram(
    gram: &DenseMatrix,
    corr: &DVector<f64>,
    penalty: f64,
    opts: &SolverOptions,
    init: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    opts.validate()?;
    let p = gram.ncols();
    if gram.nrows() != p || corr.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "gram is {}x{}, correlation has length {}",
            gram.nrows(),
            p,
            corr.len()
        )));
    }
    let mut beta = match init {
        Some(b) if b.len() == p => b.clone(),
        Some(b) => {
            return Err(Error::DimensionMismatch(format!(
                "initial iterate has length {}, expected {p}",
                b.len()
            )))
        }
        None => DVector::zeros(p),
    };
    // G b, kept in sync with beta.
    let mut gb = gram * &beta;
    let half_pen = 0.5 * penalty;

    for _ in 0..opts.max_iters {
        let mut max_change = 0.0f64;
        for j in 0..p {
            let gjj = gram[(j, j)];
            let old = beta[j];
            let new = if gjj <= 0.0 {
                0.0
            } else {
                let rho = corr[j] - (gb[j] - gjj * old);
                soft_threshold(rho, half_pen) / gjj
            };
            let delta = new - old;
            if delta != 0.0 {
                gb.axpy(delta, &gram.column(j), 1.0);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < opts.tol {
            return Ok(beta);
        }
    }
    Err(Error::NotConverged {
        what: "lasso coordinate descent",
        iterations: opts.max_iters,
        last: beta.iter().copied().collect(),
    })
}

/// Group soft-thresholding `(1 - s/||t||_2)_+ t`, with `prox(0) = 0`.
pub fn group_prox(t: &DVector<f64>, s: f64) -> DVector<f64> {
    let norm = t.norm();
    if norm == 0.0 || s >= norm {
        return DVector::zeros(t.len());
    }
    t * (1.0 - s / norm)
}

/// Truncated L1 penalty `min(|a|, tau)`.
#[inline]
pub fn tlp(a: f64, tau: f64) -> f64 {
    a.abs().min(tau)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SymFactor {
    lower: DenseMatrix,
}

/// Factors `m = L L^T`. Fails with the index of the first non-positive pivot.
pub fn sym_factor(m: &DenseMatrix) -> Result<SymFactor> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !all_finite(m.iter()) {
        return Err(Error::InvalidInput("matrix contains non-finite values".into()));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for j in 0..n {
        for i in (j + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(SymFactor { lower: l })
}

impl SymFactor {
    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn inverse(&self) -> DenseMatrix {
        let mut inv = self.solve_matrix(&DenseMatrix::identity(self.dim(), self.dim()));
        symmetrize(&mut inv);
        inv
    }
}

/// Replaces `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DenseMatrix) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}
