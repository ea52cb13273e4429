//! Graphical lasso: `argmin_O tr(S O) - log|O| + lambda * sum_ij |O_ij|`,
//! where the penalty includes the diagonal.
//!
//! The solver is a primal block coordinate descent over columns. Writing
//! `O = [[O11, o12], [o12^T, o22]]` and `g = o22 - o12^T O11^{-1} o12`, the
//! column subproblem separates into `g = 1 / (s22 + lambda)` and a lasso in
//! covariance form for `o12` with Gram matrix `(s22 + lambda) O11^{-1}`.
//! Every block update is an exact (warm-started) minimization, so the
//! objective never increases and every iterate stays positive definite.
//! `W = O^{-1}` is carried along to provide `O11^{-1}` cheaply.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::covariance::{averaged_covariance, kernel_covariance_over, KernelConfig, SubjectSeries};
use crate::error::{Error, Result};
use crate::solvers::{all_finite, lasso_cd_gram, sym_factor, symmetrize, DenseMatrix, SolverOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    pub omega: DenseMatrix,
    pub penalty_used: f64,
    pub objective: f64,
    /// Objective after initialization and after each full sweep.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityFeatures {
    pub subject_id: String,
    pub p: usize,
    pub values: Vec<f64>,
}

/// Outer defaults for [`glasso_fit`]: relative objective change per sweep.
pub fn default_options() -> SolverOptions {
    SolverOptions {
        tol: 1e-9,
        max_iters: 1_000,
    }
}

pub fn glasso_objective(s: &DenseMatrix, omega: &DenseMatrix, lambda: f64) -> Result<f64> {
    let log_det = sym_factor(omega)?.log_det();
    let trace = s.component_mul(omega).sum();
    let l1: f64 = omega.iter().map(|v| v.abs()).sum();
    Ok(trace - log_det + lambda * l1)
}

fn check_covariance(s: &DenseMatrix) -> Result<()> {
    let p = s.nrows();
    if p == 0 || s.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be square and non-empty, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if !all_finite(s.iter()) {
        return Err(Error::InvalidInput("covariance contains non-finite values".into()));
    }
    for j in 0..p {
        for i in (j + 1)..p {
            if (s[(i, j)] - s[(j, i)]).abs() > 1e-12 * (1.0 + s[(i, j)].abs()) {
                return Err(Error::InvalidInput(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

pub fn glasso_fit(s: &DenseMatrix, lambda: f64, opts: &SolverOptions) -> Result<PrecisionEstimate> {
    opts.validate()?;
    check_covariance(s)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "glasso penalty must be nonnegative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        // The unpenalized problem only has a solution for positive definite S.
        sym_factor(s)?;
    }
    let p = s.nrows();
    for i in 0..p {
        if !(s[(i, i)] + lambda > 0.0) {
            return Err(Error::NotPositiveDefinite {
                pivot: i,
                value: s[(i, i)] + lambda,
            });
        }
    }

    let mut omega = DenseMatrix::from_diagonal(&s.diagonal().map(|d| 1.0 / (d + lambda)));
    let mut w = DenseMatrix::from_diagonal(&s.diagonal().map(|d| d + lambda));
    let mut objective = glasso_objective(s, &omega, lambda)?;
    let mut trace = vec![objective];
    if p == 1 {
        return Ok(PrecisionEstimate {
            omega,
            penalty_used: lambda,
            objective,
            objective_trace: trace,
        });
    }

    let inner = SolverOptions {
        tol: (opts.tol * 1e-2).max(1e-13),
        max_iters: 10_000,
    };

    for _ in 0..opts.max_iters {
        for j in 0..p {
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let m = others.len();
            let w22 = w[(j, j)];
            let w12 = DVector::from_iterator(m, others.iter().map(|&k| w[(k, j)]));
            // inverse of the O11 block
            let mut a = DenseMatrix::from_fn(m, m, |r, c| w[(others[r], others[c])]);
            a.ger(-1.0 / w22, &w12, &w12, 1.0);
            symmetrize(&mut a);

            let scale = s[(j, j)] + lambda;
            let gram = &a * scale;
            let corr = DVector::from_iterator(m, others.iter().map(|&k| -s[(k, j)]));
            let warm = DVector::from_iterator(m, others.iter().map(|&k| omega[(k, j)]));
            let beta = match lasso_cd_gram(&gram, &corr, 2.0 * lambda, &inner, Some(&warm)) {
                Ok(b) => b,
                // Coordinate descent never increases the block objective, so
                // the last iterate is still an improvement.
                Err(Error::NotConverged { last, .. }) => DVector::from_vec(last),
                Err(e) => return Err(e),
            };

            let gamma = 1.0 / scale;
            let u = &a * &beta;
            let quad = beta.dot(&u);
            for (r, &k) in others.iter().enumerate() {
                omega[(k, j)] = beta[r];
                omega[(j, k)] = beta[r];
                w[(k, j)] = -u[r] / gamma;
                w[(j, k)] = -u[r] / gamma;
                for (c, &l) in others.iter().enumerate() {
                    w[(k, l)] = a[(r, c)] + u[r] * u[c] / gamma;
                }
            }
            omega[(j, j)] = gamma + quad;
            w[(j, j)] = 1.0 / gamma;
        }

        symmetrize(&mut omega);
        let factor = sym_factor(&omega)?;
        w = factor.inverse();
        let log_det = factor.log_det();
        let l1: f64 = omega.iter().map(|v| v.abs()).sum();
        let next = s.component_mul(&omega).sum() - log_det + lambda * l1;
        trace.push(next);
        let change = (objective - next).abs();
        objective = next;
        if change <= opts.tol * objective.abs().max(1.0) {
            return Ok(PrecisionEstimate {
                omega,
                penalty_used: lambda,
                objective,
                objective_trace: trace,
            });
        }
    }
    Err(Error::NotConverged {
        what: "graphical lasso",
        iterations: opts.max_iters,
        last: omega.iter().copied().collect(),
    })
}

/// Adds `1e-8 * mean(diag)` to the diagonal when the smallest eigenvalue of
/// `s` is below `1e-10`. Returns whether the ridge was applied.
pub fn regularize_covariance(s: &mut DenseMatrix) -> bool {
    let p = s.nrows();
    let shifted = &*s - DenseMatrix::identity(p, p) * 1e-10;
    if sym_factor(&shifted).is_ok() {
        return false;
    }
    let mean_diag = s.diagonal().mean();
    let ridge = 1e-8 * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    for i in 0..p {
        s[(i, i)] += ridge;
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda: f64,
    pub estimate: PrecisionEstimate,
    /// Mean held-out score per grid entry, in grid order.
    pub scores: Vec<f64>,
}

/// Contiguous time blocks `[f*q/folds, (f+1)*q/folds)`.
pub fn time_blocks(q: usize, folds: usize) -> Vec<std::ops::Range<usize>> {
    (0..folds)
        .map(|f| (f * q / folds)..((f + 1) * q / folds))
        .collect()
}

/// Held-out Gaussian negative log-likelihood `tr(S_test O) - log|O|`.
pub fn heldout_score(s_test: &DenseMatrix, omega: &DenseMatrix) -> Result<f64> {
    Ok(s_test.component_mul(omega).sum() - sym_factor(omega)?.log_det())
}

/// Chooses the glasso penalty by contiguous-block cross-validation over time.
///
/// For each fold the model is fit on the kernel covariance of the remaining
/// blocks and scored on the plain second-moment matrix of the held-out block.
/// The smallest mean score wins, ties going to the earliest grid entry; the
/// returned estimate is a refit on the full series.
pub fn glasso_cv(
    series: &SubjectSeries,
    cfg: &KernelConfig,
    lambdas: &[f64],
    folds: usize,
    opts: &SolverOptions,
) -> Result<CvResult> {
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("empty glasso penalty grid".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "glasso penalty grid must be positive, found {bad}"
        )));
    }
    if folds < 2 {
        return Err(Error::InvalidInput("cross-validation needs at least 2 folds".into()));
    }
    let data = series.data();
    let q = series.q();
    if q < folds {
        return Err(Error::InvalidInput(format!(
            "{q} time points cannot be split into {folds} folds"
        )));
    }
    let blocks = time_blocks(q, folds);
    let mut splits = Vec::with_capacity(folds);
    for block in &blocks {
        let train: Vec<usize> = (0..q).filter(|t| !block.contains(t)).collect();
        let mut s_train = kernel_covariance_over(data, cfg, &train)?;
        regularize_covariance(&mut s_train);
        let cols = data.columns(block.start, block.len());
        let s_test = &cols * cols.transpose() / block.len() as f64;
        splits.push((s_train, s_test));
    }

    let mut scores = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut total = 0.0;
        for (s_train, s_test) in &splits {
            let est = glasso_fit(s_train, lambda, opts)?;
            total += heldout_score(s_test, &est.omega)?;
        }
        scores.push(total / folds as f64);
    }
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| if *s < scores[best] { i } else { best });

    let mut s_full = averaged_covariance(data, cfg)?;
    regularize_covariance(&mut s_full);
    let estimate = glasso_fit(&s_full, lambdas[best], opts)?;
    Ok(CvResult {
        lambda: lambdas[best],
        estimate,
        scores,
    })
}

/// Index pairs `(i, j)`, `i < j`, in column-stacked order: `j` ascending,
/// then `i` ascending.
pub fn upper_pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..p).flat_map(|j| (0..j).map(move |i| (i, j)))
}

pub fn upper_len(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// Inverts `upper_len`, returning `None` when `len` is not triangular.
pub fn dim_from_upper_len(len: usize) -> Option<usize> {
    let p = ((1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
    (upper_len(p) == len && p >= 2).then_some(p)
}

pub fn vectorize_upper(subject_id: impl Into<String>, est: &PrecisionEstimate) -> ConnectivityFeatures {
    let p = est.omega.nrows();
    ConnectivityFeatures {
        subject_id: subject_id.into(),
        p,
        values: upper_pairs(p).map(|(i, j)| est.omega[(i, j)]).collect(),
    }
}

/// Symmetric matrix with the given strict upper triangle and diagonal.
pub fn fill_symmetric(values: &[f64], diagonal: &[f64]) -> Result<DenseMatrix> {
    let p = diagonal.len();
    if values.len() != upper_len(p) {
        return Err(Error::DimensionMismatch(format!(
            "{} upper-triangular values do not match dimension {p}",
            values.len()
        )));
    }
    let mut m = DenseMatrix::from_diagonal(&DVector::from_column_slice(diagonal));
    for ((i, j), &v) in upper_pairs(p).zip(values) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    Ok(m)
}
