//! Kernel-smoothed spatial covariance for a single subject whose columns are
//! serially dependent time points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{all_finite, symmetrize, DenseMatrix};

/// One subject's `p x q` observation matrix (spatial rows, temporal columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSeries {
    pub subject_id: String,
    data: DenseMatrix,
}

impl SubjectSeries {
    pub fn new(subject_id: impl Into<String>, data: DenseMatrix) -> Result<Self> {
        let subject_id = subject_id.into();
        if data.nrows() < 2 || data.ncols() < 2 {
            return Err(Error::InvalidInput(format!(
                "subject {subject_id}: need at least 2 spatial rows and 2 time points, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !all_finite(data.iter()) {
            return Err(Error::InvalidInput(format!(
                "subject {subject_id}: non-finite observation"
            )));
        }
        Ok(SubjectSeries { subject_id, data })
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    /// Number of spatial locations.
    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    /// Number of time points.
    pub fn q(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Gaussian,
}

impl Kernel {
    /// Unnormalized kernel; constants cancel in the weighted average.
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    /// Temporal bandwidth. `None` means `q^(1/3)` for a series with `q` time
    /// points. `f64::INFINITY` gives uniform weights.
    pub bandwidth: Option<f64>,
    pub kernel: Kernel,
}

impl KernelConfig {
    pub fn with_bandwidth(bandwidth: f64) -> Self {
        KernelConfig {
            bandwidth: Some(bandwidth),
            kernel: Kernel::Gaussian,
        }
    }

    pub fn resolve_bandwidth(&self, q: usize) -> Result<f64> {
        let h = self.bandwidth.unwrap_or_else(|| (q as f64).cbrt());
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!(
                "kernel bandwidth must be positive, got {h}"
            )));
        }
        Ok(h)
    }
}

/// Weights `K(|s - t| / h)` for `s = 1..=q`; `t` is 1-based.
pub fn kernel_weights(q: usize, t: usize, cfg: &KernelConfig) -> Result<Vec<f64>> {
    if t == 0 || t > q {
        return Err(Error::InvalidInput(format!(
            "time index {t} outside 1..={q}"
        )));
    }
    let h = cfg.resolve_bandwidth(q)?;
    Ok((1..=q)
        .map(|s| cfg.kernel.eval(s.abs_diff(t) as f64 / h))
        .collect())
}

/// Per-column weights whose outer-product sum gives the time average of the
/// kernel covariances at every `t` in `times` (0-based, restricted to `times`).
fn averaged_column_weights(q: usize, times: &[usize], cfg: &KernelConfig) -> Result<Vec<f64>> {
    let h = cfg.resolve_bandwidth(q)?;
    let mut weights = vec![0.0; times.len()];
    let inv_count = 1.0 / times.len() as f64;
    for &t in times {
        let row: Vec<f64> = times
            .iter()
            .map(|&s| cfg.kernel.eval(s.abs_diff(t) as f64 / h))
            .collect();
        let total: f64 = row.iter().sum();
        for (w, r) in weights.iter_mut().zip(&row) {
            *w += inv_count * r / total;
        }
    }
    Ok(weights)
}

fn weighted_outer_sum(data: &DenseMatrix, columns: &[usize], weights: &[f64]) -> DenseMatrix {
    let p = data.nrows();
    let mut out = DenseMatrix::zeros(p, p);
    for (&s, &w) in columns.iter().zip(weights) {
        let col = data.column(s);
        out.ger(w, &col, &col, 1.0);
    }
    symmetrize(&mut out);
    out
}

fn check_data(data: &DenseMatrix) -> Result<()> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(Error::InvalidInput("empty data matrix".into()));
    }
    if !all_finite(data.iter()) {
        return Err(Error::InvalidInput("data contains non-finite values".into()));
    }
    Ok(())
}

/// Kernel covariance at time `t` (1-based) for a raw `p x q` matrix.
pub fn weighted_covariance(data: &DenseMatrix, cfg: &KernelConfig, t: usize) -> Result<DenseMatrix> {
    check_data(data)?;
    let w = kernel_weights(data.ncols(), t, cfg)?;
    let total: f64 = w.iter().sum();
    let normalized: Vec<f64> = w.iter().map(|x| x / total).collect();
    let cols: Vec<usize> = (0..data.ncols()).collect();
    Ok(weighted_outer_sum(data, &cols, &normalized))
}

/// Time average of [`weighted_covariance`] over every time point.
pub fn averaged_covariance(data: &DenseMatrix, cfg: &KernelConfig) -> Result<DenseMatrix> {
    let all: Vec<usize> = (0..data.ncols()).collect();
    kernel_covariance_over(data, cfg, &all)
}

/// Kernel covariance averaged over the time points in `times` (0-based),
/// with kernel sums restricted to the same set. The bandwidth default is
/// resolved from the full series length.
pub fn kernel_covariance_over(
    data: &DenseMatrix,
    cfg: &KernelConfig,
    times: &[usize],
) -> Result<DenseMatrix> {
    check_data(data)?;
    if times.is_empty() {
        return Err(Error::InvalidInput("no time points selected".into()));
    }
    if let Some(&bad) = times.iter().find(|&&t| t >= data.ncols()) {
        return Err(Error::InvalidInput(format!(
            "time index {bad} outside 0..{}",
            data.ncols()
        )));
    }
    let weights = averaged_column_weights(data.ncols(), times, cfg)?;
    Ok(weighted_outer_sum(data, times, &weights))
}

pub fn time_varying_covariance(
    series: &SubjectSeries,
    cfg: &KernelConfig,
    t: usize,
) -> Result<DenseMatrix> {
    weighted_covariance(series.data(), cfg, t)
}

pub fn subject_covariance(series: &SubjectSeries, cfg: &KernelConfig) -> Result<DenseMatrix> {
    averaged_covariance(series.data(), cfg)
}
