//! Sparse penalized regression-based clustering.
//!
//! Each sample `x_i` gets its own centroid `mu_i`. The fit minimizes
//!
//! ```text
//! S(mu) = 1/2 sum_i ||x_i - mu_i||^2 + l1 sum_i ||mu_i||_1
//!       + l2 sum_{i<j} min(||mu_i - mu_j||_2, tau)
//! ```
//!
//! through an outer difference-of-convex loop. The truncated penalty is
//! linearized at the previous iterate: pairs whose difference was below
//! `tau` keep a group-lasso fusion term, the rest contribute a constant. Each
//! convex surrogate is solved by ADMM over `theta_ij = mu_i - mu_j` with
//! scaled duals `v_ij`. The `mu` step is a lasso on stacked pseudo
//! observations, the `theta` step a group soft-threshold.
//!
//! Samples whose centroids coincide (a zero `theta_ij`, or numerically equal
//! `mu`) form a cluster.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{all_finite, group_prox, soft_threshold, tlp, DenseMatrix, LassoProblem, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SprclustConfig {
    /// Sparsity penalty on centroid coordinates.
    pub lambda1: f64,
    /// Fusion penalty on pairwise differences.
    pub lambda2: f64,
    /// Truncation level of the fusion penalty.
    pub tau: f64,
    /// ADMM augmentation parameter.
    pub rho: f64,
    pub admm_opts: SolverOptions,
    pub dc_max_iters: usize,
    /// Relative tolerance under which two centroids count as equal.
    pub cluster_tol: f64,
    /// Scale each feature to unit standard deviation before fitting.
    pub standardize: bool,
}

impl Default for SprclustConfig {
    fn default() -> Self {
        SprclustConfig {
            lambda1: 0.1,
            lambda2: 0.1,
            tau: 1.0,
            rho: 0.4,
            admm_opts: SolverOptions {
                tol: 1e-4,
                max_iters: 2_000,
            },
            dc_max_iters: 20,
            cluster_tol: 1e-4,
            standardize: false,
        }
    }
}

impl SprclustConfig {
    pub fn with_penalties(lambda1: f64, lambda2: f64, tau: f64) -> Self {
        SprclustConfig {
            lambda1,
            lambda2,
            tau,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !nonneg(self.lambda1) || !nonneg(self.lambda2) {
            return Err(Error::InvalidInput(format!(
                "penalties must be nonnegative, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidInput(format!("rho must be positive, got {}", self.rho)));
        }
        if self.dc_max_iters == 0 {
            return Err(Error::InvalidInput("dc_max_iters must be at least 1".into()));
        }
        if !(self.cluster_tol > 0.0) {
            return Err(Error::InvalidInput("cluster_tol must be positive".into()));
        }
        self.admm_opts.validate()
    }
}

/// Position of pair `(i, j)`, `i < j`, in row-major upper-triangular order.
#[inline]
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Centroids, pairwise differences, scaled duals and the fusion activity of
/// every pair for one solver run. Pair quantities are stored per `(i, j)`,
/// `i < j`, in the order of [`pair_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct DcState {
    n: usize,
    d: usize,
    mu: Vec<f64>,
    theta: Vec<f64>,
    duals: Vec<f64>,
    active: Vec<bool>,
}

impl DcState {
    /// `mu_i = x_i`, `theta_ij = x_i - x_j`, `v_ij = 0`, activity refreshed
    /// against `tau`.
    pub fn initial(x: &DenseMatrix, tau: f64) -> Self {
        let (n, d) = x.shape();
        let mut mu = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                mu[i * d + k] = x[(i, k)];
            }
        }
        let mut theta = vec![0.0; pair_count(n) * d];
        for i in 0..n {
            for j in (i + 1)..n {
                let p = pair_index(i, j, n);
                for k in 0..d {
                    theta[p * d + k] = mu[i * d + k] - mu[j * d + k];
                }
            }
        }
        let mut state = DcState {
            n,
            d,
            mu,
            theta,
            duals: vec![0.0; pair_count(n) * d],
            active: vec![false; pair_count(n)],
        };
        refresh_active(&mut state, tau);
        state
    }

    /// Builds a state from explicit parts. Pair maps are indexed by
    /// [`pair_index`].
    pub fn from_parts(
        mu: &DenseMatrix,
        theta: &DenseMatrix,
        duals: &DenseMatrix,
        active: Vec<bool>,
    ) -> Result<Self> {
        let (n, d) = mu.shape();
        let m = pair_count(n);
        if theta.shape() != (m, d) || duals.shape() != (m, d) || active.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "state with {n} samples needs {m} pairs of dimension {d}"
            )));
        }
        let flat = |a: &DenseMatrix| {
            let mut out = Vec::with_capacity(a.len());
            for r in 0..a.nrows() {
                out.extend(a.row(r).iter().copied());
            }
            out
        };
        Ok(DcState {
            n,
            d,
            mu: flat(mu),
            theta: flat(theta),
            duals: flat(duals),
            active,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mu(&self, i: usize) -> &[f64] {
        &self.mu[i * self.d..(i + 1) * self.d]
    }

    pub fn theta(&self, i: usize, j: usize) -> &[f64] {
        let p = pair_index(i, j, self.n);
        &self.theta[p * self.d..(p + 1) * self.d]
    }

    pub fn dual(&self, i: usize, j: usize) -> &[f64] {
        let p = pair_index(i, j, self.n);
        &self.duals[p * self.d..(p + 1) * self.d]
    }

    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.active[pair_index(i, j, self.n)]
    }

    pub fn set_mu(&mut self, i: usize, value: &[f64]) {
        self.mu[i * self.d..(i + 1) * self.d].copy_from_slice(value);
    }

    pub fn centroids(&self) -> DenseMatrix {
        DenseMatrix::from_row_slice(self.n, self.d, &self.mu)
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn check_data(x: &DenseMatrix, state: &DcState) -> Result<()> {
    if x.shape() != (state.n, state.d) {
        return Err(Error::DimensionMismatch(format!(
            "data is {}x{}, state is {}x{}",
            x.nrows(),
            x.ncols(),
            state.n,
            state.d
        )));
    }
    Ok(())
}

/// The nonconvex objective evaluated at the state's centroids, with the
/// pairwise differences taken as `mu_i - mu_j`.
pub fn objective_s(x: &DenseMatrix, state: &DcState, cfg: &SprclustConfig) -> Result<f64> {
    check_data(x, state)?;
    let (n, d) = (state.n, state.d);
    let mut fit = 0.0;
    let mut l1 = 0.0;
    for i in 0..n {
        let mu = state.mu(i);
        for k in 0..d {
            let r = x[(i, k)] - mu[k];
            fit += r * r;
            l1 += mu[k].abs();
        }
    }
    let mut fusion = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (state.mu(i), state.mu(j));
            let dist = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            fusion += tlp(dist, cfg.tau);
        }
    }
    Ok(0.5 * fit + cfg.lambda1 * l1 + cfg.lambda2 * fusion)
}

/// Marks pair `(i, j)` as carrying a fusion term iff `||theta_ij|| < tau`.
pub fn refresh_active(state: &mut DcState, tau: f64) {
    let d = state.d;
    for p in 0..state.active.len() {
        state.active[p] = norm(&state.theta[p * d..(p + 1) * d]) < tau;
    }
}

/// Stacked pseudo observations whose lasso solution is the `mu_i` update
/// (0-based `i`): a scaled identity block carrying `x_i`, a `-I` block for
/// every `j < i` and a `+I` block for every `j > i`, all scaled by
/// `sqrt(rho / 2)`.
pub fn build_pseudo_observations(
    i: usize,
    x: &DenseMatrix,
    state: &DcState,
    cfg: &SprclustConfig,
) -> Result<LassoProblem> {
    check_data(x, state)?;
    let (n, d) = (state.n, state.d);
    if i >= n {
        return Err(Error::InvalidInput(format!("sample index {i} outside 0..{n}")));
    }
    let rows = d * n;
    let scale = (cfg.rho / 2.0).sqrt();
    let top = scale / cfg.rho.sqrt();
    let mut design = DenseMatrix::zeros(rows, d);
    let mut response = DVector::zeros(rows);
    for k in 0..d {
        design[(k, k)] = top;
        response[k] = top * x[(i, k)];
    }
    let mut block = 1;
    for j in (0..n).filter(|&j| j != i) {
        let base = block * d;
        for k in 0..d {
            if j < i {
                design[(base + k, k)] = -scale;
                response[base + k] =
                    scale * (state.theta(j, i)[k] - state.mu(j)[k] + state.dual(j, i)[k]);
            } else {
                design[(base + k, k)] = scale;
                response[base + k] =
                    scale * (state.theta(i, j)[k] + state.mu(j)[k] + state.dual(i, j)[k]);
            }
        }
        block += 1;
    }
    LassoProblem::new(design, response, cfg.lambda1)
}

/// Exact minimizer of the `mu_i` subproblem. The pseudo-observation design
/// has orthogonal columns with squared norm `(1 + rho (n - 1)) / 2`, so the
/// lasso reduces to a soft threshold of the correlation vector.
fn mu_update(i: usize, x: &DenseMatrix, state: &DcState, cfg: &SprclustConfig, out: &mut [f64]) {
    let (n, d) = (state.n, state.d);
    for k in 0..d {
        out[k] = x[(i, k)];
    }
    for j in 0..i {
        let (t, m, v) = (state.theta(j, i), state.mu(j), state.dual(j, i));
        for k in 0..d {
            out[k] -= cfg.rho * (t[k] - m[k] + v[k]);
        }
    }
    for j in (i + 1)..n {
        let (t, m, v) = (state.theta(i, j), state.mu(j), state.dual(i, j));
        for k in 0..d {
            out[k] += cfg.rho * (t[k] + m[k] + v[k]);
        }
    }
    let denom = 1.0 + cfg.rho * (n as f64 - 1.0);
    for o in out.iter_mut() {
        *o = soft_threshold(*o, cfg.lambda1) / denom;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepResiduals {
    /// `max_ij ||theta_ij - (mu_i - mu_j)||`.
    pub primal: f64,
    /// `rho * max_ij ||theta_ij^{new} - theta_ij^{old}||`.
    pub dual: f64,
}

/// One ADMM iteration: Gauss-Seidel `mu` updates in sample order, then the
/// `theta` and scaled dual updates for every pair.
pub fn admm_sweep(x: &DenseMatrix, state: &mut DcState, cfg: &SprclustConfig) -> Result<SweepResiduals> {
    check_data(x, state)?;
    let (n, d) = (state.n, state.d);
    let mut buf = vec![0.0; d];
    for i in 0..n {
        mu_update(i, x, state, cfg, &mut buf);
        state.set_mu(i, &buf);
    }

    let shrink = cfg.lambda2 / cfg.rho;
    let mut primal = 0.0f64;
    let mut max_change = 0.0f64;
    let mut cand = DVector::zeros(d);
    let mut diff = vec![0.0; d];
    for i in 0..n {
        for j in (i + 1)..n {
            let p = pair_index(i, j, n);
            let range = p * d..(p + 1) * d;
            for k in 0..d {
                diff[k] = state.mu[i * d + k] - state.mu[j * d + k];
                cand[k] = diff[k] - state.duals[range.start + k];
            }
            let new_theta = if state.active[p] {
                group_prox(&cand, shrink)
            } else {
                cand.clone()
            };
            let mut change = 0.0;
            let mut gap = 0.0;
            for k in 0..d {
                let idx = range.start + k;
                let delta = new_theta[k] - state.theta[idx];
                change += delta * delta;
                state.theta[idx] = new_theta[k];
                state.duals[idx] = state.duals[idx] + new_theta[k] - diff[k];
                let g = new_theta[k] - diff[k];
                gap += g * g;
            }
            max_change = max_change.max(change.sqrt());
            primal = primal.max(gap.sqrt());
        }
    }
    Ok(SweepResiduals {
        primal,
        dual: cfg.rho * max_change,
    })
}

/// Runs ADMM sweeps until both residuals drop below the tolerance. Returns
/// the number of sweeps and whether the tolerance was met.
pub fn run_admm(x: &DenseMatrix, state: &mut DcState, cfg: &SprclustConfig) -> Result<(usize, bool)> {
    let opts = cfg.admm_opts;
    for it in 1..=opts.max_iters {
        let r = admm_sweep(x, state, cfg)?;
        if r.primal < opts.tol && r.dual < opts.tol {
            return Ok((it, true));
        }
    }
    Ok((opts.max_iters, false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprclustFit {
    pub centroids: DenseMatrix,
    /// 1-based cluster label per sample.
    pub assignment: Vec<usize>,
    pub k_hat: usize,
    /// Objective at the initial point and after each outer iteration. The
    /// final entry repeats the previous one when the loop stopped because the
    /// objective no longer decreased.
    pub objective_trace: Vec<f64>,
    pub kkt_residual: f64,
    pub dc_iters: usize,
    pub admm_iters_total: usize,
    /// False when some inner ADMM run hit its iteration cap or the outer
    /// loop hit `dc_max_iters` while still decreasing.
    pub converged: bool,
    /// Final solver state, in the (possibly standardized) fitting scale.
    pub state: DcState,
}

fn column_scales(x: &DenseMatrix) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|k| {
            let col = x.column(k);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// Minimizes the clustering objective for an `n x d` data matrix (rows are
/// samples).
pub fn fit(x: &DenseMatrix, cfg: &SprclustConfig) -> Result<SprclustFit> {
    cfg.validate()?;
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientSamples(n));
    }
    if d == 0 {
        return Err(Error::InvalidInput("data has no features".into()));
    }
    if !all_finite(x.iter()) {
        return Err(Error::InvalidInput("data contains non-finite values".into()));
    }

    let scales = cfg.standardize.then(|| column_scales(x));
    let work = match &scales {
        Some(s) => DenseMatrix::from_fn(n, d, |i, k| x[(i, k)] / s[k]),
        None => x.clone(),
    };

    let init = DcState::initial(&work, cfg.tau);
    let mut best = init.clone();
    let mut best_s = objective_s(&work, &best, cfg)?;
    let mut trace = vec![best_s];
    let mut admm_total = 0;
    let mut all_admm_converged = true;
    let mut stalled = false;
    let mut dc_iters = 0;

    while dc_iters < cfg.dc_max_iters {
        dc_iters += 1;
        // Each surrogate is solved from the same starting point; only the
        // set of fused pairs changes between outer iterations.
        let mut state = init.clone();
        state.active.clone_from(&best.active);
        refresh_active_from(&mut state, &best, cfg.tau);
        let (iters, ok) = run_admm(&work, &mut state, cfg)?;
        admm_total += iters;
        all_admm_converged &= ok;
        let s = objective_s(&work, &state, cfg)?;
        if s < best_s {
            best = state;
            best_s = s;
            trace.push(s);
        } else {
            if s == best_s {
                best = state;
            }
            trace.push(best_s);
            stalled = true;
            break;
        }
    }

    let kkt = kkt_residual(&work, &best, cfg)?;
    let (assignment, k_hat) = extract_clusters(&best, cfg.cluster_tol);
    let mut centroids = best.centroids();
    if let Some(s) = &scales {
        for i in 0..n {
            for k in 0..d {
                centroids[(i, k)] *= s[k];
            }
        }
    }
    Ok(SprclustFit {
        centroids,
        assignment,
        k_hat,
        objective_trace: trace,
        kkt_residual: kkt,
        dc_iters,
        admm_iters_total: admm_total,
        converged: all_admm_converged && stalled,
        state: best,
    })
}

/// Sets the activity of `state` from the pairwise differences of `from`.
fn refresh_active_from(state: &mut DcState, from: &DcState, tau: f64) {
    let d = from.d;
    for p in 0..state.active.len() {
        state.active[p] = norm(&from.theta[p * d..(p + 1) * d]) < tau;
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of the graph linking `i` and `j` when `theta_ij` is
/// exactly zero or `||mu_i - mu_j|| <= cluster_tol * (1 + ||mu_i||)`.
/// Labels are 1-based and ordered by each cluster's smallest member.
pub fn extract_clusters(state: &DcState, cluster_tol: f64) -> (Vec<usize>, usize) {
    let n = state.n;
    let mut sets = DisjointSet::new(n);
    for (i, j) in state.pairs() {
        let zero_theta = state.theta(i, j).iter().all(|&t| t == 0.0);
        let close = || {
            let (a, b) = (state.mu(i), state.mu(j));
            let dist = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            dist <= cluster_tol * (1.0 + norm(a))
        };
        if zero_theta || close() {
            sets.union(i, j);
        }
    }
    let mut label_of_root = vec![0usize; n];
    let mut next = 0;
    let mut labels = vec![0; n];
    for i in 0..n {
        let r = sets.find(i);
        if label_of_root[r] == 0 {
            next += 1;
            label_of_root[r] = next;
        }
        labels[i] = label_of_root[r];
    }
    (labels, next)
}

/// Largest violation of the stationarity conditions of the augmented
/// Lagrangian (for every `mu_i` and `theta_ij`, using the subgradient ball
/// at zero) and of the constraints `theta_ij = mu_i - mu_j`.
pub fn kkt_residual(x: &DenseMatrix, state: &DcState, cfg: &SprclustConfig) -> Result<f64> {
    check_data(x, state)?;
    let (n, d) = (state.n, state.d);
    let rho = cfg.rho;
    let mut worst = 0.0f64;

    for i in 0..n {
        let mu_i = state.mu(i);
        let mut g: Vec<f64> = (0..d).map(|k| mu_i[k] - x[(i, k)]).collect();
        for j in 0..n {
            if j == i {
                continue;
            }
            if j > i {
                let (t, m, v) = (state.theta(i, j), state.mu(j), state.dual(i, j));
                for k in 0..d {
                    g[k] -= rho * (t[k] - mu_i[k] + m[k] + v[k]);
                }
            } else {
                let (t, m, v) = (state.theta(j, i), state.mu(j), state.dual(j, i));
                for k in 0..d {
                    g[k] += rho * (t[k] - m[k] + mu_i[k] + v[k]);
                }
            }
        }
        for k in 0..d {
            let r = if mu_i[k] != 0.0 {
                (g[k] + cfg.lambda1 * mu_i[k].signum()).abs()
            } else {
                (g[k].abs() - cfg.lambda1).max(0.0)
            };
            worst = worst.max(r);
        }
    }

    for (i, j) in state.pairs() {
        let (t, v) = (state.theta(i, j), state.dual(i, j));
        let (a, b) = (state.mu(i), state.mu(j));
        let r: Vec<f64> = (0..d).map(|k| rho * (t[k] - a[k] + b[k] + v[k])).collect();
        let weight = if state.is_active(i, j) { cfg.lambda2 } else { 0.0 };
        let tn = norm(t);
        let stat = if weight == 0.0 {
            norm(&r)
        } else if tn == 0.0 {
            (norm(&r) - weight).max(0.0)
        } else {
            let s: Vec<f64> = (0..d).map(|k| weight * t[k] / tn + r[k]).collect();
            norm(&s)
        };
        let gap: Vec<f64> = (0..d).map(|k| t[k] - a[k] + b[k]).collect();
        worst = worst.max(stat).max(norm(&gap));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::lasso_cd;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = crate::rng::stream(seed, &[]);
        DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn pair_index_is_dense() {
        let n = 6;
        let mut seen = vec![false; pair_count(n)];
        for i in 0..n {
            for j in (i + 1)..n {
                let p = pair_index(i, j, n);
                assert!(!seen[p]);
                seen[p] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn objective_examples() {
        let x = DenseMatrix::zeros(2, 1);
        let st = DcState::initial(&x, 1.0);
        assert_eq!(objective_s(&x, &st, &SprclustConfig::default()).unwrap(), 0.0);

        let x = dmatrix![1.0, 1.0];
        let mut st = DcState::initial(&x, 1.0);
        st.set_mu(0, &[0.0, 0.0]);
        let cfg = SprclustConfig::with_penalties(7.0, 1.0, 1.0);
        assert_eq!(objective_s(&x, &st, &cfg).unwrap(), 1.0);

        let x = dmatrix![0.0; 3.0];
        let st = DcState::initial(&x, 1.0);
        let cfg = SprclustConfig::with_penalties(1.0, 2.0, 1.0);
        assert_eq!(objective_s(&x, &st, &cfg).unwrap(), 5.0);

        assert!(objective_s(&dmatrix![1.0, 2.0], &st, &cfg).is_err());
    }

    #[test]
    fn activity_boundary() {
        let x = DenseMatrix::zeros(3, 2);
        let st = DcState::initial(&x, 0.5);
        assert!(st.active.iter().all(|&a| a));

        let x = random_data(4, 3, 1);
        let st = DcState::initial(&x, 1e12);
        assert!(st.active.iter().all(|&a| a));

        // ||theta_12|| = 5 exactly
        let x = dmatrix![3.0, 4.0; 0.0, 0.0];
        let st = DcState::initial(&x, 5.0);
        assert!(!st.is_active(0, 1));
        let st = DcState::initial(&x, 5.0 + 1e-12);
        assert!(st.is_active(0, 1));
    }

    fn two_sample_state() -> (DenseMatrix, DcState) {
        let x = dmatrix![1.0; 0.0];
        let st = DcState::from_parts(
            &dmatrix![1.0; 0.2],
            &dmatrix![0.5],
            &dmatrix![0.0],
            vec![true],
        )
        .unwrap();
        (x, st)
    }

    #[test]
    fn pseudo_observation_blocks() {
        let (x, st) = two_sample_state();
        let cfg = SprclustConfig { rho: 0.4, ..Default::default() };
        let pr = build_pseudo_observations(0, &x, &st, &cfg).unwrap();
        let s = 0.2f64.sqrt();
        assert_abs_diff_eq!(pr.design()[(0, 0)], s / 0.4f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(pr.design()[(1, 0)], s, epsilon = 1e-15);
        assert_abs_diff_eq!(pr.response()[0], s / 0.4f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(pr.response()[1], s * 0.7, epsilon = 1e-15);

        // last sample: only the block for the earlier sample, with a -I design
        let pr = build_pseudo_observations(1, &x, &st, &cfg).unwrap();
        assert_eq!(pr.design().nrows(), 2);
        assert_abs_diff_eq!(pr.design()[(1, 0)], -s, epsilon = 1e-15);
        assert_abs_diff_eq!(pr.response()[1], s * (0.5 - 1.0 + 0.0), epsilon = 1e-15);

        assert!(build_pseudo_observations(2, &x, &st, &cfg).is_err());
    }

    /// Normal equations of the unpenalized mu_i subproblem.
    fn least_squares_mu(i: usize, x: &DenseMatrix, st: &DcState, rho: f64) -> Vec<f64> {
        let (n, d) = (st.n(), st.dim());
        (0..d)
            .map(|k| {
                let mut rhs = x[(i, k)];
                for j in 0..n {
                    if j < i {
                        rhs -= rho * (st.theta(j, i)[k] - st.mu(j)[k] + st.dual(j, i)[k]);
                    } else if j > i {
                        rhs += rho * (st.theta(i, j)[k] + st.mu(j)[k] + st.dual(i, j)[k]);
                    }
                }
                rhs / (1.0 + rho * (n - 1) as f64)
            })
            .collect()
    }

    #[test]
    fn pseudo_lasso_matches_closed_forms() {
        let x = random_data(5, 3, 2);
        let mut st = DcState::initial(&x, 1.0);
        let cfg0 = SprclustConfig::with_penalties(0.3, 0.2, 1.0);
        for _ in 0..3 {
            admm_sweep(&x, &mut st, &cfg0).unwrap();
        }
        let opts = SolverOptions { tol: 1e-13, max_iters: 1000 };
        for rho in [0.1, 0.4, 2.0] {
            for lambda1 in [0.0, 0.3] {
                let cfg = SprclustConfig { rho, lambda1, ..cfg0 };
                for i in 0..5 {
                    let pr = build_pseudo_observations(i, &x, &st, &cfg).unwrap();
                    let beta = lasso_cd(&pr, &opts).unwrap();
                    let mut closed = vec![0.0; 3];
                    mu_update(i, &x, &st, &cfg, &mut closed);
                    for k in 0..3 {
                        assert_abs_diff_eq!(beta[k], closed[k], epsilon = 1e-10);
                    }
                    if lambda1 == 0.0 {
                        let ls = least_squares_mu(i, &x, &st, rho);
                        for k in 0..3 {
                            assert_abs_diff_eq!(beta[k], ls[k], epsilon = 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sweep_update_formulas_hold_exactly() {
        let x = random_data(6, 3, 3);
        let cfg = SprclustConfig::with_penalties(0.2, 0.5, 1.5);
        let mut st = DcState::initial(&x, cfg.tau);
        for _ in 0..5 {
            let before = st.clone();
            admm_sweep(&x, &mut st, &cfg).unwrap();
            for i in 0..6 {
                for j in (i + 1)..6 {
                    for k in 0..3 {
                        let diff = st.mu(i)[k] - st.mu(j)[k];
                        let v_old = before.dual(i, j)[k];
                        let theta = st.theta(i, j)[k];
                        assert_eq!(st.dual(i, j)[k], v_old + theta - diff);
                        if !st.is_active(i, j) {
                            assert_eq!(theta, diff - v_old);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fixed_point_is_stationary() {
        let x = random_data(4, 2, 4);
        let cfg = SprclustConfig {
            admm_opts: SolverOptions { tol: 1e-10, max_iters: 100_000 },
            ..SprclustConfig::with_penalties(0.1, 0.3, 1.0)
        };
        let mut st = DcState::initial(&x, cfg.tau);
        let (_, ok) = run_admm(&x, &mut st, &cfg).unwrap();
        assert!(ok);
        let before = st.clone();
        let r = admm_sweep(&x, &mut st, &cfg).unwrap();
        assert!(r.primal <= 1e-10 && r.dual <= 1e-10);
        for (a, b) in before.mu.iter().zip(&st.mu) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn unpenalized_admm_recovers_data() {
        let x = random_data(3, 2, 5);
        let cfg = SprclustConfig {
            admm_opts: SolverOptions { tol: 1e-10, max_iters: 100_000 },
            ..SprclustConfig::with_penalties(0.0, 0.0, 1.0)
        };
        let mut st = DcState::initial(&x, cfg.tau);
        // start away from the answer
        for i in 0..3 {
            st.set_mu(i, &[0.0, 0.0]);
        }
        run_admm(&x, &mut st, &cfg).unwrap();
        for i in 0..3 {
            for k in 0..2 {
                assert_abs_diff_eq!(st.mu(i)[k], x[(i, k)], epsilon = 1e-7);
            }
            for j in (i + 1)..3 {
                for k in 0..2 {
                    assert_abs_diff_eq!(st.theta(i, j)[k], x[(i, k)] - x[(j, k)], epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn full_shrinkage_zeroes_theta() {
        let x = dmatrix![0.3; -0.2];
        let cfg = SprclustConfig::with_penalties(0.0, 10.0, 100.0);
        let mut st = DcState::initial(&x, cfg.tau);
        admm_sweep(&x, &mut st, &cfg).unwrap();
        assert_eq!(st.theta(0, 1), &[0.0]);
    }

    fn planted_two_clouds() -> DenseMatrix {
        let mut rng = crate::rng::stream(11, &[]);
        DenseMatrix::from_fn(10, 3, |i, _| {
            let centre = if i < 5 { 2.0 } else { -2.0 };
            centre + rng.random_range(-0.2..0.2)
        })
    }

    #[test]
    fn planted_clouds_split_in_two() {
        let x = planted_two_clouds();
        let cfg = SprclustConfig::with_penalties(0.05, 0.5, 1.0);
        let f = fit(&x, &cfg).unwrap();
        assert_eq!(f.k_hat, 2);
        assert_eq!(f.assignment, vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert!(f.kkt_residual <= 1e-3, "kkt {}", f.kkt_residual);
        for w in f.objective_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn no_fusion_gives_soft_thresholded_singletons() {
        let x = random_data(6, 4, 6);
        let lambda1 = 0.3;
        let cfg = SprclustConfig {
            admm_opts: SolverOptions { tol: 1e-9, max_iters: 50_000 },
            ..SprclustConfig::with_penalties(lambda1, 0.0, 1.0)
        };
        let f = fit(&x, &cfg).unwrap();
        assert_eq!(f.k_hat, 6);
        for i in 0..6 {
            for k in 0..4 {
                assert_abs_diff_eq!(
                    f.centroids[(i, k)],
                    soft_threshold(x[(i, k)], lambda1),
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn full_fusion_limit() {
        let x = random_data(7, 3, 7);
        let f = fit(&x, &SprclustConfig::with_penalties(0.05, 1e4, 1e4)).unwrap();
        assert_eq!(f.k_hat, 1);
        assert!(f.assignment.iter().all(|&l| l == 1));
    }

    #[test]
    fn huge_sparsity_zeroes_everything() {
        let x = random_data(5, 3, 8);
        let f = fit(&x, &SprclustConfig::with_penalties(1e3, 0.1, 1.0)).unwrap();
        assert!(f.centroids.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_sparsity_keeps_coordinates_nonzero() {
        let x = random_data(6, 3, 9);
        let f = fit(&x, &SprclustConfig::with_penalties(0.0, 0.2, 1.0)).unwrap();
        assert!(f.centroids.iter().all(|&v| v != 0.0));
    }

    #[test]
    fn cluster_extraction_examples() {
        let same = DcState::initial(&DenseMatrix::from_element(4, 2, 0.7), 1.0);
        assert_eq!(extract_clusters(&same, 1e-4), (vec![1, 1, 1, 1], 1));

        let x = dmatrix![0.0; 1.0; 2.0; 5.0];
        let st = DcState::initial(&x, 1.0);
        assert_eq!(extract_clusters(&st, 1e-4), (vec![1, 2, 3, 4], 4));

        // 1~2 and 2~3 by zero theta, 1 and 3 far apart
        let mu = dmatrix![0.0; 1.0; 2.0];
        let theta = dmatrix![0.0; 2.0; 0.0];
        let st = DcState::from_parts(&mu, &theta, &DenseMatrix::zeros(3, 1), vec![true; 3]).unwrap();
        assert_eq!(extract_clusters(&st, 1e-4), (vec![1, 1, 1], 1));

        // labels follow the smallest member
        let x = dmatrix![5.0; 0.0; 5.0; 0.0];
        let st = DcState::initial(&x, 1.0);
        assert_eq!(extract_clusters(&st, 1e-4), (vec![1, 2, 1, 2], 2));
    }

    #[test]
    fn kkt_examples() {
        let x = random_data(4, 3, 10);
        let cfg = SprclustConfig::with_penalties(0.0, 0.0, 1.0);
        let st = DcState::initial(&x, cfg.tau);
        assert_eq!(kkt_residual(&x, &st, &cfg).unwrap(), 0.0);

        let cfg = SprclustConfig::with_penalties(0.1, 0.3, 1.2);
        let f = fit(&x, &cfg).unwrap();
        assert!(f.kkt_residual <= 10.0 * cfg.admm_opts.tol);
        let mut perturbed = f.state.clone();
        let bumped: Vec<f64> = perturbed.mu(0).iter().map(|v| v + 0.1).collect();
        perturbed.set_mu(0, &bumped);
        assert!(kkt_residual(&x, &perturbed, &cfg).unwrap() > f.kkt_residual);
    }

    #[test]
    fn sample_permutation_equivariance() {
        let x = planted_two_clouds();
        let cfg = SprclustConfig::with_penalties(0.05, 0.5, 1.0);
        let base = fit(&x, &cfg).unwrap();
        let perm = [7, 2, 9, 0, 4, 5, 1, 8, 3, 6];
        let xp = DenseMatrix::from_fn(10, 3, |i, k| x[(perm[i], k)]);
        let fp = fit(&xp, &cfg).unwrap();
        assert_eq!(fp.k_hat, base.k_hat);
        for a in 0..10 {
            for b in 0..10 {
                let same_base = base.assignment[perm[a]] == base.assignment[perm[b]];
                assert_eq!(fp.assignment[a] == fp.assignment[b], same_base);
            }
        }
    }

    #[test]
    fn standardized_fit_reports_original_scale() {
        let x = planted_two_clouds();
        let scaled = DenseMatrix::from_fn(10, 3, |i, k| x[(i, k)] * (k + 1) as f64);
        let cfg = SprclustConfig {
            standardize: true,
            ..SprclustConfig::with_penalties(0.0, 0.3, 0.8)
        };
        let f = fit(&scaled, &cfg).unwrap();
        assert_eq!(f.k_hat, 2);
        // centroid of the first cloud sits near the first cloud's mean
        let mean0: f64 = (0..5).map(|i| scaled[(i, 2)]).sum::<f64>() / 5.0;
        assert!((f.centroids[(0, 2)] - mean0).abs() < 0.5);
    }

    #[test]
    fn input_validation() {
        let cfg = SprclustConfig::default();
        assert!(matches!(fit(&dmatrix![1.0, 2.0], &cfg), Err(Error::InsufficientSamples(1))));
        assert!(fit(&dmatrix![1.0; f64::NAN], &cfg).is_err());
        let bad = SprclustConfig { tau: 0.0, ..cfg };
        assert!(fit(&dmatrix![1.0; 2.0], &bad).is_err());
        let bad = SprclustConfig { lambda1: -1.0, ..cfg };
        assert!(fit(&dmatrix![1.0; 2.0], &bad).is_err());
    }
}
