//! Subsampling concordance criterion for choosing `(lambda1, lambda2, tau)`.
//!
//! Every combination is fitted on the full data and on `B` random subsamples.
//! Clustering stability is summarized by `C̄`, a trimmed mean of per-sample
//! sensitivity plus specificity of the subsample comembership against the
//! full-data comembership. Feature-selection stability `F̄` does the same for
//! the per-cluster sets of nonzero centroid coordinates. Selection keeps the
//! combinations with the highest `C̄` and picks the largest `F̄` among them.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::solvers::DenseMatrix;
use crate::sprclust::{self, SprclustConfig, SprclustFit};

/// Pairwise same-cluster indicators; `None` where either sample was absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Comembership {
    n: usize,
    entries: Vec<Option<bool>>,
}

impl Comembership {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<bool> {
        self.entries[i * self.n + j]
    }
}

/// Builds the comembership of `n` samples from labels given for the samples
/// in `present` (same order).
pub fn comembership_matrix(n: usize, present: &[usize], labels: &[usize]) -> Result<Comembership> {
    if present.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} present samples but {} labels",
            present.len(),
            labels.len()
        )));
    }
    let mut slot = vec![None; n];
    for (&s, &l) in present.iter().zip(labels) {
        if s >= n {
            return Err(Error::InvalidInput(format!("sample {s} outside 0..{n}")));
        }
        slot[s] = Some(l);
    }
    let mut entries = vec![None; n * n];
    for i in 0..n {
        for j in 0..n {
            if let (Some(a), Some(b)) = (slot[i], slot[j]) {
                entries[i * n + j] = Some(a == b);
            }
        }
    }
    Ok(Comembership { n, entries })
}

/// Entrywise mean ignoring missing values; `None` where no matrix has the
/// entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanComembership {
    n: usize,
    values: Vec<Option<f64>>,
}

impl MeanComembership {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n + j]
    }
}

pub fn mean_comembership(mats: &[Comembership]) -> Result<MeanComembership> {
    let n = mats.first().map_or(0, |m| m.n);
    if mats.iter().any(|m| m.n != n) {
        return Err(Error::DimensionMismatch("comembership matrices differ in size".into()));
    }
    let values = (0..n * n)
        .map(|e| {
            let (mut sum, mut count) = (0.0, 0usize);
            for m in mats {
                if let Some(v) = m.entries[e] {
                    sum += if v { 1.0 } else { 0.0 };
                    count += 1;
                }
            }
            (count > 0).then(|| sum / count as f64)
        })
        .collect();
    Ok(MeanComembership { n, values })
}

/// Per-sample concordance scores and their trimmed mean. A score is `None`
/// when the sample has no same-cluster or no other-cluster peer with a
/// defined subsample average; such samples are left out before trimming the
/// lowest `floor(alpha * defined)` scores.
pub fn sample_concordance(
    t: &Comembership,
    tbar: &MeanComembership,
    alpha: f64,
) -> Result<(Vec<Option<f64>>, Option<f64>)> {
    if t.n != tbar.n {
        return Err(Error::DimensionMismatch("comembership sizes differ".into()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("trim fraction must lie in [0, 1), got {alpha}")));
    }
    let n = t.n;
    let scores: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let (mut sens, mut n_same, mut spec, mut n_diff) = (0.0, 0usize, 0.0, 0usize);
            for j in (0..n).filter(|&j| j != i) {
                let (Some(same), Some(avg)) = (t.get(i, j), tbar.get(i, j)) else {
                    continue;
                };
                if same {
                    sens += avg;
                    n_same += 1;
                } else {
                    spec += 1.0 - avg;
                    n_diff += 1;
                }
            }
            (n_same > 0 && n_diff > 0).then(|| (sens / n_same as f64 - 1.0) + spec / n_diff as f64)
        })
        .collect();
    Ok((scores.clone(), trimmed_mean(scores.into_iter().flatten().collect(), alpha)))
}

fn trimmed_mean(mut values: Vec<f64>, alpha: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let drop = (alpha * values.len() as f64).floor() as usize;
    let kept = &values[drop..];
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// `f[k][j]` is true when strictly more than half of the members of cluster
/// `k + 1` have a nonzero coordinate `j`.
pub fn feature_indicator(assignment: &[usize], k_hat: usize, centroids: &DenseMatrix) -> Vec<Vec<bool>> {
    let d = centroids.ncols();
    let mut size = vec![0usize; k_hat];
    let mut nonzero = vec![vec![0usize; d]; k_hat];
    for (i, &label) in assignment.iter().enumerate() {
        let k = label - 1;
        size[k] += 1;
        for j in 0..d {
            if centroids[(i, j)] != 0.0 {
                nonzero[k][j] += 1;
            }
        }
    }
    nonzero
        .into_iter()
        .zip(size)
        .map(|(counts, s)| counts.into_iter().map(|c| 2 * c > s).collect())
        .collect()
}

/// Matches clusters of a subsample fit to full-data clusters, greedily by
/// the number of shared samples (largest first, ties by label). Returns, for
/// each full cluster, the matched subsample label.
pub fn match_clusters(full_labels: &[usize], present: &[usize], sub_labels: &[usize]) -> Vec<Option<usize>> {
    let k_full = full_labels.iter().copied().max().unwrap_or(0);
    let k_sub = sub_labels.iter().copied().max().unwrap_or(0);
    let mut overlap = vec![vec![0usize; k_sub]; k_full];
    for (&s, &l) in present.iter().zip(sub_labels) {
        overlap[full_labels[s] - 1][l - 1] += 1;
    }
    let mut cells: Vec<(usize, usize, usize)> = (0..k_full)
        .flat_map(|k| (0..k_sub).map(move |l| (k, l)))
        .filter_map(|(k, l)| (overlap[k][l] > 0).then_some((overlap[k][l], k, l)))
        .collect();
    cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matched = vec![None; k_full];
    let mut used = vec![false; k_sub];
    for (_, k, l) in cells {
        if matched[k].is_none() && !used[l] {
            matched[k] = Some(l + 1);
            used[l] = true;
        }
    }
    matched
}

/// Feature concordance `F̄`. `f_sub[b][k]` is the indicator row of the
/// subsample cluster matched to full cluster `k`, or `None` when unmatched.
/// `F(k)` averages over the subsamples where `k` was matched and is undefined
/// when it never was or when `f_full[k]` is all true or all false.
pub fn feature_concordance(f_full: &[Vec<bool>], f_sub: &[Vec<Option<Vec<bool>>>]) -> Option<f64> {
    let mut scores = Vec::new();
    for (k, fk) in f_full.iter().enumerate() {
        let rows: Vec<&Vec<bool>> = f_sub.iter().filter_map(|b| b.get(k).and_then(|r| r.as_ref())).collect();
        if rows.is_empty() {
            continue;
        }
        let (mut sens, mut n_on, mut spec, mut n_off) = (0.0, 0usize, 0.0, 0usize);
        for (j, &on) in fk.iter().enumerate() {
            let freq = rows.iter().filter(|r| r[j]).count() as f64 / rows.len() as f64;
            if on {
                sens += freq;
                n_on += 1;
            } else {
                spec += 1.0 - freq;
                n_off += 1;
            }
        }
        if n_on > 0 && n_off > 0 {
            scores.push(sens / n_on as f64 + spec / n_off as f64 - 1.0);
        }
    }
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub tau: Vec<f64>,
    /// Subsample fraction.
    pub r: f64,
    /// Fraction of surviving combinations kept by the `C̄` stage.
    pub s: f64,
    /// Fraction of the lowest sample scores trimmed from `C̄`.
    pub alpha: f64,
    /// Number of subsamples.
    pub b: usize,
    pub seed: u64,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            lambda1: vec![0.05, 0.1, 0.2],
            lambda2: vec![0.05, 0.1, 0.2],
            tau: vec![0.5, 1.0],
            r: 0.5,
            s: 0.4,
            alpha: 0.2,
            b: 5,
            seed: 0,
        }
    }
}

impl TuningGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, values) in [("lambda1", &self.lambda1), ("lambda2", &self.lambda2), ("tau", &self.tau)] {
            if values.is_empty() {
                return Err(Error::EmptyInput(format!("tuning grid has no {name} values")));
            }
            if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidInput(format!("{name} values must be positive")));
            }
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidInput(format!("r must lie in (0, 1), got {}", self.r)));
        }
        if !(self.s > 0.0 && self.s <= 1.0) {
            return Err(Error::InvalidInput(format!("s must lie in (0, 1], got {}", self.s)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.b == 0 {
            return Err(Error::InvalidInput("at least one subsample is required".into()));
        }
        Ok(())
    }

    /// All `(lambda1, lambda2, tau)` triples, `tau` varying fastest.
    pub fn combos(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.lambda1.len() * self.lambda2.len() * self.tau.len());
        for &l1 in &self.lambda1 {
            for &l2 in &self.lambda2 {
                for &t in &self.tau {
                    out.push((l1, l2, t));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Omission {
    SingleCluster,
    AllFeaturesSelected,
    UndefinedSampleScore,
    UndefinedFeatureScore,
}

impl Omission {
    pub fn describe(self) -> &'static str {
        match self {
            Omission::SingleCluster => "a single cluster",
            Omission::AllFeaturesSelected => "all features selected",
            Omission::UndefinedSampleScore => "no sample concordance defined",
            Omission::UndefinedFeatureScore => "no feature concordance defined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub c_bar: Option<f64>,
    pub f_bar: Option<f64>,
    pub k_hat: usize,
    /// Subsamples whose fit had more clusters than the full fit and were
    /// left out of `F̄`.
    pub dropped_subsamples: usize,
    /// Samples without a defined concordance score.
    pub undefined_samples: usize,
    pub omitted: Option<Omission>,
}

impl ConcordanceReport {
    pub fn is_omitted(&self) -> bool {
        self.omitted.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct TuningOutcome {
    /// Index of the chosen combination in `reports`.
    pub chosen: usize,
    pub config: SprclustConfig,
    pub reports: Vec<ConcordanceReport>,
    /// Full-data fit of the chosen combination.
    pub fit: SprclustFit,
}

struct SubsampleFit {
    present: Vec<usize>,
    fit: SprclustFit,
}

fn draw_subsample(n: usize, m: usize, seed: u64, combo: usize, b: usize) -> Vec<usize> {
    let mut stream = rng::stream(seed, &[combo as u64, b as u64]);
    let mut idx = sample(&mut stream, n, m).into_vec();
    idx.sort_unstable();
    idx
}

fn evaluate_combo(
    x: &DenseMatrix,
    grid: &TuningGrid,
    cfg: &SprclustConfig,
    combo: usize,
) -> Result<(ConcordanceReport, SprclustFit)> {
    let n = x.nrows();
    let m = (grid.r * n as f64).floor() as usize;
    let full = sprclust::fit(x, cfg)?;
    let subs: Vec<SubsampleFit> = (0..grid.b)
        .into_par_iter()
        .map(|b| {
            let present = draw_subsample(n, m, grid.seed, combo, b);
            let xs = x.select_rows(present.iter());
            sprclust::fit(&xs, cfg).map(|fit| SubsampleFit { present, fit })
        })
        .collect::<Result<_>>()?;

    let all: Vec<usize> = (0..n).collect();
    let t = comembership_matrix(n, &all, &full.assignment)?;
    let tb: Vec<Comembership> = subs
        .iter()
        .map(|s| comembership_matrix(n, &s.present, &s.fit.assignment))
        .collect::<Result<_>>()?;
    let tbar = mean_comembership(&tb)?;
    let (scores, c_bar) = sample_concordance(&t, &tbar, grid.alpha)?;

    let f_full = feature_indicator(&full.assignment, full.k_hat, &full.centroids);
    let mut dropped = 0;
    let mut f_sub = Vec::new();
    for s in &subs {
        if s.fit.k_hat > full.k_hat {
            dropped += 1;
            continue;
        }
        let f_b = feature_indicator(&s.fit.assignment, s.fit.k_hat, &s.fit.centroids);
        let matched = match_clusters(&full.assignment, &s.present, &s.fit.assignment);
        f_sub.push(matched.into_iter().map(|l| l.map(|l| f_b[l - 1].clone())).collect());
    }
    let f_bar = feature_concordance(&f_full, &f_sub);

    let omitted = if full.k_hat == 1 {
        Some(Omission::SingleCluster)
    } else if f_full.iter().flatten().all(|&v| v) {
        Some(Omission::AllFeaturesSelected)
    } else if c_bar.is_none() {
        Some(Omission::UndefinedSampleScore)
    } else if f_bar.is_none() {
        Some(Omission::UndefinedFeatureScore)
    } else {
        None
    };
    let report = ConcordanceReport {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        tau: cfg.tau,
        c_bar,
        f_bar,
        k_hat: full.k_hat,
        dropped_subsamples: dropped,
        undefined_samples: scores.iter().filter(|s| s.is_none()).count(),
        omitted,
    };
    Ok((report, full))
}

/// Larger `lambda2`, then larger `lambda1`, then smaller `tau` ranks first.
fn tie_break(a: &ConcordanceReport, b: &ConcordanceReport) -> Ordering {
    b.lambda2
        .total_cmp(&a.lambda2)
        .then(b.lambda1.total_cmp(&a.lambda1))
        .then(a.tau.total_cmp(&b.tau))
}

/// Picks the winning report among `reports`: the top `ceil(s * survivors)`
/// by `C̄`, then the largest `F̄`. Returns `None` when every report is
/// omitted.
pub fn choose(reports: &[ConcordanceReport], s: f64) -> Option<usize> {
    let mut survivors: Vec<usize> = (0..reports.len()).filter(|&i| !reports[i].is_omitted()).collect();
    if survivors.is_empty() {
        return None;
    }
    let keep = ((s * survivors.len() as f64).ceil() as usize).clamp(1, survivors.len());
    let c = |i: usize| reports[i].c_bar.unwrap_or(f64::NEG_INFINITY);
    let f = |i: usize| reports[i].f_bar.unwrap_or(f64::NEG_INFINITY);
    survivors.sort_by(|&a, &b| c(b).total_cmp(&c(a)).then(tie_break(&reports[a], &reports[b])));
    survivors.truncate(keep);
    survivors
        .into_iter()
        .min_by(|&a, &b| f(b).total_cmp(&f(a)).then(tie_break(&reports[a], &reports[b])))
}

/// Runs the two-stage selection over `grid`. Penalties come from the grid;
/// every other setting comes from `template`.
pub fn select_tuning(x: &DenseMatrix, grid: &TuningGrid, template: &SprclustConfig) -> Result<TuningOutcome> {
    grid.validate()?;
    template.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples(n));
    }
    let m = (grid.r * n as f64).floor() as usize;
    if m < 2 {
        return Err(Error::InvalidInput(format!(
            "subsamples of {m} from {n} samples are too small to cluster; raise r or add samples"
        )));
    }
    let configs: Vec<SprclustConfig> = grid
        .combos()
        .into_iter()
        .map(|(lambda1, lambda2, tau)| SprclustConfig {
            lambda1,
            lambda2,
            tau,
            ..*template
        })
        .collect();
    let evaluated: Vec<(ConcordanceReport, SprclustFit)> = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| evaluate_combo(x, grid, cfg, i))
        .collect::<Result<_>>()?;
    let (reports, mut fits): (Vec<_>, Vec<_>) = evaluated.into_iter().unzip();

    let Some(chosen) = choose(&reports, grid.s) else {
        let reasons = reports
            .iter()
            .map(|r| {
                format!(
                    "({}, {}, {}): {}",
                    r.lambda1,
                    r.lambda2,
                    r.tau,
                    r.omitted.map_or("", Omission::describe)
                )
            })
            .collect();
        return Err(Error::NoValidCombo(reasons));
    };
    Ok(TuningOutcome {
        chosen,
        config: configs[chosen],
        fit: fits.swap_remove(chosen),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn comembership_examples() {
        let t = comembership_matrix(3, &[0, 1, 2], &[1, 1, 2]).unwrap();
        let expect = [[true, true, false], [true, true, false], [false, false, true]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(t.get(i, j), Some(expect[i][j]));
            }
        }
        let t = comembership_matrix(3, &[0, 1], &[1, 2]).unwrap();
        for k in 0..3 {
            assert_eq!(t.get(2, k), None);
            assert_eq!(t.get(k, 2), None);
        }
        let t = comembership_matrix(4, &[0, 1, 2, 3], &[3; 4]).unwrap();
        assert!(t.entries.iter().all(|&e| e == Some(true)));
        assert!(comembership_matrix(3, &[0], &[1, 2]).is_err());
    }

    #[test]
    fn mean_comembership_examples() {
        let t = comembership_matrix(3, &[0, 1, 2], &[1, 1, 2]).unwrap();
        let m = mean_comembership(&[t.clone(), t.clone(), t.clone()]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), t.get(i, j).map(|b| if b { 1.0 } else { 0.0 }));
            }
        }
        let a = comembership_matrix(3, &[0, 1, 2], &[1, 1, 2]).unwrap();
        let b = comembership_matrix(3, &[0, 1, 2], &[1, 2, 2]).unwrap();
        let c = comembership_matrix(3, &[0, 2], &[1, 2]).unwrap();
        let m = mean_comembership(&[a, b, c]).unwrap();
        assert_eq!(m.get(0, 1), Some(0.5));
        let d = comembership_matrix(3, &[0, 1], &[1, 1]).unwrap();
        let m = mean_comembership(&[d.clone(), d]).unwrap();
        assert_eq!(m.get(0, 2), None);
    }

    fn as_mean(t: &Comembership) -> MeanComembership {
        mean_comembership(std::slice::from_ref(t)).unwrap()
    }

    #[test]
    fn sample_concordance_examples() {
        let t = comembership_matrix(6, &[0, 1, 2, 3, 4, 5], &[1, 1, 2, 2, 3, 3]).unwrap();
        let (c, c_bar) = sample_concordance(&t, &as_mean(&t), 0.2).unwrap();
        assert!(c.iter().all(|&v| v == Some(1.0)));
        assert_eq!(c_bar, Some(1.0));

        let half = MeanComembership { n: 6, values: vec![Some(0.5); 36] };
        let (c, _) = sample_concordance(&t, &half, 0.2).unwrap();
        assert!(c.iter().all(|&v| v == Some(0.0)));

        let t = comembership_matrix(3, &[0, 1, 2], &[1, 1, 2]).unwrap();
        let mut tbar = as_mean(&t);
        tbar.values[2] = Some(0.4);
        tbar.values[6] = Some(0.4);
        let (c, _) = sample_concordance(&t, &tbar, 0.0).unwrap();
        assert_eq!(c[0], Some(0.6));
        // sample 3 is a singleton
        assert_eq!(c[2], None);
    }

    #[test]
    fn trimming_drops_lowest() {
        assert_eq!(trimmed_mean(vec![0.0, 1.0, 1.0, 1.0, 1.0], 0.2), Some(1.0));
        assert_eq!(trimmed_mean(vec![0.0, 1.0, 1.0, 1.0], 0.2), Some(0.75));
        assert_eq!(trimmed_mean(vec![], 0.2), None);
    }

    #[test]
    fn feature_indicator_examples() {
        let mu = DenseMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let f = feature_indicator(&[1, 1, 1], 1, &mu);
        assert_eq!(f, vec![vec![true, false, false]]);
        let mu = DenseMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(feature_indicator(&[1, 1], 1, &mu), vec![vec![false]]);
    }

    #[test]
    fn feature_concordance_examples() {
        let full = vec![vec![true, false], vec![false, true]];
        let same: Vec<Vec<Option<Vec<bool>>>> =
            (0..4).map(|_| full.iter().cloned().map(Some).collect()).collect();
        assert_eq!(feature_concordance(&full, &same), Some(1.0));

        let full = vec![vec![true, false, true, false]];
        let subs = vec![
            vec![Some(vec![true, true, false, false])],
            vec![Some(vec![false, false, true, true])],
        ];
        assert_eq!(feature_concordance(&full, &subs), Some(0.0));

        // ten subsamples reproduce frequencies (0.8, 0.1)
        let full = vec![vec![true, false]];
        let subs: Vec<_> = (0..10).map(|b| vec![Some(vec![b < 8, b < 1])]).collect();
        assert_abs_diff_eq!(feature_concordance(&full, &subs).unwrap(), 0.7, epsilon = 1e-12);

        // all selected: undefined
        assert_eq!(feature_concordance(&[vec![true, true]], &[vec![Some(vec![true, true])]]), None);
        // never matched: undefined
        assert_eq!(feature_concordance(&[vec![true, false]], &[vec![None]]), None);
    }

    #[test]
    fn greedy_matching() {
        let full = [1, 1, 1, 2, 2, 2];
        // subsample labels swapped relative to the full fit
        let m = match_clusters(&full, &[0, 1, 3, 4, 5], &[2, 2, 1, 1, 1]);
        assert_eq!(m, vec![Some(2), Some(1)]);
        // subsample merged everything: second cluster unmatched
        let m = match_clusters(&full, &[0, 1, 3], &[1, 1, 1]);
        assert_eq!(m, vec![Some(1), None]);
    }

    fn report(l1: f64, l2: f64, tau: f64, c: f64, f: f64) -> ConcordanceReport {
        ConcordanceReport {
            lambda1: l1,
            lambda2: l2,
            tau,
            c_bar: Some(c),
            f_bar: Some(f),
            k_hat: 2,
            dropped_subsamples: 0,
            undefined_samples: 0,
            omitted: None,
        }
    }

    #[test]
    fn choice_rules() {
        let r = vec![report(0.1, 0.1, 1.0, 0.8, 0.9), report(0.1, 0.2, 1.0, 0.8, 0.4)];
        assert_eq!(choose(&r, 1.0), Some(0));
        // only the top C̄ survives stage 1
        let r = vec![report(0.1, 0.1, 1.0, 0.5, 0.9), report(0.1, 0.2, 1.0, 0.8, 0.4)];
        assert_eq!(choose(&r, 0.4), Some(1));
        // ties: larger lambda2, then larger lambda1, then smaller tau
        let r = vec![
            report(0.1, 0.1, 1.0, 0.8, 0.5),
            report(0.1, 0.2, 1.0, 0.8, 0.5),
            report(0.2, 0.2, 1.0, 0.8, 0.5),
            report(0.2, 0.2, 0.5, 0.8, 0.5),
        ];
        assert_eq!(choose(&r, 1.0), Some(3));
        let mut r = vec![report(0.1, 0.1, 1.0, 0.9, 0.9), report(0.1, 0.2, 1.0, 0.1, 0.1)];
        r[0].omitted = Some(Omission::SingleCluster);
        assert_eq!(choose(&r, 0.4), Some(1));
        r[1].omitted = Some(Omission::AllFeaturesSelected);
        assert_eq!(choose(&r, 0.4), None);
    }

    fn planted(seed: u64) -> DenseMatrix {
        let mut rng = rng::stream(seed, &[]);
        DenseMatrix::from_fn(16, 6, |i, j| {
            let signal = if j < 3 { if i < 8 { 2.0 } else { -2.0 } } else { 0.0 };
            signal + rng.random_range(-0.3..0.3)
        })
    }

    #[test]
    fn planted_two_clusters_are_selected() {
        let x = planted(3);
        let grid = TuningGrid {
            lambda1: vec![0.2, 0.5],
            lambda2: vec![0.02, 0.3, 50.0],
            tau: vec![1.0, 100.0],
            ..Default::default()
        };
        let out = select_tuning(&x, &grid, &SprclustConfig::default()).unwrap();
        assert_eq!(out.fit.k_hat, 2);
        assert!(!out.reports[out.chosen].is_omitted());
        for r in &out.reports {
            if r.k_hat == 1 {
                assert_eq!(r.omitted, Some(Omission::SingleCluster));
            }
            if let Some(c) = r.c_bar {
                assert!((-1.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn full_fits_ignore_the_seed() {
        let x = planted(4);
        let grid = TuningGrid {
            lambda1: vec![0.2],
            lambda2: vec![0.3],
            tau: vec![1.0],
            ..Default::default()
        };
        let a = select_tuning(&x, &grid, &SprclustConfig::default()).unwrap();
        let b = select_tuning(&x, &TuningGrid { seed: 99, ..grid.clone() }, &SprclustConfig::default()).unwrap();
        assert_eq!(a.fit, b.fit);
        let again = select_tuning(&x, &grid, &SprclustConfig::default()).unwrap();
        assert_eq!(a.reports, again.reports);
    }

    #[test]
    fn all_omitted_is_an_error() {
        let x = planted(5);
        let grid = TuningGrid {
            lambda1: vec![0.1],
            lambda2: vec![1e4],
            tau: vec![1e4],
            ..Default::default()
        };
        let err = select_tuning(&x, &grid, &SprclustConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoValidCombo(ref v) if v.len() == 1));
    }

    #[test]
    fn grid_validation() {
        assert!(TuningGrid::default().validate().is_ok());
        assert!(TuningGrid { r: 1.0, ..Default::default() }.validate().is_err());
        assert!(TuningGrid { b: 0, ..Default::default() }.validate().is_err());
        assert!(TuningGrid { tau: vec![], ..Default::default() }.validate().is_err());
        assert!(TuningGrid { lambda1: vec![-0.1], ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn sample_scores_are_bounded(
            labels in proptest::collection::vec(1usize..4, 4..10),
            avgs in proptest::collection::vec(0.0f64..=1.0, 100),
        ) {
            let n = labels.len();
            let all: Vec<usize> = (0..n).collect();
            let t = comembership_matrix(n, &all, &labels).unwrap();
            let mut values = vec![None; n * n];
            for i in 0..n {
                for j in 0..n {
                    let (a, b) = (i.min(j), i.max(j));
                    values[i * n + j] = Some(if i == j { 1.0 } else { avgs[a * 10 + b] });
                }
            }
            let (c, _) = sample_concordance(&t, &MeanComembership { n, values }, 0.2).unwrap();
            for v in c.into_iter().flatten() {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn feature_scores_are_bounded(
            full in proptest::collection::vec(proptest::bool::ANY, 5),
            subs in proptest::collection::vec(proptest::collection::vec(proptest::bool::ANY, 5), 1..6),
        ) {
            let f_sub: Vec<_> = subs.into_iter().map(|r| vec![Some(r)]).collect();
            if let Some(v) = feature_concordance(&[full], &f_sub) {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}
