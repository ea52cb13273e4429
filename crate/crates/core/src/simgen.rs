//! Synthetic matrix-normal scenarios and the scores used to evaluate fits
//! against them.
//!
//! Subjects in cluster `k` are drawn as `Z ~ MN(0, Sigma_T (x) Sigma_Sk)`:
//! every cluster shares the temporal covariance and has its own spatial
//! precision `Omega_Sk` built from a hub or small-world graph.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::SubjectSeries;
use crate::error::{Error, Result};
use crate::glasso::{upper_len, upper_pairs};
use crate::rng::{self, StreamRng};
use crate::solvers::{sym_factor, symmetric_eigenvalues, DenseMatrix, SymFactor};

/// `0.5^|s - t|`.
pub fn ar_covariance(q: usize) -> DenseMatrix {
    DenseMatrix::from_fn(q, q, |s, t| 0.5f64.powi(s.abs_diff(t) as i32))
}

/// `1 / (|s - t| + 1)` within three steps of the diagonal, zero beyond.
pub fn band_covariance(q: usize) -> DenseMatrix {
    DenseMatrix::from_fn(q, q, |s, t| {
        let lag = s.abs_diff(t);
        if lag < 4 {
            1.0 / (lag as f64 + 1.0)
        } else {
            0.0
        }
    })
}

/// Undirected simple graph on `p` nodes, stored over the strict upper
/// triangle in the order of [`upper_pairs`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "EdgeList", try_from = "EdgeList")]
pub struct Adjacency {
    p: usize,
    upper: Vec<bool>,
}

/// Serialized form: node count and 1-based edges.
#[derive(Serialize, Deserialize)]
struct EdgeList {
    p: usize,
    edges: Vec<[usize; 2]>,
}

impl From<Adjacency> for EdgeList {
    fn from(a: Adjacency) -> Self {
        EdgeList {
            p: a.p,
            edges: a.edges().map(|(i, j)| [i + 1, j + 1]).collect(),
        }
    }
}

impl TryFrom<EdgeList> for Adjacency {
    type Error = Error;

    fn try_from(e: EdgeList) -> Result<Self> {
        let mut a = Adjacency::empty(e.p);
        for [i, j] in e.edges {
            if i == 0 || j == 0 || i > e.p || j > e.p || i == j {
                return Err(Error::InvalidInput(format!("edge ({i}, {j}) invalid for {} nodes", e.p)));
            }
            a.set(i - 1, j - 1, true);
        }
        Ok(a)
    }
}

fn upper_index(i: usize, j: usize) -> usize {
    let (i, j) = (i.min(j), i.max(j));
    j * (j - 1) / 2 + i
}

impl Adjacency {
    pub fn empty(p: usize) -> Self {
        Adjacency {
            p,
            upper: vec![false; upper_len(p)],
        }
    }

    /// Support of the off-diagonal entries, tested for exact zero.
    pub fn from_precision(omega: &DenseMatrix) -> Self {
        let p = omega.nrows();
        Adjacency {
            p,
            upper: upper_pairs(p).map(|(i, j)| omega[(i, j)] != 0.0).collect(),
        }
    }

    /// Support of a vectorized strict upper triangle.
    pub fn from_upper(p: usize, values: &[f64]) -> Result<Self> {
        if values.len() != upper_len(p) {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {p}-node upper triangle",
                values.len()
            )));
        }
        Ok(Adjacency {
            p,
            upper: values.iter().map(|&v| v != 0.0).collect(),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i != j && self.upper[upper_index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        assert!(i != j, "self loops are not representable");
        self.upper[upper_index(i, j)] = on;
    }

    /// Edges `(i, j)`, `i < j`, 0-based.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        upper_pairs(self.p)
            .zip(&self.upper)
            .filter_map(|(e, &on)| on.then_some(e))
    }

    pub fn edge_count(&self) -> usize {
        self.upper.iter().filter(|&&b| b).count()
    }

    pub fn degree(&self, v: usize) -> usize {
        (0..self.p).filter(|&u| self.contains(u, v)).count()
    }
}

/// Hub graph: nodes taken in the order `shift, shift + 1, ...` (mod `p`) are
/// cut into `groups` contiguous blocks of near-equal size, and the first node
/// of each block links to the rest of its block.
pub fn hub_adjacency(p: usize, groups: usize, shift: usize) -> Result<Adjacency> {
    if p < 4 {
        return Err(Error::InvalidInput(format!("hub graphs need p >= 4, got {p}")));
    }
    let g = groups.clamp(1, p / 2);
    let mut adj = Adjacency::empty(p);
    let mut start = 0;
    for b in 0..g {
        let size = p / g + usize::from(b < p % g);
        let node = |t: usize| (t + shift) % p;
        let hub = node(start);
        for t in (start + 1)..(start + size) {
            adj.set(hub, node(t), true);
        }
        start += size;
    }
    Ok(adj)
}

/// Ring over `order` where each node links to its successor, followed by
/// Watts-Strogatz rewiring: each ring edge `(u, v)` is replaced with
/// probability `rewire` by `(u, w)` for a uniformly drawn `w` not already
/// adjacent to `u`. The edge count is unchanged.
pub fn small_world_adjacency(order: &[usize], rewire: f64, rng: &mut StreamRng) -> Result<Adjacency> {
    let p = order.len();
    if p < 4 {
        return Err(Error::InvalidInput(format!("small-world graphs need p >= 4, got {p}")));
    }
    if !(0.0..=1.0).contains(&rewire) {
        return Err(Error::InvalidInput(format!("rewiring probability {rewire} outside [0, 1]")));
    }
    let mut adj = Adjacency::empty(p);
    let ring: Vec<(usize, usize)> = (0..p).map(|t| (order[t], order[(t + 1) % p])).collect();
    for &(u, v) in &ring {
        adj.set(u, v, true);
    }
    for (u, v) in ring {
        if !rng.random_bool(rewire) {
            continue;
        }
        let candidates: Vec<usize> = (0..p).filter(|&w| w != u && !adj.contains(u, w)).collect();
        if candidates.is_empty() {
            continue;
        }
        let w = candidates[rng.random_range(0..candidates.len())];
        adj.set(u, v, false);
        adj.set(u, w, true);
    }
    Ok(adj)
}

/// `weight` on every edge, zero elsewhere off the diagonal, and a constant
/// diagonal of `|lambda_min| + 0.1` where `lambda_min` is the smallest
/// eigenvalue of the off-diagonal part.
pub fn precision_from_graph(adj: &Adjacency, weight: f64) -> Result<DenseMatrix> {
    let p = adj.p();
    let mut omega = DenseMatrix::zeros(p, p);
    for (i, j) in adj.edges() {
        omega[(i, j)] = weight;
        omega[(j, i)] = weight;
    }
    let min_eig = symmetric_eigenvalues(&omega).first().copied().unwrap_or(0.0);
    omega.fill_diagonal(min_eig.abs() + 0.1);
    sym_factor(&omega)?;
    Ok(omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ArHub,
    ArSmallWorld,
    BcHub,
    BcSmallWorld,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::ArHub,
        Scenario::ArSmallWorld,
        Scenario::BcHub,
        Scenario::BcSmallWorld,
    ];

    pub fn temporal_covariance(self, q: usize) -> DenseMatrix {
        match self {
            Scenario::ArHub | Scenario::ArSmallWorld => ar_covariance(q),
            Scenario::BcHub | Scenario::BcSmallWorld => band_covariance(q),
        }
    }

    pub fn is_hub(self) -> bool {
        matches!(self, Scenario::ArHub | Scenario::BcHub)
    }

    fn name(self) -> &'static str {
        match self {
            Scenario::ArHub => "ar_hub",
            Scenario::ArSmallWorld => "ar_small_world",
            Scenario::BcHub => "bc_hub",
            Scenario::BcSmallWorld => "bc_small_world",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    /// Accepts the snake-case name or the number 1 to 4.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        if let Ok(k) = s.parse::<usize>() {
            if (1..=4).contains(&k) {
                return Ok(Scenario::ALL[k - 1]);
            }
        }
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    /// Number of clusters.
    pub k: usize,
    /// Subjects per cluster.
    pub n_k: usize,
    pub p: usize,
    pub q: usize,
    pub seed: u64,
    pub hub_groups: usize,
    pub edge_weight: f64,
    pub rewire_prob: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            scenario: Scenario::ArHub,
            k: 3,
            n_k: 10,
            p: 10,
            q: 100,
            seed: 0,
            hub_groups: 3,
            edge_weight: 0.3,
            rewire_prob: 0.05,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_k == 0 {
            return Err(Error::InvalidInput("need at least one cluster and one subject per cluster".into()));
        }
        if self.p < 4 {
            return Err(Error::InvalidInput(format!("p must be at least 4, got {}", self.p)));
        }
        if self.q < 2 {
            return Err(Error::InvalidInput(format!("q must be at least 2, got {}", self.q)));
        }
        if self.hub_groups == 0 {
            return Err(Error::InvalidInput("hub_groups must be at least 1".into()));
        }
        if !(self.edge_weight.is_finite() && self.edge_weight != 0.0) {
            return Err(Error::InvalidInput("edge_weight must be finite and nonzero".into()));
        }
        if !(0.0..=1.0).contains(&self.rewire_prob) {
            return Err(Error::InvalidInput("rewire_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn subject_count(&self) -> usize {
        self.k * self.n_k
    }
}

// Stream namespaces under the scenario seed.
const GRAPH_STREAM: u64 = 1;
const SUBJECT_STREAM: u64 = 2;

/// Precisions and adjacencies of `k` hub graphs. The block partition of
/// cluster `c` is shifted by `c * ceil(p / (groups * k))` from a seeded base
/// offset.
pub fn hub_precision(
    p: usize,
    k: usize,
    groups: usize,
    weight: f64,
    seed: u64,
) -> Result<Vec<(DenseMatrix, Adjacency)>> {
    let base = rng::stream(seed, &[GRAPH_STREAM]).random_range(0..p);
    let step = p.div_ceil(groups.clamp(1, p / 2.max(1)) * k);
    (0..k)
        .map(|c| {
            let adj = hub_adjacency(p, groups, base + c * step)?;
            Ok((precision_from_graph(&adj, weight)?, adj))
        })
        .collect()
}

/// Precisions and adjacencies of `k` small-world graphs, each on its own
/// random ring ordering.
pub fn small_world_precision(
    p: usize,
    k: usize,
    rewire: f64,
    weight: f64,
    seed: u64,
) -> Result<Vec<(DenseMatrix, Adjacency)>> {
    (0..k)
        .map(|c| {
            let mut stream = rng::stream(seed, &[GRAPH_STREAM, c as u64]);
            let mut order: Vec<usize> = (0..p).collect();
            order.shuffle(&mut stream);
            let adj = small_world_adjacency(&order, rewire, &mut stream)?;
            Ok((precision_from_graph(&adj, weight)?, adj))
        })
        .collect()
}

/// `Z = L_S G L_T'` with `G` filled row by row with independent standard
/// normals.
pub fn sample_matrix_normal(spatial: &SymFactor, temporal: &SymFactor, rng: &mut StreamRng) -> DenseMatrix {
    let (p, q) = (spatial.dim(), temporal.dim());
    let mut g = DenseMatrix::zeros(p, q);
    for i in 0..p {
        for t in 0..q {
            g[(i, t)] = rng.sample(StandardNormal);
        }
    }
    spatial.lower() * g * temporal.lower().transpose()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub subject_ids: Vec<String>,
    /// 1-based cluster per subject.
    pub labels: Vec<usize>,
    /// Graph of each cluster.
    pub adjacency: Vec<Adjacency>,
    #[serde(skip)]
    pub precisions: Vec<DenseMatrix>,
    #[serde(skip)]
    pub temporal: Option<DenseMatrix>,
}

impl GroundTruth {
    /// Adjacency of the subject's true cluster.
    pub fn subject_graph(&self, subject: usize) -> &Adjacency {
        &self.adjacency[self.labels[subject] - 1]
    }
}

/// Draws `k * n_k` subjects, cluster-blocked, with ids `s001, s002, ...`.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(Vec<SubjectSeries>, GroundTruth)> {
    spec.validate()?;
    let graphs = if spec.scenario.is_hub() {
        hub_precision(spec.p, spec.k, spec.hub_groups, spec.edge_weight, spec.seed)?
    } else {
        small_world_precision(spec.p, spec.k, spec.rewire_prob, spec.edge_weight, spec.seed)?
    };
    let temporal = spec.scenario.temporal_covariance(spec.q);
    let temporal_factor = sym_factor(&temporal)?;
    let spatial_factors: Vec<SymFactor> = graphs
        .iter()
        .map(|(omega, _)| sym_factor(&sym_factor(omega)?.inverse()))
        .collect::<Result<_>>()?;

    let total = spec.subject_count();
    let width = total.to_string().len().max(3);
    let labels: Vec<usize> = (0..total).map(|s| s / spec.n_k + 1).collect();
    let ids: Vec<String> = (0..total).map(|s| format!("s{:0width$}", s + 1)).collect();
    let subjects: Vec<SubjectSeries> = (0..total)
        .into_par_iter()
        .map(|s| {
            let mut stream = rng::stream(spec.seed, &[SUBJECT_STREAM, s as u64]);
            let z = sample_matrix_normal(&spatial_factors[labels[s] - 1], &temporal_factor, &mut stream);
            SubjectSeries::new(ids[s].clone(), z)
        })
        .collect::<Result<_>>()?;

    let (precisions, adjacency) = graphs.into_iter().unzip();
    Ok((
        subjects,
        GroundTruth {
            subject_ids: ids,
            labels,
            adjacency,
            precisions,
            temporal: Some(temporal),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub rand: f64,
    pub a_rand: f64,
    pub jaccard: f64,
    pub k_hat: usize,
}

fn choose2(m: usize) -> f64 {
    (m as f64) * (m as f64 - 1.0) / 2.0
}

/// Rand, Hubert-Arabie adjusted Rand and Jaccard indices between two
/// partitions given as label vectors.
pub fn cluster_metrics(truth: &[usize], estimate: &[usize]) -> Result<ClusterMetrics> {
    if truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} true labels but {} estimated",
            truth.len(),
            estimate.len()
        )));
    }
    let n = truth.len();
    if n < 2 {
        return Err(Error::InvalidInput("cluster metrics need at least two samples".into()));
    }
    let compact = |labels: &[usize]| {
        let mut seen: Vec<usize> = labels.to_vec();
        seen.sort_unstable();
        seen.dedup();
        let codes: Vec<usize> = labels.iter().map(|l| seen.binary_search(l).unwrap()).collect();
        (codes, seen.len())
    };
    let (a, ka) = compact(truth);
    let (b, kb) = compact(estimate);
    let mut table = vec![0usize; ka * kb];
    for (&x, &y) in a.iter().zip(&b) {
        table[x * kb + y] += 1;
    }
    let mut rows = vec![0usize; ka];
    let mut cols = vec![0usize; kb];
    for x in 0..ka {
        for y in 0..kb {
            rows[x] += table[x * kb + y];
            cols[y] += table[x * kb + y];
        }
    }
    let both: f64 = table.iter().map(|&c| choose2(c)).sum();
    let same_truth: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let same_est: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);

    let identical = both == same_truth && both == same_est;
    let rand = (total + 2.0 * both - same_truth - same_est) / total;
    let expected = same_truth * same_est / total;
    let max = 0.5 * (same_truth + same_est);
    let a_rand = if max == expected {
        if identical {
            1.0
        } else {
            0.0
        }
    } else {
        (both - expected) / (max - expected)
    };
    let union = same_truth + same_est - both;
    let jaccard = if union == 0.0 { 1.0 } else { both / union };
    Ok(ClusterMetrics {
        rand,
        a_rand,
        jaccard,
        k_hat: kb,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    /// `None` when the true graph has no edges.
    pub tpr: Option<f64>,
    /// `None` when the true graph is complete.
    pub tnr: Option<f64>,
    /// Zero when nothing was estimated.
    pub fdr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn graph_metrics(truth: &Adjacency, estimate: &Adjacency) -> Result<GraphMetrics> {
    if truth.p != estimate.p {
        return Err(Error::DimensionMismatch(format!(
            "true graph has {} nodes, estimate {}",
            truth.p, estimate.p
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&t, &e) in truth.upper.iter().zip(&estimate.upper) {
        match (t, e) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(GraphMetrics {
        tpr: ratio(tp, tp + fn_),
        tnr: ratio(tn, tn + fp),
        fdr: ratio(fp, tp + fp).unwrap_or(0.0),
        tp,
        fp,
        tn,
        fn_,
    })
}

/// Averages per-subject rates within each true cluster, then across
/// clusters, skipping undefined rates. Counts are summed.
pub fn average_graph_metrics(per_subject: &[GraphMetrics], labels: &[usize]) -> Result<GraphMetrics> {
    if per_subject.len() != labels.len() {
        return Err(Error::DimensionMismatch("one label per subject is required".into()));
    }
    if per_subject.is_empty() {
        return Err(Error::EmptyInput("no graph metrics to average".into()));
    }
    let k = labels.iter().copied().max().unwrap_or(0);
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let by_cluster = |pick: &dyn Fn(&GraphMetrics) -> Option<f64>| {
        let per: Vec<f64> = (1..=k)
            .filter_map(|c| {
                let vals: Vec<f64> = per_subject
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == c)
                    .filter_map(|(m, _)| pick(m))
                    .collect();
                mean(&vals)
            })
            .collect();
        mean(&per)
    };
    Ok(GraphMetrics {
        tpr: by_cluster(&|m| m.tpr),
        tnr: by_cluster(&|m| m.tnr),
        fdr: by_cluster(&|m| Some(m.fdr)).unwrap_or(0.0),
        tp: per_subject.iter().map(|m| m.tp).sum(),
        fp: per_subject.iter().map(|m| m.fp).sum(),
        tn: per_subject.iter().map(|m| m.tn).sum(),
        fn_: per_subject.iter().map(|m| m.fn_).sum(),
    })
}

/// Empirical covariance of `Vec(Z)` (column-stacked) over draws; used to
/// check the sampler.
pub fn vec_covariance(draws: &[DenseMatrix]) -> DenseMatrix {
    let m = draws[0].len();
    let mut acc = DenseMatrix::zeros(m, m);
    for z in draws {
        let v = DVector::from_column_slice(z.as_slice());
        acc.ger(1.0, &v, &v, 1.0);
    }
    acc / draws.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn temporal_covariances() {
        assert_eq!(ar_covariance(1), DenseMatrix::from_element(1, 1, 1.0));
        let ar = ar_covariance(3);
        let expect = [[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]];
        for s in 0..3 {
            for t in 0..3 {
                assert_eq!(ar[(s, t)], expect[s][t]);
            }
        }
        let bc = band_covariance(6);
        assert_eq!(bc[(0, 1)], 0.5);
        assert_eq!(bc[(0, 3)], 0.25);
        assert_eq!(bc[(0, 4)], 0.0);
        assert_eq!(band_covariance(1)[(0, 0)], 1.0);
        for q in [1, 2, 5, 50, 200] {
            for m in [ar_covariance(q), band_covariance(q)] {
                assert!(m.diagonal().iter().all(|&v| v == 1.0));
                assert!(sym_factor(&m).is_ok());
            }
        }
    }

    #[test]
    fn hub_single_group() {
        let adj = hub_adjacency(4, 1, 0).unwrap();
        let edges: Vec<_> = adj.edges().collect();
        assert_eq!(edges, vec![(0, 1), (0, 2), (0, 3)]);
        assert!(hub_adjacency(3, 1, 0).is_err());
    }

    #[test]
    fn hub_rotation_changes_partition() {
        let a = hub_adjacency(9, 3, 0).unwrap();
        let b = hub_adjacency(9, 3, 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.edge_count(), 6);
        assert_eq!(b.edge_count(), 6);
        // node 1 is a hub under the shifted partition
        assert_eq!(b.degree(1), 2);
        let graphs = hub_precision(12, 3, 3, 0.3, 5).unwrap();
        assert_ne!(graphs[0].1, graphs[1].1);
        assert_ne!(graphs[1].1, graphs[2].1);
    }

    #[test]
    fn ring_without_rewiring_is_circulant() {
        let order: Vec<usize> = (0..6).collect();
        let mut r = rng::stream(0, &[]);
        let adj = small_world_adjacency(&order, 0.0, &mut r).unwrap();
        for i in 0..6 {
            for j in (i + 1)..6 {
                let ring = j - i == 1 || (i == 0 && j == 5);
                assert_eq!(adj.contains(i, j), ring);
            }
            assert_eq!(adj.degree(i), 2);
        }
    }

    #[test]
    fn rewiring_conserves_edges() {
        for seed in 0..50 {
            let mut r = rng::stream(seed, &[]);
            let order: Vec<usize> = (0..20).collect();
            let adj = small_world_adjacency(&order, 0.5, &mut r).unwrap();
            assert_eq!(adj.edge_count(), 20);
        }
    }

    #[test]
    fn generated_precisions_are_positive_definite() {
        for seed in 0..100 {
            for (omega, adj) in hub_precision(15, 2, 3, 0.3, seed)
                .unwrap()
                .into_iter()
                .chain(small_world_precision(15, 2, 0.05, 0.3, seed).unwrap())
            {
                assert!(sym_factor(&omega).is_ok());
                assert_eq!(Adjacency::from_precision(&omega), adj);
            }
        }
    }

    #[test]
    fn identity_matrix_normal_is_standard() {
        let eye = |m: usize| sym_factor(&DenseMatrix::identity(m, m)).unwrap();
        let mut r = rng::stream(1, &[]);
        let mut values = Vec::new();
        for _ in 0..10_000 {
            let z = sample_matrix_normal(&eye(2), &eye(5), &mut r);
            assert_eq!(z.shape(), (2, 5));
            values.extend(z.iter().copied());
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn matrix_normal_covariance_is_kronecker() {
        let ss = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let st = ar_covariance(2);
        let (fs, ft) = (sym_factor(&ss).unwrap(), sym_factor(&st).unwrap());
        let mut r = rng::stream(2, &[]);
        let draws: Vec<DenseMatrix> = (0..10_000).map(|_| sample_matrix_normal(&fs, &ft, &mut r)).collect();
        let emp = vec_covariance(&draws);
        let kron = st.kronecker(&ss);
        assert!((emp - kron).amax() < 0.1);
    }

    #[test]
    fn scenario_layout_and_determinism() {
        let spec = ScenarioSpec {
            k: 3,
            n_k: 10,
            p: 6,
            q: 20,
            seed: 4,
            ..Default::default()
        };
        let (subjects, truth) = generate_scenario(&spec).unwrap();
        assert_eq!(subjects.len(), 30);
        assert_eq!(truth.labels, (0..30).map(|s| s / 10 + 1).collect::<Vec<_>>());
        assert_eq!(subjects[0].subject_id, "s001");
        assert_eq!(truth.temporal.as_ref().unwrap(), &ar_covariance(20));
        let (again, truth2) = generate_scenario(&spec).unwrap();
        assert_eq!(truth, truth2);
        for (a, b) in subjects.iter().zip(&again) {
            assert_eq!(a.data(), b.data());
        }
        let bc = ScenarioSpec { scenario: Scenario::BcSmallWorld, ..spec };
        let (_, t) = generate_scenario(&bc).unwrap();
        assert_eq!(t.temporal.unwrap(), band_covariance(20));
    }

    #[test]
    fn scenario_names() {
        assert_eq!("2".parse::<Scenario>().unwrap(), Scenario::ArSmallWorld);
        assert_eq!("bc-hub".parse::<Scenario>().unwrap(), Scenario::BcHub);
        assert!("5".parse::<Scenario>().is_err());
        for s in Scenario::ALL {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
    }

    #[test]
    fn cluster_metric_examples() {
        let m = cluster_metrics(&[1, 1, 2, 2], &[5, 5, 3, 3]).unwrap();
        assert_eq!((m.rand, m.a_rand, m.jaccard, m.k_hat), (1.0, 1.0, 1.0, 2));
        let m = cluster_metrics(&[1, 1, 2], &[1, 2, 2]).unwrap();
        assert_abs_diff_eq!(m.rand, 1.0 / 3.0, epsilon = 1e-15);
        let m = cluster_metrics(&[1, 1, 1, 2, 2, 2], &[1; 6]).unwrap();
        assert_eq!(m.a_rand, 0.0);
        assert_eq!(m.k_hat, 1);
        let m = cluster_metrics(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!((m.rand, m.a_rand, m.jaccard), (1.0, 1.0, 1.0));
        assert!(cluster_metrics(&[1], &[1]).is_err());
        assert!(cluster_metrics(&[1, 2], &[1]).is_err());
    }

    #[test]
    fn graph_metric_examples() {
        let mut truth = Adjacency::empty(3);
        truth.set(0, 1, true);
        truth.set(0, 2, true);
        let m = graph_metrics(&truth, &truth).unwrap();
        assert_eq!((m.tpr, m.tnr, m.fdr), (Some(1.0), Some(1.0), 0.0));

        let mut est = Adjacency::empty(3);
        est.set(0, 1, true);
        est.set(1, 2, true);
        let m = graph_metrics(&truth, &est).unwrap();
        assert_eq!((m.tpr, m.tnr, m.fdr), (Some(0.5), Some(0.0), 0.5));

        let mut comp = Adjacency::empty(3);
        comp.set(1, 2, true);
        let mut t4 = truth.clone();
        t4.set(1, 2, false);
        let m = graph_metrics(&t4, &comp).unwrap();
        assert_eq!((m.tpr, m.tnr, m.fdr), (Some(0.0), Some(0.0), 1.0));

        let m = graph_metrics(&truth, &Adjacency::empty(3)).unwrap();
        assert_eq!(m.fdr, 0.0);
        assert!(graph_metrics(&truth, &Adjacency::empty(4)).is_err());
    }

    #[test]
    fn averaging_is_per_cluster_first() {
        let g = |tpr: f64| GraphMetrics {
            tpr: Some(tpr),
            tnr: Some(1.0),
            fdr: 0.0,
            tp: 1,
            fp: 0,
            tn: 1,
            fn_: 0,
        };
        let avg = average_graph_metrics(&[g(1.0), g(1.0), g(1.0), g(0.0)], &[1, 1, 1, 2]).unwrap();
        assert_eq!(avg.tpr, Some(0.5));
        assert_eq!(avg.tp, 4);
    }

    #[test]
    fn adjacency_serde_roundtrip() {
        let mut a = Adjacency::empty(4);
        a.set(0, 3, true);
        a.set(1, 2, true);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"p":4,"edges":[[2,3],[1,4]]}"#);
        assert_eq!(serde_json::from_str::<Adjacency>(&s).unwrap(), a);
        assert!(serde_json::from_str::<Adjacency>(r#"{"p":2,"edges":[[1,3]]}"#).is_err());
    }

    fn labels(max: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(1..=max, 2..15)
    }

    proptest! {
        #[test]
        fn metrics_invariant_to_renaming(
            (a, b) in labels(4).prop_flat_map(|a| {
                let n = a.len();
                (Just(a), proptest::collection::vec(1usize..=4, n))
            }),
            shift in 1usize..10,
        ) {
            let m = cluster_metrics(&a, &b).unwrap();
            let renamed: Vec<usize> = b.iter().map(|l| l * 7 + shift).collect();
            prop_assert_eq!(m, cluster_metrics(&a, &renamed).unwrap());
            let swapped = cluster_metrics(&b, &a).unwrap();
            prop_assert_eq!(m.rand, swapped.rand);
            prop_assert!((0.0..=1.0).contains(&m.rand));
            prop_assert!((0.0..=1.0).contains(&m.jaccard));
            prop_assert!(m.a_rand <= 1.0 + 1e-12);
            let same = cluster_metrics(&a, &a).unwrap();
            prop_assert_eq!((same.rand, same.a_rand, same.jaccard), (1.0, 1.0, 1.0));
            if m.rand == 1.0 {
                prop_assert_eq!(m.jaccard, 1.0);
            }
        }

        #[test]
        fn graph_counts_conserve(
            t in proptest::collection::vec(proptest::bool::ANY, 10),
            e in proptest::collection::vec(proptest::bool::ANY, 10),
        ) {
            let truth = Adjacency { p: 5, upper: t };
            let est = Adjacency { p: 5, upper: e };
            let m = graph_metrics(&truth, &est).unwrap();
            prop_assert_eq!(m.tp + m.fp + m.tn + m.fn_, 10);
            prop_assert_eq!(m.tp + m.fn_, truth.edge_count());
            if let Some(tpr) = m.tpr {
                prop_assert_eq!(tpr * (m.tp + m.fn_) as f64, m.tp as f64);
            }
        }
    }
}
