//! End-to-end runs: subject series in, clusters and per-cluster edge
//! absence proportions out.
//!
//! Each subject's series is reduced to the strict upper triangle of a
//! cross-validated graphical lasso precision. The stacked vectors are
//! clustered with the fusion-penalized solver, whose centroids double as
//! sparse connectivity estimates: a zero centroid coordinate means the edge
//! is estimated absent for that subject.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{KernelConfig, SubjectSeries};
use crate::error::{Error, Result};
use crate::glasso::{self, dim_from_upper_len, upper_len, upper_pairs};
use crate::rng;
use crate::simgen::{
    average_graph_metrics, cluster_metrics, generate_scenario, graph_metrics, Adjacency, ClusterMetrics,
    GraphMetrics, GroundTruth, ScenarioSpec,
};
use crate::solvers::{DenseMatrix, SolverOptions};
use crate::sprclust::{self, SprclustConfig, SprclustFit};
use crate::tuning::{self, ConcordanceReport, TuningGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combo {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
}

impl Combo {
    pub fn of(cfg: &SprclustConfig) -> Self {
        Combo {
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            tau: cfg.tau,
        }
    }

    pub fn apply(self, template: &SprclustConfig) -> SprclustConfig {
        SprclustConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            tau: self.tau,
            ..*template
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory of subject CSV files.
    pub input: Option<PathBuf>,
    /// Optional `truth.json` for data read from `input`.
    pub truth: Option<PathBuf>,
    /// Synthetic scenario used instead of `input`. Its seed is replaced by
    /// `seed`.
    pub scenario: Option<ScenarioSpec>,
    pub kernel: KernelConfig,
    pub glasso_lambdas: Vec<f64>,
    pub glasso_folds: usize,
    pub glasso_opts: SolverOptions,
    /// Subsampling grid; its seed is derived from `seed`.
    pub tuning: TuningGrid,
    /// Solver settings; the penalties are overridden by tuning or `fixed`.
    pub sprclust: SprclustConfig,
    /// Skip tuning and fit these penalties.
    pub fixed: Option<Combo>,
    /// Experimental: merge the closest clusters until at most this many
    /// remain.
    pub k_max: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            truth: None,
            scenario: None,
            kernel: KernelConfig::default(),
            glasso_lambdas: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.4],
            glasso_folds: 5,
            glasso_opts: glasso::default_options(),
            tuning: TuningGrid::default(),
            sprclust: SprclustConfig::default(),
            fixed: None,
            k_max: None,
            out: None,
            seed: 0,
        }
    }
}

const SCENARIO_STREAM: u64 = 10;
const TUNING_STREAM: u64 = 11;
const REPLICATE_STREAM: u64 = 12;

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.input, &self.scenario) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput("give either an input directory or a scenario, not both".into()))
            }
            (None, None) => return Err(Error::InvalidInput("an input directory or a scenario is required".into())),
            _ => {}
        }
        if self.truth.is_some() && self.input.is_none() {
            return Err(Error::InvalidInput("a truth file only applies to input directories".into()));
        }
        if self.k_max == Some(0) {
            return Err(Error::InvalidInput("k_max must be at least 1".into()));
        }
        if let Some(spec) = &self.scenario {
            spec.validate()?;
        }
        self.glasso_opts.validate()?;
        self.sprclust.validate()?;
        if self.fixed.is_none() {
            self.tuning.validate()?;
        }
        Ok(())
    }

    /// Scenario with the run seed applied.
    pub fn scenario_spec(&self) -> Option<ScenarioSpec> {
        self.scenario.clone().map(|s| ScenarioSpec {
            seed: rng::derive_seed(self.seed, &[SCENARIO_STREAM]),
            ..s
        })
    }

    pub fn tuning_grid(&self) -> TuningGrid {
        TuningGrid {
            seed: rng::derive_seed(self.seed, &[TUNING_STREAM]),
            ..self.tuning.clone()
        }
    }
}

/// Reads one headerless CSV per subject (`p` rows, `q` columns) from `dir`.
/// The file stem is the subject id; subjects come back sorted by id.
pub fn load_subjects(dir: &Path) -> Result<Vec<SubjectSeries>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_csv = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv && path.is_file() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no subject CSV files in {}", dir.display())));
    }
    files.sort_by_key(|p| stem(p));

    let mut subjects: Vec<SubjectSeries> = Vec::with_capacity(files.len());
    let mut first: Option<(PathBuf, (usize, usize))> = None;
    for path in files {
        let data = read_matrix(&path)?;
        match &first {
            None => first = Some((path.clone(), data.shape())),
            Some((other, shape)) if *shape != data.shape() => {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {}x{} but {} is {}x{}",
                    path.display(),
                    data.nrows(),
                    data.ncols(),
                    other.display(),
                    shape.0,
                    shape.1
                )))
            }
            Some(_) => {}
        }
        let id = stem(&path);
        subjects.push(SubjectSeries::new(id.clone(), data).map_err(|e| Error::Subject {
            subject: id,
            source: Box::new(e),
        })?);
    }
    Ok(subjects)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let width = *cols.get_or_insert(record.len());
        if record.len() != width {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                row: r + 1,
                column: record.len().min(width) + 1,
                message: format!("row has {} columns, expected {width}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                row: r + 1,
                column: c + 1,
                message: format!("'{field}' is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::EmptyInput(format!("{} has no rows", path.display())))?;
    Ok(DenseMatrix::from_row_slice(rows, cols, &values))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            file: path.to_path_buf(),
            row: 0,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Writes each subject as `<dir>/<subject_id>.csv` using shortest
/// round-trip number formatting.
pub fn write_subjects(dir: &Path, subjects: &[SubjectSeries]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in subjects {
        let path = dir.join(format!("{}.csv", s.subject_id));
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| csv_error(&path, e))?;
        for row in s.data().row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Subjects and, when known, their true clusters and graphs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub subjects: Vec<SubjectSeries>,
    pub truth: Option<GroundTruth>,
}

/// Loads or generates the data described by `cfg`. A truth file read
/// alongside an input directory is reordered to match the subjects.
pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    if let Some(spec) = cfg.scenario_spec() {
        let (subjects, truth) = generate_scenario(&spec)?;
        return Ok(Dataset {
            subjects,
            truth: Some(truth),
        });
    }
    let dir = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("an input directory or a scenario is required".into()))?;
    let subjects = load_subjects(dir)?;
    let truth = match &cfg.truth {
        Some(path) => Some(align_truth(read_json(path)?, &subjects)?),
        None => None,
    };
    Ok(Dataset { subjects, truth })
}

fn align_truth(truth: GroundTruth, subjects: &[SubjectSeries]) -> Result<GroundTruth> {
    if truth.labels.len() != truth.subject_ids.len() {
        return Err(Error::DimensionMismatch("truth file has unequal ids and labels".into()));
    }
    let mut labels = Vec::with_capacity(subjects.len());
    for s in subjects {
        let pos = truth
            .subject_ids
            .iter()
            .position(|id| *id == s.subject_id)
            .ok_or_else(|| Error::InvalidInput(format!("subject {} missing from truth file", s.subject_id)))?;
        let label = truth.labels[pos];
        if label == 0 || label > truth.adjacency.len() {
            return Err(Error::InvalidInput(format!("subject {} has no true graph", s.subject_id)));
        }
        labels.push(label);
    }
    let p = subjects[0].p();
    if truth.adjacency.iter().any(|a| a.p() != p) {
        return Err(Error::DimensionMismatch(format!("true graphs must have {p} nodes")));
    }
    Ok(GroundTruth {
        subject_ids: subjects.iter().map(|s| s.subject_id.clone()).collect(),
        labels,
        ..truth
    })
}

/// Stacked connectivity vectors, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub subject_ids: Vec<String>,
    pub p: usize,
    pub x: DenseMatrix,
    /// Cross-validated glasso penalty per subject.
    pub glasso_lambdas: Vec<f64>,
}

pub fn connectivity_features(subjects: &[SubjectSeries], cfg: &PipelineConfig) -> Result<FeatureSet> {
    let first = subjects
        .first()
        .ok_or_else(|| Error::EmptyInput("no subjects".into()))?;
    let p = first.p();
    if let Some(s) = subjects.iter().find(|s| s.p() != p) {
        return Err(Error::DimensionMismatch(format!(
            "subject {} has {} locations, expected {p}",
            s.subject_id,
            s.p()
        )));
    }
    let fitted: Vec<(glasso::ConnectivityFeatures, f64)> = subjects
        .par_iter()
        .map(|s| {
            glasso::glasso_cv(s, &cfg.kernel, &cfg.glasso_lambdas, cfg.glasso_folds, &cfg.glasso_opts)
                .map(|cv| (glasso::vectorize_upper(s.subject_id.clone(), &cv.estimate), cv.lambda))
                .map_err(|e| Error::Subject {
                    subject: s.subject_id.clone(),
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let d = upper_len(p);
    let mut x = DenseMatrix::zeros(subjects.len(), d);
    for (row, (f, _)) in fitted.iter().enumerate() {
        for (k, v) in f.values.iter().enumerate() {
            x[(row, k)] = *v;
        }
    }
    Ok(FeatureSet {
        subject_ids: fitted.iter().map(|(f, _)| f.subject_id.clone()).collect(),
        p,
        x,
        glasso_lambdas: fitted.iter().map(|(_, l)| *l).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub cluster: usize,
    /// 1-based node indices, `i < j`.
    pub i: usize,
    pub j: usize,
    pub prop_absent: f64,
    pub absent: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeProportionTable {
    pub rows: Vec<EdgeRow>,
}

/// An edge is called absent from a cluster when at least half its members
/// have a zero estimate.
pub fn is_absent(prop_absent: f64) -> bool {
    prop_absent >= 0.5
}

/// For each cluster and node pair, the fraction of members whose centroid
/// coordinate for that pair is exactly zero. Rows are ordered by cluster,
/// then `i`, then `j`.
pub fn edge_proportion(centroids: &DenseMatrix, assignment: &[usize], p: usize) -> Result<EdgeProportionTable> {
    if centroids.ncols() != upper_len(p) || centroids.nrows() != assignment.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} centroids for {} subjects and {p} nodes",
            centroids.nrows(),
            centroids.ncols(),
            assignment.len()
        )));
    }
    let pairs: Vec<(usize, usize)> = upper_pairs(p).collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&c| pairs[c]);
    let k = assignment.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for cluster in 1..=k {
        let members: Vec<usize> = (0..assignment.len()).filter(|&g| assignment[g] == cluster).collect();
        if members.is_empty() {
            continue;
        }
        for &c in &order {
            let zeros = members.iter().filter(|&&g| centroids[(g, c)] == 0.0).count();
            let prop = zeros as f64 / members.len() as f64;
            rows.push(EdgeRow {
                cluster,
                i: pairs[c].0 + 1,
                j: pairs[c].1 + 1,
                prop_absent: prop,
                absent: is_absent(prop),
            });
        }
    }
    Ok(EdgeProportionTable { rows })
}

/// Merges the two clusters with the closest mean centroids until at most
/// `k_max` remain. Labels are renumbered by smallest member.
pub fn merge_clusters(assignment: &[usize], centroids: &DenseMatrix, k_max: usize) -> Vec<usize> {
    let mut labels = assignment.to_vec();
    loop {
        let k = labels.iter().copied().max().unwrap_or(0);
        if k <= k_max.max(1) {
            return labels;
        }
        let means: Vec<Vec<f64>> = (1..=k)
            .map(|c| {
                let members: Vec<usize> = (0..labels.len()).filter(|&g| labels[g] == c).collect();
                (0..centroids.ncols())
                    .map(|j| members.iter().map(|&g| centroids[(g, j)]).sum::<f64>() / members.len() as f64)
                    .collect()
            })
            .collect();
        let mut best = (f64::INFINITY, 0, 1);
        for a in 0..k {
            for b in (a + 1)..k {
                let d: f64 = means[a].iter().zip(&means[b]).map(|(u, v)| (u - v) * (u - v)).sum();
                if d < best.0 {
                    best = (d, a + 1, b + 1);
                }
            }
        }
        for l in labels.iter_mut() {
            if *l == best.2 {
                *l = best.1;
            }
        }
        labels = renumber(&labels);
    }
}

fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(old, _)| *old == l) {
            Some(&(_, new)) => new,
            None => {
                map.push((l, map.len() + 1));
                map.len()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub subject_ids: Vec<String>,
    pub p: usize,
    pub glasso_lambdas: Vec<f64>,
    pub combo: Combo,
    /// Per-combination criteria; empty when the penalties were fixed.
    pub tuning: Vec<ConcordanceReport>,
    pub assignment: Vec<usize>,
    pub k_hat: usize,
    /// Cluster count before merging, when `k_max` merged clusters.
    pub merged_from: Option<usize>,
    pub cluster_metrics: Option<ClusterMetrics>,
    pub graph_metrics: Option<GraphMetrics>,
    pub edges: EdgeProportionTable,
    pub objective_trace: Vec<f64>,
    pub kkt_residual: f64,
    pub dc_iters: usize,
    pub admm_iters_total: usize,
    pub converged: bool,
}

/// Wall-clock seconds per stage. Kept out of [`RunReport`] so reports are
/// reproducible byte for byte.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub features_secs: f64,
    pub clustering_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub timing: Timing,
    pub fit: SprclustFit,
}

/// Clusters precomputed features, either with fixed penalties or by tuning.
pub fn cluster_features(
    features: &FeatureSet,
    cfg: &PipelineConfig,
) -> Result<(Combo, Vec<ConcordanceReport>, SprclustFit)> {
    match cfg.fixed {
        Some(combo) => {
            let fit = sprclust::fit(&features.x, &combo.apply(&cfg.sprclust))?;
            Ok((combo, Vec::new(), fit))
        }
        None => {
            let out = tuning::select_tuning(&features.x, &cfg.tuning_grid(), &cfg.sprclust)?;
            Ok((Combo::of(&out.config), out.reports, out.fit))
        }
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let data = load_dataset(cfg)?;
    let features = connectivity_features(&data.subjects, cfg)?;
    let features_secs = start.elapsed().as_secs_f64();

    let (combo, tuning, fit) = cluster_features(&features, cfg)?;
    let clustering_secs = start.elapsed().as_secs_f64() - features_secs;

    let (assignment, merged_from) = match cfg.k_max {
        Some(k) if fit.k_hat > k => (merge_clusters(&fit.assignment, &fit.centroids, k), Some(fit.k_hat)),
        _ => (fit.assignment.clone(), None),
    };
    let k_hat = assignment.iter().copied().max().unwrap_or(0);
    let edges = edge_proportion(&fit.centroids, &assignment, features.p)?;

    let (cm, gm) = match &data.truth {
        Some(truth) => {
            let cm = cluster_metrics(&truth.labels, &assignment)?;
            let per_subject: Vec<GraphMetrics> = (0..assignment.len())
                .map(|g| {
                    let row: Vec<f64> = fit.centroids.row(g).iter().copied().collect();
                    graph_metrics(truth.subject_graph(g), &Adjacency::from_upper(features.p, &row)?)
                })
                .collect::<Result<_>>()?;
            (Some(cm), Some(average_graph_metrics(&per_subject, &truth.labels)?))
        }
        None => (None, None),
    };

    let report = RunReport {
        subject_ids: features.subject_ids.clone(),
        p: features.p,
        glasso_lambdas: features.glasso_lambdas.clone(),
        combo,
        tuning,
        assignment,
        k_hat,
        merged_from,
        cluster_metrics: cm,
        graph_metrics: gm,
        edges,
        objective_trace: fit.objective_trace.clone(),
        kkt_residual: fit.kkt_residual,
        dc_iters: fit.dc_iters,
        admm_iters_total: fit.admm_iters_total,
        converged: fit.converged,
    };
    Ok(RunOutput {
        report,
        timing: Timing {
            features_secs,
            clustering_secs,
            total_secs: start.elapsed().as_secs_f64(),
        },
        fit,
    })
}

pub const METRICS_HEADER: &str = "k_hat,rand,a_rand,jaccard,tpr,tnr,fdr";
pub const EDGES_HEADER: &str = "cluster,i,j,prop_absent,absent";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(report: &RunReport) -> String {
    let cm = report.cluster_metrics;
    let gm = report.graph_metrics;
    format!(
        "{METRICS_HEADER}\n{},{},{},{},{},{},{}\n",
        report.k_hat,
        cell(cm.map(|m| m.rand)),
        cell(cm.map(|m| m.a_rand)),
        cell(cm.map(|m| m.jaccard)),
        cell(gm.and_then(|m| m.tpr)),
        cell(gm.and_then(|m| m.tnr)),
        cell(gm.map(|m| m.fdr)),
    )
}

pub fn edges_csv(table: &EdgeProportionTable) -> String {
    let mut out = format!("{EDGES_HEADER}\n");
    for r in &table.rows {
        out.push_str(&format!("{},{},{},{:.6},{}\n", r.cluster, r.i, r.j, r.prop_absent, r.absent));
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `metrics.csv`, `edges.csv` and `timing.json` into
/// `dir`.
pub fn emit_report(report: &RunReport, timing: &Timing, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    write_text(&dir.join("metrics.csv"), &metrics_csv(report))?;
    write_text(&dir.join("edges.csv"), &edges_csv(&report.edges))?;
    write_json(&dir.join("timing.json"), timing)
}

/// Means (and standard deviations for the graph scores) over replicated
/// scenario runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub runs: usize,
    pub k_hat_mean: f64,
    /// Runs that found more clusters than the truth.
    pub over: usize,
    /// Runs that found fewer clusters than the truth.
    pub under: usize,
    pub rand: f64,
    pub a_rand: f64,
    pub jaccard: f64,
    pub tpr: Option<f64>,
    pub tpr_sd: Option<f64>,
    pub tnr: Option<f64>,
    pub tnr_sd: Option<f64>,
    pub fdr: f64,
    pub fdr_sd: f64,
}

pub const REPLICATE_HEADER: &str = "runs,k_hat_mean,over,under,rand,a_rand,jaccard,tpr,tpr_sd,tnr,tnr_sd,fdr,fdr_sd";

impl ReplicateSummary {
    pub fn csv(&self) -> String {
        format!(
            "{REPLICATE_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.runs,
            self.k_hat_mean,
            self.over,
            self.under,
            self.rand,
            self.a_rand,
            self.jaccard,
            cell(self.tpr),
            cell(self.tpr_sd),
            cell(self.tnr),
            cell(self.tnr_sd),
            self.fdr,
            self.fdr_sd,
        )
    }
}

fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

pub fn summarize(reports: &[RunReport], k_true: usize) -> Result<ReplicateSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("no runs to summarize".into()));
    }
    let cms: Vec<ClusterMetrics> = reports
        .iter()
        .map(|r| {
            r.cluster_metrics
                .ok_or_else(|| Error::InvalidInput("replicated runs need ground truth".into()))
        })
        .collect::<Result<_>>()?;
    let gms: Vec<GraphMetrics> = reports.iter().filter_map(|r| r.graph_metrics).collect();
    let pick = |f: &dyn Fn(&GraphMetrics) -> Option<f64>| -> Vec<f64> { gms.iter().filter_map(f).collect() };
    let mean = |v: Vec<f64>| mean_sd(&v).map_or(0.0, |m| m.0);
    let tpr = mean_sd(&pick(&|g| g.tpr));
    let tnr = mean_sd(&pick(&|g| g.tnr));
    let fdr = mean_sd(&pick(&|g| Some(g.fdr))).unwrap_or((0.0, 0.0));
    Ok(ReplicateSummary {
        runs: reports.len(),
        k_hat_mean: mean(reports.iter().map(|r| r.k_hat as f64).collect()),
        over: reports.iter().filter(|r| r.k_hat > k_true).count(),
        under: reports.iter().filter(|r| r.k_hat < k_true).count(),
        rand: mean(cms.iter().map(|m| m.rand).collect()),
        a_rand: mean(cms.iter().map(|m| m.a_rand).collect()),
        jaccard: mean(cms.iter().map(|m| m.jaccard).collect()),
        tpr: tpr.map(|m| m.0),
        tpr_sd: tpr.map(|m| m.1),
        tnr: tnr.map(|m| m.0),
        tnr_sd: tnr.map(|m| m.1),
        fdr: fdr.0,
        fdr_sd: fdr.1,
    })
}

/// Runs the scenario pipeline `reps` times with seeds derived from
/// `cfg.seed`.
pub fn replicate(cfg: &PipelineConfig, reps: usize) -> Result<(Vec<RunReport>, ReplicateSummary)> {
    let spec = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("replication needs a scenario".into()))?;
    if reps == 0 {
        return Err(Error::InvalidInput("at least one repetition is required".into()));
    }
    let reports: Vec<RunReport> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let run = PipelineConfig {
                seed: rng::derive_seed(cfg.seed, &[REPLICATE_STREAM, r as u64]),
                ..cfg.clone()
            };
            run_pipeline(&run).map(|o| o.report)
        })
        .collect::<Result<_>>()?;
    let summary = summarize(&reports, spec.k)?;
    Ok((reports, summary))
}

/// Node count implied by a feature width, for callers holding only vectors.
pub fn nodes_for_width(d: usize) -> Result<usize> {
    dim_from_upper_len(d).ok_or_else(|| Error::DimensionMismatch(format!("{d} is not a triangular number")))
}
