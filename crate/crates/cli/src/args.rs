use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use scehg_core::pipeline::{Combo, PipelineConfig};
use scehg_core::{Error, Result, Scenario, ScenarioSpec};

#[derive(Debug, Parser)]
#[command(name = "scehg", version, about = "Cluster subjects by their sparse connectivity graphs")]
pub struct Cli {
    /// Run seed; drives scenario generation and subsampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON file with pipeline settings. Flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads: a count or "auto".
    #[arg(long, global = true, default_value = "auto")]
    pub threads: String,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (subject CSVs plus truth.json).
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Fit fixed penalties to a dataset and write a report.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Score a penalty grid by subsampling concordance.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Features, tuning, clustering and edge analysis in one run.
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Repeat the scenario pipeline and summarize the scores.
    Replicate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// ar_hub, ar_small_world, bc_hub, bc_small_world, or 1 to 4.
    #[arg(long)]
    pub scenario: Option<Scenario>,
    /// Number of clusters.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Subjects per cluster.
    #[arg(long)]
    pub per_cluster: Option<usize>,
    /// Spatial locations.
    #[arg(long)]
    pub p: Option<usize>,
    /// Time points.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub hub_groups: Option<usize>,
    #[arg(long)]
    pub edge_weight: Option<f64>,
    #[arg(long)]
    pub rewire_prob: Option<f64>,
}

impl ScenarioArgs {
    fn given(&self) -> bool {
        self.scenario.is_some()
            || self.clusters.is_some()
            || self.per_cluster.is_some()
            || self.p.is_some()
            || self.q.is_some()
            || self.hub_groups.is_some()
            || self.edge_weight.is_some()
            || self.rewire_prob.is_some()
    }

    fn apply(&self, spec: &mut ScenarioSpec) {
        set(&mut spec.scenario, self.scenario);
        set(&mut spec.k, self.clusters);
        set(&mut spec.n_k, self.per_cluster);
        set(&mut spec.p, self.p);
        set(&mut spec.q, self.q);
        set(&mut spec.hub_groups, self.hub_groups);
        set(&mut spec.edge_weight, self.edge_weight);
        set(&mut spec.rewire_prob, self.rewire_prob);
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory of subject CSV files.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// truth.json for the input directory.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Experimental: merge the closest clusters down to this count.
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Kernel bandwidth in time points.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Glasso penalty grid.
    #[arg(long, value_delimiter = ',')]
    pub glasso_lambdas: Option<Vec<f64>>,
    /// Cross-validation folds over time.
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub admm_tol: Option<f64>,
    #[arg(long)]
    pub admm_max_iters: Option<usize>,
    #[arg(long)]
    pub dc_max_iters: Option<usize>,
    /// Scale features to unit variance before clustering.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long = "lambda1", value_delimiter = ',')]
    pub lambda1: Option<Vec<f64>>,
    #[arg(long = "lambda2", value_delimiter = ',')]
    pub lambda2: Option<Vec<f64>>,
    #[arg(long = "tau", value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// Subsample fraction.
    #[arg(long)]
    pub subsample_fraction: Option<f64>,
    /// Fraction of combinations kept by sample concordance.
    #[arg(long)]
    pub top_fraction: Option<f64>,
    /// Fraction of lowest sample scores trimmed.
    #[arg(long)]
    pub trim: Option<f64>,
    /// Number of subsamples.
    #[arg(long)]
    pub subsamples: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Parses `n` or `auto` (0, meaning one worker per core).
pub fn parse_threads(s: &str) -> Result<usize> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(0);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::InvalidInput(format!("--threads expects a positive count or 'auto', got '{s}'"))),
    }
}

pub fn base_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => scehg_core::pipeline::read_json(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

pub fn apply_scenario(cfg: &mut PipelineConfig, args: &ScenarioArgs) {
    if args.given() || cfg.scenario.is_some() {
        let spec = cfg.scenario.get_or_insert_with(ScenarioSpec::default);
        args.apply(spec);
    }
}

pub fn apply_data(cfg: &mut PipelineConfig, args: &DataArgs) {
    if let Some(input) = &args.input {
        cfg.input = Some(input.clone());
        if !args.scenario.given() {
            cfg.scenario = None;
        }
    }
    if let Some(truth) = &args.truth {
        cfg.truth = Some(truth.clone());
    }
    apply_scenario(cfg, &args.scenario);
    if args.k_max.is_some() {
        cfg.k_max = args.k_max;
    }
}

pub fn apply_features(cfg: &mut PipelineConfig, args: &FeatureArgs) {
    if args.bandwidth.is_some() {
        cfg.kernel.bandwidth = args.bandwidth;
    }
    set(&mut cfg.glasso_lambdas, args.glasso_lambdas.clone());
    set(&mut cfg.glasso_folds, args.folds);
}

pub fn apply_solver(cfg: &mut PipelineConfig, args: &SolverArgs) {
    set(&mut cfg.sprclust.rho, args.rho);
    set(&mut cfg.sprclust.admm_opts.tol, args.admm_tol);
    set(&mut cfg.sprclust.admm_opts.max_iters, args.admm_max_iters);
    set(&mut cfg.sprclust.dc_max_iters, args.dc_max_iters);
    if args.standardize {
        cfg.sprclust.standardize = true;
    }
}

pub fn apply_grid(cfg: &mut PipelineConfig, args: &GridArgs) {
    let grid = &mut cfg.tuning;
    set(&mut grid.lambda1, args.lambda1.clone());
    set(&mut grid.lambda2, args.lambda2.clone());
    set(&mut grid.tau, args.tau.clone());
    set(&mut grid.r, args.subsample_fraction);
    set(&mut grid.s, args.top_fraction);
    set(&mut grid.alpha, args.trim);
    set(&mut grid.b, args.subsamples);
}

/// Fixed penalties from flags, falling back to the config's `fixed` entry
/// field by field.
pub fn fixed_combo(cfg: &PipelineConfig, lambda1: Option<f64>, lambda2: Option<f64>, tau: Option<f64>) -> Result<Combo> {
    let from_cfg = cfg.fixed;
    let pick = |flag: Option<f64>, field: Option<f64>, name: &str| {
        flag.or(field)
            .ok_or_else(|| Error::InvalidInput(format!("fit needs --{name} (or `fixed` in the config)")))
    };
    Ok(Combo {
        lambda1: pick(lambda1, from_cfg.map(|c| c.lambda1), "lambda1")?,
        lambda2: pick(lambda2, from_cfg.map(|c| c.lambda2), "lambda2")?,
        tau: pick(tau, from_cfg.map(|c| c.tau), "tau")?,
    })
}
