mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};
use scehg_core::pipeline::{self, Combo, PipelineConfig, RunReport, Timing};
use scehg_core::tuning::{self, ConcordanceReport};
use scehg_core::simgen::generate_scenario;
use scehg_core::{Error, Result};

#[derive(Serialize)]
struct TuningFile<'a> {
    chosen: Combo,
    k_hat: usize,
    reports: &'a [ConcordanceReport],
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let detail = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .collect::<Vec<_>>()
                .join(" ");
            let detail = detail.strip_prefix("error: ").unwrap_or(&detail);
            eprintln!("error[usage]: {detail}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {detail}", e.code());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = args::parse_threads(&cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;

    let mut cfg = args::base_config(&cli)?;
    match &cli.command {
        Command::Simulate { scenario } => {
            args::apply_scenario(&mut cfg, scenario);
            if cfg.scenario.is_none() {
                cfg.scenario = Some(Default::default());
            }
            cfg.input = None;
            simulate(&cfg)
        }
        Command::Fit {
            data,
            features,
            solver,
            lambda1,
            lambda2,
            tau,
        } => {
            args::apply_data(&mut cfg, data);
            args::apply_features(&mut cfg, features);
            args::apply_solver(&mut cfg, solver);
            cfg.fixed = Some(args::fixed_combo(&cfg, *lambda1, *lambda2, *tau)?);
            full_run(&cfg)
        }
        Command::Tune {
            data,
            features,
            solver,
            grid,
        } => {
            args::apply_data(&mut cfg, data);
            args::apply_features(&mut cfg, features);
            args::apply_solver(&mut cfg, solver);
            args::apply_grid(&mut cfg, grid);
            cfg.fixed = None;
            tune(&cfg)
        }
        Command::Pipeline {
            data,
            features,
            solver,
            grid,
        } => {
            args::apply_data(&mut cfg, data);
            args::apply_features(&mut cfg, features);
            args::apply_solver(&mut cfg, solver);
            args::apply_grid(&mut cfg, grid);
            full_run(&cfg)
        }
        Command::Replicate {
            scenario,
            features,
            solver,
            grid,
            reps,
        } => {
            args::apply_scenario(&mut cfg, scenario);
            if cfg.scenario.is_none() {
                cfg.scenario = Some(Default::default());
            }
            cfg.input = None;
            cfg.truth = None;
            args::apply_features(&mut cfg, features);
            args::apply_solver(&mut cfg, solver);
            args::apply_grid(&mut cfg, grid);
            replicate(&cfg, *reps)
        }
    }
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path> {
    cfg.out
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("--out is required".into()))
}

fn simulate(cfg: &PipelineConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let spec = cfg.scenario_spec().expect("scenario set by caller");
    spec.validate()?;
    let (subjects, truth) = generate_scenario(&spec)?;
    pipeline::write_subjects(dir, &subjects)?;
    pipeline::write_json(&dir.join("truth.json"), &truth)?;
    println!("wrote {} subjects ({} x {}) to {}", subjects.len(), spec.p, spec.q, dir.display());
    Ok(())
}

fn summary_line(report: &RunReport, timing: &Timing) -> String {
    let mut line = format!(
        "k_hat={} lambda1={} lambda2={} tau={}",
        report.k_hat, report.combo.lambda1, report.combo.lambda2, report.combo.tau
    );
    if let Some(cm) = report.cluster_metrics {
        line.push_str(&format!(" rand={:.4} a_rand={:.4} jaccard={:.4}", cm.rand, cm.a_rand, cm.jaccard));
    }
    if let Some(gm) = report.graph_metrics {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        line.push_str(&format!(" tpr={} tnr={} fdr={:.4}", show(gm.tpr), show(gm.tnr), gm.fdr));
    }
    line.push_str(&format!(" secs={:.2}", timing.total_secs));
    line
}

fn full_run(cfg: &PipelineConfig) -> Result<()> {
    let out = pipeline::run_pipeline(cfg)?;
    if let Some(dir) = &cfg.out {
        pipeline::emit_report(&out.report, &out.timing, dir)?;
    }
    if !out.report.converged {
        eprintln!("warning: solver stopped at its iteration cap");
    }
    println!("{}", summary_line(&out.report, &out.timing));
    Ok(())
}

fn tune(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let data = pipeline::load_dataset(cfg)?;
    let features = pipeline::connectivity_features(&data.subjects, cfg)?;
    let outcome = tuning::select_tuning(&features.x, &cfg.tuning_grid(), &cfg.sprclust)?;
    let file = TuningFile {
        chosen: Combo::of(&outcome.config),
        k_hat: outcome.fit.k_hat,
        reports: &outcome.reports,
    };
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        pipeline::write_json(&dir.join("tuning.json"), &file)?;
    }
    println!("lambda1,lambda2,tau,c_bar,f_bar,k_hat,omitted");
    for r in &outcome.reports {
        let show = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        println!(
            "{},{},{},{},{},{},{}",
            r.lambda1,
            r.lambda2,
            r.tau,
            show(r.c_bar),
            show(r.f_bar),
            r.k_hat,
            r.omitted.map_or(String::new(), |o| o.describe().to_string()),
        );
    }
    println!(
        "chosen: lambda1={} lambda2={} tau={} k_hat={}",
        file.chosen.lambda1, file.chosen.lambda2, file.chosen.tau, file.k_hat
    );
    Ok(())
}

fn replicate(cfg: &PipelineConfig, reps: usize) -> Result<()> {
    cfg.validate()?;
    let (reports, summary) = pipeline::replicate(cfg, reps)?;
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        pipeline::write_json(&dir.join("runs.json"), &reports)?;
        let path = dir.join("metrics.csv");
        std::fs::write(&path, summary.csv()).map_err(|e| Error::Io { path, source: e })?;
    }
    print!("{}", summary.csv());
    Ok(())
}
