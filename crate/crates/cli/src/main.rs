//! `splatfix`: generate scenes, train and evaluate methods, compare runs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use splatfix::config::{ExperimentConfig, MethodSelection};
use splatfix::experiment::{self, compare, evaluate_cloud, save_scene, summary_csv, SummaryRow};
use splatfix::metrics::{metrics_csv, MetricReport};
use splatfix::scene::load_cloud;

#[derive(Debug, Parser)]
#[command(name = "splatfix", version, about = "Gaussian splatting with continuous prior distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the subcommands that build an experiment config.
#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config file (`key = value` lines); defaults describe the stock benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene and write it to the output directory.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train one method (or `matrix` for the full ablation) and write all artifacts.
    Train {
        #[command(flatten)]
        common: Common,
        /// baseline, interval, continuous, continuous+ape or matrix; overrides `method`.
        #[arg(long)]
        method: Option<String>,
    },
    /// Re-evaluate a trained cloud (default: <out>/final.gsc) against its scene.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cloud: Option<PathBuf>,
    },
    /// Print PSNR/SSIM/TSED deltas of experiment directories against the first.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<splatfix::Error> for Failure {
    fn from(e: splatfix::Error) -> Self {
        match e {
            splatfix::Error::Config(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn load_config(common: &Common, fallback: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    let path = common.config.as_deref().or(fallback.filter(|p| p.exists()));
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())).map_err(Failure::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen { common } => {
            let cfg = load_config(&common, None)?;
            cfg.validate()?;
            let scene = experiment::build_scene(&cfg)?;
            save_scene(&cfg.out, &scene)?;
            let mut scene_cfg = cfg.clone();
            scene_cfg.scene_path = Some(cfg.out.clone());
            std::fs::write(cfg.out.join("config.txt"), scene_cfg.to_text())
                .with_context(|| format!("writing {}", cfg.out.display()))
                .map_err(Failure::Runtime)?;
            println!(
                "scene: {} gaussians, {} train / {} extra / {} test views -> {}",
                scene.ground_truth.len(),
                scene.train_cams.len(),
                scene.extra_cams.len(),
                scene.test_cams.len(),
                cfg.out.display()
            );
        }
        Command::Train { common, method } => {
            let mut cfg = load_config(&common, None)?;
            if let Some(m) = method {
                cfg.method = m.parse::<MethodSelection>()?;
            }
            let rows = experiment::run_experiment(&cfg)?;
            print!("{}", summary_csv(&rows));
        }
        Command::Eval { common, cloud } => {
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let cfg = load_config(&common, Some(&dir.join("config.txt")))?;
            cfg.validate()?;
            let scene = experiment::build_scene(&cfg)?;
            let cloud_path = cloud.unwrap_or_else(|| dir.join("final.gsc"));
            let trained = load_cloud(&cloud_path)?;
            let reports: Vec<MetricReport> = evaluate_cloud(&trained, &scene, &cfg)?.into_iter().map(|(_, r)| r).collect();
            let rows: Vec<(String, MetricReport)> = reports.iter().enumerate().map(|(k, r)| (k.to_string(), *r)).collect();
            let csv = metrics_csv(&rows);
            std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("eval_metrics.csv"), &csv))
                .with_context(|| format!("writing {}", dir.display()))
                .map_err(Failure::Runtime)?;
            let n = reports.len() as f64;
            let tsed: Vec<f64> = reports.iter().filter_map(|r| r.tsed).collect();
            let summary = SummaryRow {
                method: cloud_path.display().to_string(),
                mean_psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
                mean_ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
                mean_tsed: (!tsed.is_empty()).then(|| tsed.iter().sum::<f64>() / tsed.len() as f64),
            };
            print!("{csv}{}", summary_csv(&[summary]));
        }
        Command::Compare { dirs } => {
            print!("{}", compare(&dirs)?.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
