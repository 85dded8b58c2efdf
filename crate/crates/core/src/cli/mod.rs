//! Command-line front end. Every flag is shorthand for a config key; see
//! `--help` of each subcommand.

mod commands;
mod config;
mod grid;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_estimate, cmd_evaluate, cmd_export, cmd_noise_sweep, cmd_synth, cmd_train, echo_config, load_checkpoint,
    load_estimator, load_test, ExportKind, NoiseSweepOutput, TrainSummary,
};
pub use config::{
    DataSection, EstimateSection, GridSection, HealthSection, MetricsSection, ModelSection, NoiseSection, Objective,
    PreprocessSection, RulSection, RunConfig, SynthSection, TrainSection,
};
pub use grid::{cmd_grid_search, grid_cells, GridCell, GridOutcome};

use crate::error::{Error, Result};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Parse { .. }
        | Error::Format(_)
        | Error::InsufficientData(_)
        | Error::DegenerateData(_)
        | Error::Io(_) => EXIT_DATA,
        Error::TrainingDiverged { .. } | Error::Numerical(_) => EXIT_NUMERICAL,
        Error::InvalidState(_) => EXIT_OTHER,
    }
}

#[derive(Debug, Parser)]
#[command(name = "rulkit", version, about = "Health index and remaining-useful-life estimation")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Override any config key, e.g. `--set alpha=1.0` or `--set synth.seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,

    /// Output directory [data.out_dir].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Run-to-failure training data [data.train].
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test data [data.test].
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// True remaining life per test instance [data.test_rul].
    #[arg(long)]
    pub test_rul: Option<PathBuf>,
    /// Model checkpoint [data.checkpoint].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// HI scorer: embed, recon, embed-lr1, embed-lr2, recon-lr1, recon-lr2 [health.scorer].
    #[arg(long)]
    pub scorer: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the encoder-decoder; writes the checkpoint and loss_history.csv.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// [train.epochs]
        #[arg(long)]
        epochs: Option<usize>,
        /// [train.seed]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate RUL of test instances; writes rul_report.csv.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        /// Also estimate at every k-th step [estimate.cadence].
        #[arg(long)]
        cadence: Option<usize>,
    },
    /// Score a RUL report; writes metrics.csv.
    Evaluate {
        /// Report written by `estimate`.
        #[arg(long)]
        report: PathBuf,
        /// [metrics.tau1]
        #[arg(long)]
        tau1: Option<f64>,
        /// [metrics.tau2]
        #[arg(long)]
        tau2: Option<f64>,
    },
    /// Metrics under additive Gaussian noise; writes noise_sweep.csv.
    NoiseSweep {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated noise levels [noise.sigmas].
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Exhaustive search over grid.values; writes grid_results.csv and best.config.toml.
    GridSearch {
        #[command(flatten)]
        data: DataArgs,
        /// s or mse [grid.objective].
        #[arg(long)]
        objective: Option<String>,
    },
    /// Export per-window CSVs for external plotting.
    Export {
        #[arg(value_enum)]
        what: ExportKind,
        /// Series to export; defaults to data.train.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        args: DataArgs,
    },
    /// Generate a synthetic run-to-failure fleet.
    Synth {
        /// [synth.seed]
        #[arg(long)]
        seed: Option<u64>,
        /// [synth.n_instances]
        #[arg(long)]
        instances: Option<usize>,
        /// Held-out share written as test.csv and test_rul.txt [synth.test_fraction].
        #[arg(long)]
        test_fraction: Option<f64>,
    },
}

fn path_value(p: &std::path::Path) -> Result<toml::Value> {
    let abs = config::absolute(p)?;
    Ok(toml::Value::String(abs.to_string_lossy().into_owned()))
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        for (key, p) in [
            ("data.train", &self.train),
            ("data.test", &self.test),
            ("data.test_rul", &self.test_rul),
            ("data.checkpoint", &self.checkpoint),
        ] {
            if let Some(p) = p {
                cfg.set(key, path_value(p)?)?;
            }
        }
        if let Some(s) = &self.scorer {
            cfg.set("health.scorer", toml::Value::String(s.clone()))?;
        }
        Ok(())
    }
}

/// Config file, then `--set` overrides, then dedicated flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.resolve_paths(&std::env::current_dir()?);
            c
        }
    };
    let cwd = std::env::current_dir()?;
    for s in &cli.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set_str(k.trim(), v.trim())?;
    }
    cfg.resolve_paths(&cwd);
    if let Some(o) = &cli.out {
        cfg.set("data.out_dir", path_value(o)?)?;
    }
    let int = |v: usize| toml::Value::Integer(v as i64);
    match &cli.command {
        Command::Train { data, epochs, seed } => {
            data.apply(&mut cfg)?;
            if let Some(e) = epochs {
                cfg.set("train.epochs", int(*e))?;
            }
            if let Some(s) = seed {
                cfg.set("train.seed", toml::Value::Integer(*s as i64))?;
            }
        }
        Command::Estimate { data, cadence } => {
            data.apply(&mut cfg)?;
            if let Some(k) = cadence {
                cfg.set("estimate.cadence", int(*k))?;
            }
        }
        Command::Evaluate { tau1, tau2, .. } => {
            if let Some(t) = tau1 {
                cfg.set("metrics.tau1", toml::Value::Float(*t))?;
            }
            if let Some(t) = tau2 {
                cfg.set("metrics.tau2", toml::Value::Float(*t))?;
            }
        }
        Command::NoiseSweep { data, sigmas } => {
            data.apply(&mut cfg)?;
            if let Some(s) = sigmas {
                cfg.noise.sigmas = s.clone();
            }
        }
        Command::GridSearch { data, objective } => {
            data.apply(&mut cfg)?;
            if let Some(o) = objective {
                cfg.set("grid.objective", toml::Value::String(o.to_lowercase()))?;
            }
        }
        Command::Export { args, .. } => args.apply(&mut cfg)?,
        Command::Synth {
            seed,
            instances,
            test_fraction,
        } => {
            if let Some(s) = seed {
                cfg.synth.fleet.seed = *s;
            }
            if let Some(n) = instances {
                cfg.synth.fleet.n_instances = *n;
            }
            if let Some(f) = test_fraction {
                cfg.synth.test_fraction = *f;
            }
        }
    }
    Ok(cfg)
}

/// Runs one command, printing a short summary to stdout.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Train { .. } => {
            let s = cmd_train(&cfg)?;
            match s.final_loss {
                Some(l) => println!("final loss {l:.6}"),
                None => println!("no epochs run"),
            }
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Estimate { .. } => {
            let rows = cmd_estimate(&cfg)?;
            let scored = rows.iter().filter(|r| r.estimate.is_some()).count();
            println!("{} rows ({scored} estimated)", rows.len());
            println!("report {}", cfg.data.out_dir.join("rul_report.csv").display());
        }
        Command::Evaluate { report, .. } => {
            let m = cmd_evaluate(&cfg, report)?;
            print!("{m}");
        }
        Command::NoiseSweep { .. } => {
            let out = cmd_noise_sweep(&cfg)?;
            println!("{:>8}  {:>12}  {:>12}", "sigma", "MSE", "S");
            for r in &out.rows {
                println!("{:>8}  {:>12.4}  {:>12.4}", r.sigma, r.mse, r.s);
            }
            println!("{:>8}  {:>12.4}  {:>12.4}", "mean", out.mean.0, out.mean.1);
            println!("{:>8}  {:>12.4}  {:>12.4}", "std", out.std.0, out.std.1);
        }
        Command::GridSearch { .. } => {
            let g = cmd_grid_search(&cfg)?;
            let b = g.best();
            let params: Vec<String> = b.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("{} cells; best #{} objective {} [{}]", g.cells.len(), g.best + 1, b.objective, params.join(", "));
        }
        Command::Export { what, data, .. } => {
            let (path, n) = cmd_export(&cfg, *what, data.as_deref())?;
            println!("{n} rows -> {}", path.display());
        }
        Command::Synth { .. } => {
            for p in cmd_synth(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
