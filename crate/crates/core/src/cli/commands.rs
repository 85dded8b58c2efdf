use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::dataio::{
    load_series, make_windows, parse_rul_file, split_instances, truncated_instances, write_series_csv,
    LabeledInstance, MultivariateSeries, Preprocessor,
};
use crate::error::{Error, Result};
use crate::health::write_hi_curves_csv;
use crate::metrics::MetricsReport;
use crate::pipeline::{evaluate_rows, noise_sweep, population_std, train_model, Estimator, NoiseSweepRow};
use crate::rul::{read_rul_report, write_rul_report, RulRow};
use crate::seq2seq::{Checkpoint, Seq2SeqModel};
use crate::synth::generate_fleet;

use super::config::RunConfig;

/// Writes the resolved config next to a command's outputs.
pub fn echo_config(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.data.out_dir)?;
    let path = cfg.data.out_dir.join(format!("{command}.config.toml"));
    std::fs::write(&path, cfg.to_toml()?)?;
    Ok(path)
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("data.{key} is not set")))
}

fn load(path: &Path) -> Result<Vec<MultivariateSeries>> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found", path.display()),
        )));
    }
    load_series(path)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub final_loss: Option<f64>,
}

/// Fits preprocessing and the encoder-decoder on `data.train`, then writes
/// the checkpoint and `loss_history.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let train = load(require(&cfg.data.train, "train")?)?;
    echo_config(cfg, "train")?;
    let trained = train_model(&train, &cfg.pipeline())?;
    let checkpoint = cfg.checkpoint_path();
    if let Some(dir) = checkpoint.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Checkpoint::new(trained.model, Some(trained.preprocessor)).save(&checkpoint)?;
    let mut w = create(&cfg.data.out_dir.join("loss_history.csv"))?;
    writeln!(w, "epoch,loss")?;
    for (i, l) in trained.history.epoch_losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    Ok(TrainSummary {
        checkpoint,
        final_loss: trained.history.epoch_losses.last().copied(),
    })
}

/// Loads the checkpoint and checks its architecture against `[model]`.
pub fn load_checkpoint(cfg: &RunConfig) -> Result<(Preprocessor, Seq2SeqModel)> {
    let ckpt = Checkpoint::load(&cfg.checkpoint_path())?;
    let pre = ckpt
        .preprocessor
        .ok_or_else(|| Error::Format("checkpoint has no preprocessing state".into()))?;
    let want = cfg.pipeline().model_config(ckpt.model.config.sensors);
    let have = &ckpt.model.config;
    if (have.window, &have.layer_sizes, have.mask_delta, have.output_order)
        != (want.window, &want.layer_sizes, want.mask_delta, want.output_order)
    {
        return Err(Error::Config(format!(
            "checkpoint has w={} layers={:?} mask_delta={}, config has w={} layers={:?} mask_delta={}",
            have.window, have.layer_sizes, have.mask_delta, want.window, want.layer_sizes, want.mask_delta
        )));
    }
    Ok((pre, ckpt.model))
}

/// Rebuilds the estimator from the checkpoint and the training fleet.
pub fn load_estimator(cfg: &RunConfig) -> Result<Estimator> {
    let (pre, model) = load_checkpoint(cfg)?;
    let train = load(require(&cfg.data.train, "train")?)?;
    Estimator::build(pre, model, &train, cfg.health.scorer, cfg.health.beta, cfg.matching())
}

/// Test instances with their true remaining life, or NaN when `data.test_rul`
/// is not set.
pub fn load_test(cfg: &RunConfig) -> Result<Vec<LabeledInstance>> {
    let test = load(require(&cfg.data.test, "test")?)?;
    let ruls: Vec<f64> = match &cfg.data.test_rul {
        Some(p) => parse_rul_file(BufReader::new(File::open(p)?))?
            .into_iter()
            .map(|r| r as f64)
            .collect(),
        None => vec![f64::NAN; test.len()],
    };
    if ruls.len() != test.len() {
        return Err(Error::Format(format!(
            "{} test instances but {} remaining-life values",
            test.len(),
            ruls.len()
        )));
    }
    Ok(test
        .into_iter()
        .zip(ruls)
        .map(|(series, rul)| LabeledInstance { series, rul })
        .collect())
}

/// Estimates RUL for every test instance (and every `cadence`-th step when
/// set) and writes `rul_report.csv`.
pub fn cmd_estimate(cfg: &RunConfig) -> Result<Vec<RulRow>> {
    cfg.validate()?;
    let est = load_estimator(cfg)?;
    let test = load_test(cfg)?;
    echo_config(cfg, "estimate")?;
    let mut rows = est.report(&test, cfg.estimate.cadence, None)?;
    for r in &mut rows {
        if r.actual.is_some_and(f64::is_nan) {
            r.actual = None;
        }
    }
    write_rul_report(create(&cfg.data.out_dir.join("rul_report.csv"))?, &rows)?;
    Ok(rows)
}

/// Scores a RUL report and writes `metrics.csv`.
pub fn cmd_evaluate(cfg: &RunConfig, report: &Path) -> Result<MetricsReport> {
    cfg.validate()?;
    let rows = read_rul_report(BufReader::new(File::open(report)?))?;
    let m = evaluate_rows(&rows, &cfg.metric_config())?;
    echo_config(cfg, "evaluate")?;
    m.write_csv(create(&cfg.data.out_dir.join("metrics.csv"))?)?;
    Ok(m)
}

/// Per-sigma metrics followed by their mean and population std.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSweepOutput {
    pub rows: Vec<NoiseSweepRow>,
    pub mean: (f64, f64),
    pub std: (f64, f64),
}

/// Re-runs estimation on copies of the test set with Gaussian noise of each
/// `sigma` (in standardized units) and writes `noise_sweep.csv`.
pub fn cmd_noise_sweep(cfg: &RunConfig) -> Result<NoiseSweepOutput> {
    cfg.validate()?;
    if cfg.noise.sigmas.is_empty() {
        return Err(Error::Config("noise.sigmas is empty".into()));
    }
    if cfg.data.test_rul.is_none() {
        return Err(Error::Config("noise-sweep needs data.test_rul".into()));
    }
    let est = load_estimator(cfg)?;
    let test = load_test(cfg)?;
    echo_config(cfg, "noise-sweep")?;
    let rows = noise_sweep(&est, &test, &cfg.noise.sigmas, cfg.noise.noise_seed, &cfg.metric_config())?;
    let mse: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    let s: Vec<f64> = rows.iter().map(|r| r.s).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let out = NoiseSweepOutput {
        mean: (mean(&mse), mean(&s)),
        std: (population_std(&mse), population_std(&s)),
        rows,
    };
    let mut w = create(&cfg.data.out_dir.join("noise_sweep.csv"))?;
    writeln!(w, "sigma,mse,s")?;
    for r in &out.rows {
        writeln!(w, "{},{},{}", r.sigma, r.mse, r.s)?;
    }
    writeln!(w, "mean,{},{}", out.mean.0, out.mean.1)?;
    writeln!(w, "std,{},{}", out.std.0, out.std.1)?;
    w.flush()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportKind {
    /// One row per window: `instance,t,z1..zc`.
    Embeddings,
    /// Scaled HI per window end: `instance,t,hi`.
    HiCurves,
    /// Each window's reconstruction as a series in the generic CSV format.
    Reconstructions,
}

/// Writes the requested CSV for every series in `data` (default
/// `data.train`) and returns its path and data row count.
pub fn cmd_export(cfg: &RunConfig, what: ExportKind, data: Option<&Path>) -> Result<(PathBuf, usize)> {
    cfg.validate()?;
    let data_path = match data {
        Some(p) => p.to_path_buf(),
        None => require(&cfg.data.train, "train")?.to_path_buf(),
    };
    let series = load(&data_path)?;
    echo_config(cfg, "export")?;
    let out = &cfg.data.out_dir;
    match what {
        ExportKind::HiCurves => {
            let est = load_estimator(cfg)?;
            let mut curves = Vec::new();
            for s in &series {
                if let Some(c) = est.curve(&est.prepare(s, None)?)? {
                    curves.push(c);
                }
            }
            let path = out.join("hi_curves.csv");
            write_hi_curves_csv(create(&path)?, &curves)?;
            Ok((path, curves.iter().map(|c| c.len()).sum()))
        }
        ExportKind::Embeddings | ExportKind::Reconstructions => {
            let (pre, model) = load_checkpoint(cfg)?;
            let w = model.config.window;
            let mut n = 0;
            if what == ExportKind::Embeddings {
                let path = out.join("embeddings.csv");
                let mut wr = csv::Writer::from_writer(create(&path)?);
                let mut header = vec!["instance".to_string(), "t".to_string()];
                header.extend((1..=model.config.embedding_dim()).map(|i| format!("z{i}")));
                wr.write_record(&header).map_err(crate::dataio::csv_err)?;
                for s in &series {
                    let p = pre.transform(s)?;
                    if p.len() < w {
                        continue;
                    }
                    for win in make_windows(&p, w, 1)? {
                        let mut rec = vec![s.instance_id.clone(), win.end_index.to_string()];
                        rec.extend(model.embed(&win)?.iter().map(|v| v.to_string()));
                        wr.write_record(&rec).map_err(crate::dataio::csv_err)?;
                        n += 1;
                    }
                }
                wr.flush()?;
                Ok((path, n))
            } else {
                let mut recs = Vec::new();
                for s in &series {
                    let p = pre.transform(s)?;
                    if p.len() < w {
                        continue;
                    }
                    for win in make_windows(&p, w, 1)? {
                        let r = model.reconstruct(&win)?;
                        let start = win.end_index - w;
                        let rows: Vec<Vec<f64>> = (0..w).map(|i| r.row(i).to_vec()).collect();
                        let ts = &p.timestamps()[start..win.end_index];
                        recs.push(MultivariateSeries::fully_observed(
                            format!("{}@{}", s.instance_id, win.end_index),
                            ts.iter().map(|t| t - ts[0]).collect(),
                            rows,
                        )?);
                        n += w;
                    }
                }
                let path = out.join("reconstructions.csv");
                write_series_csv(create(&path)?, &recs)?;
                Ok((path, n))
            }
        }
    }
}

/// Generates a fleet into `train.csv`; with `synth.test_fraction > 0` the
/// held-out share is truncated once per instance into `test.csv` and
/// `test_rul.txt`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let s = &cfg.synth;
    s.fleet.validate()?;
    if !(0.0..1.0).contains(&s.test_fraction) {
        return Err(Error::Config("synth.test_fraction must be in [0, 1)".into()));
    }
    let fleet = generate_fleet(&s.fleet)?;
    echo_config(cfg, "synth")?;
    let out = &cfg.data.out_dir;
    let (train, held) = split_instances(&fleet, 1.0 - s.test_fraction, s.fleet.seed)?;
    let train_path = out.join("train.csv");
    write_series_csv(create(&train_path)?, &train)?;
    let mut written = vec![train_path];
    if !held.is_empty() {
        let min_len = cfg.model.w.min(s.fleet.life_min);
        let test = truncated_instances(&held, 1, min_len, s.fleet.seed)?;
        let series: Vec<MultivariateSeries> = test.iter().map(|t| t.series.clone()).collect();
        let test_path = out.join("test.csv");
        write_series_csv(create(&test_path)?, &series)?;
        let rul_path = out.join("test_rul.txt");
        let mut w = create(&rul_path)?;
        for t in &test {
            writeln!(w, "{}", t.rul)?;
        }
        w.flush()?;
        written.extend([test_path, rul_path]);
    }
    Ok(written)
}
