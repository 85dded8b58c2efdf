use std::collections::HashMap;
use std::io::Write;

use crate::dataio::{load_series, split_instances, truncated_instances, LabeledInstance};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::pipeline::{evaluate_rows, train_model, Estimator, TrainedModel};

use super::commands::{echo_config, load_test};
use super::config::{Objective, RunConfig};

#[derive(Debug, Clone)]
pub struct GridCell {
    pub params: Vec<(String, toml::Value)>,
    pub config: RunConfig,
    pub report: Option<MetricsReport>,
    /// `+inf` when the cell failed.
    pub objective: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridOutcome {
    pub fn best(&self) -> &GridCell {
        &self.cells[self.best]
    }
}

/// Every combination of `grid.values`. Keys are taken in sorted order and
/// the last key varies fastest, so cells come out in lexicographic order of
/// (key, value position).
pub fn grid_cells(cfg: &RunConfig) -> Result<Vec<Vec<(String, toml::Value)>>> {
    let axes: Vec<(&String, &Vec<toml::Value>)> = cfg.grid.values.iter().collect();
    if let Some((k, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::Config(format!("grid.values.{k} is empty")));
    }
    let mut cells = vec![Vec::new()];
    for (key, values) in axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix: Vec<(String, toml::Value)>| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

fn model_key(cfg: &RunConfig) -> Result<String> {
    let parts = (&cfg.preprocess, &cfg.model, &cfg.train);
    serde_json::to_string(&parts).map_err(|e| Error::Config(e.to_string()))
}

/// Exhaustive search over `grid.values`.
///
/// Validation uses `data.test` with `data.test_rul` when both are set.
/// Otherwise `data.train` is split by instance (`grid.train_fraction`,
/// seeded by `grid.split_seed`) and each held-out instance is truncated
/// `grid.truncations` times. The lowest objective wins; among equal
/// objectives the earliest cell in enumeration order wins. A cell whose
/// training diverges or that yields no scorable rows is recorded with an
/// infinite objective.
///
/// Writes `grid_results.csv` (one row per cell) and `best.config.toml`.
pub fn cmd_grid_search(cfg: &RunConfig) -> Result<GridOutcome> {
    cfg.validate()?;
    let cells = grid_cells(cfg)?;
    let configs = cells
        .iter()
        .map(|params| {
            let mut c = cfg.clone();
            for (k, v) in params {
                c.set(k, v.clone())?;
            }
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;

    let all = load_series(
        cfg.data
            .train
            .as_deref()
            .ok_or_else(|| Error::Config("data.train is not set".into()))?,
    )?;
    let (train, validation): (_, Vec<LabeledInstance>) = match (&cfg.data.test, &cfg.data.test_rul) {
        (Some(_), Some(_)) => (all, load_test(cfg)?),
        _ => {
            let (train, held) = split_instances(&all, cfg.grid.train_fraction, cfg.grid.split_seed)?;
            let min_len = cfg
                .grid
                .min_len
                .unwrap_or_else(|| configs.iter().map(|c| c.model.w).max().unwrap_or(cfg.model.w));
            let val = truncated_instances(&held, cfg.grid.truncations, min_len, cfg.grid.split_seed)?;
            (train, val)
        }
    };
    if validation.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    echo_config(cfg, "grid-search")?;

    let mut models: HashMap<String, std::result::Result<TrainedModel, String>> = HashMap::new();
    let mut out = Vec::with_capacity(cells.len());
    for (params, c) in cells.into_iter().zip(configs) {
        let key = model_key(&c)?;
        if !models.contains_key(&key) {
            let trained = match train_model(&train, &c.pipeline()) {
                Ok(t) => Ok(t),
                Err(e @ (Error::TrainingDiverged { .. } | Error::Numerical(_))) => Err(e.to_string()),
                Err(e) => return Err(e),
            };
            models.insert(key.clone(), trained);
        }
        let result = match &models[&key] {
            Err(msg) => Err(msg.clone()),
            Ok(t) => match score(t, &train, &validation, &c) {
                Ok(r) => Ok(r),
                Err(e @ (Error::InsufficientData(_) | Error::Numerical(_) | Error::DegenerateData(_))) => {
                    Err(e.to_string())
                }
                Err(e) => return Err(e),
            },
        };
        let (report, error) = match result {
            Ok(r) => (Some(r), None),
            Err(m) => (None, Some(m)),
        };
        let objective = report.as_ref().map_or(f64::INFINITY, |r| match c.grid.objective {
            Objective::S => r.s,
            Objective::Mse => r.mse,
        });
        out.push(GridCell {
            params,
            config: c,
            report,
            objective,
            error,
        });
    }

    let mut best = 0;
    for (i, c) in out.iter().enumerate() {
        if c.objective < out[best].objective {
            best = i;
        }
    }
    if !out[best].objective.is_finite() {
        return Err(Error::Numerical("every grid cell failed".into()));
    }
    let outcome = GridOutcome { cells: out, best };
    write_results(cfg, &outcome)?;
    std::fs::write(cfg.data.out_dir.join("best.config.toml"), outcome.best().config.to_toml()?)?;
    Ok(outcome)
}

fn score(
    trained: &TrainedModel,
    train: &[crate::dataio::MultivariateSeries],
    validation: &[LabeledInstance],
    cfg: &RunConfig,
) -> Result<MetricsReport> {
    let est = Estimator::from_trained(trained, train, cfg.health.scorer, &cfg.pipeline())?;
    let rows = est.report(validation, None, None)?;
    evaluate_rows(&rows, &cfg.metric_config())
}

fn write_results(cfg: &RunConfig, g: &GridOutcome) -> Result<()> {
    let file = std::fs::File::create(cfg.data.out_dir.join("grid_results.csv"))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let keys: Vec<&String> = cfg.grid.values.keys().collect();
    let mut header: Vec<String> = vec!["cell".into()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.extend(["objective", "S", "MSE", "MAE", "A", "N", "best", "error"].map(String::from));
    w.write_record(&header).map_err(crate::dataio::csv_err)?;
    for (i, c) in g.cells.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(c.params.iter().map(|(_, v)| match v {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        }));
        let r = c.report.as_ref();
        rec.push(c.objective.to_string());
        rec.extend([
            r.map(|r| r.s.to_string()).unwrap_or_default(),
            r.map(|r| r.mse.to_string()).unwrap_or_default(),
            r.map(|r| r.mae.to_string()).unwrap_or_default(),
            r.map(|r| r.accuracy.to_string()).unwrap_or_default(),
            r.map(|r| r.n.to_string()).unwrap_or_default(),
        ]);
        rec.push((i == g.best).to_string());
        rec.push(c.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(crate::dataio::csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}
