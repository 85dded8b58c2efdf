//! Python bindings for rulkit.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rulkit::cli::RunConfig;
use rulkit::dataio::{self, make_windows, MultivariateSeries, Preprocessor};
use rulkit::metrics::{self, MetricConfig};
use rulkit::numerics::RngState;
use rulkit::pipeline::{self, Noise, ScorerKind};
use rulkit::seq2seq::{self, Checkpoint, ModelConfig, Seq2SeqModel};
use rulkit::synth::{self, DriftShape, SynthConfig};

fn to_py(e: rulkit::Error) -> PyErr {
    match e {
        rulkit::Error::Io(io) => PyIOError::new_err(io.to_string()),
        rulkit::Error::TrainingDiverged { .. } | rulkit::Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Multivariate sensor series; missing readings are `None`.
#[pyclass(module = "pyrulkit", name = "Series", from_py_object)]
#[derive(Clone)]
struct PySeries {
    inner: MultivariateSeries,
}

#[pymethods]
impl PySeries {
    #[new]
    #[pyo3(signature = (instance_id, readings, timestamps=None))]
    fn new(instance_id: String, readings: Vec<Vec<Option<f64>>>, timestamps: Option<Vec<f64>>) -> PyResult<Self> {
        let ts = timestamps.unwrap_or_else(|| (0..readings.len()).map(|t| t as f64).collect());
        let present: Vec<Vec<bool>> = readings.iter().map(|r| r.iter().map(Option::is_some).collect()).collect();
        let rows = readings
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.unwrap_or(0.0)).collect())
            .collect();
        let inner = MultivariateSeries::new(instance_id, ts, rows, present).map_err(to_py)?;
        Ok(PySeries { inner })
    }

    #[getter]
    fn instance_id(&self) -> String {
        self.inner.instance_id.clone()
    }

    #[getter]
    fn timestamps(&self) -> Vec<f64> {
        self.inner.timestamps().to_vec()
    }

    #[getter]
    fn readings(&self) -> Vec<Vec<Option<f64>>> {
        self.inner
            .readings()
            .iter()
            .zip(self.inner.present())
            .map(|(r, p)| r.iter().zip(p).map(|(v, ok)| ok.then_some(*v)).collect())
            .collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// First `t` steps.
    fn truncate(&self, t: usize) -> PyResult<Self> {
        Ok(PySeries {
            inner: self.inner.truncate_at(t).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Series(id={:?}, len={}, dim={})",
            self.inner.instance_id,
            self.inner.len(),
            self.inner.dim()
        )
    }
}

fn unwrap_series(series: &[PySeries]) -> Vec<MultivariateSeries> {
    series.iter().map(|s| s.inner.clone()).collect()
}

fn wrap_series(series: Vec<MultivariateSeries>) -> Vec<PySeries> {
    series.into_iter().map(|inner| PySeries { inner }).collect()
}

/// Run configuration; same keys as the TOML file used by the command line.
#[pyclass(module = "pyrulkit", name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml=None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => RunConfig::from_toml(t).map_err(to_py)?,
            None => RunConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::load(&path).map_err(to_py)?,
        })
    }

    /// Sets `key` (bare or `section.key`) from TOML text, e.g. `set("alpha", "1.0")`.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set_str(key, value).map_err(to_py)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }
}

/// Trained encoder-decoder with its preprocessing.
#[pyclass(module = "pyrulkit", name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    preprocessor: Preprocessor,
    model: Seq2SeqModel,
    history: Vec<f64>,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn train(py: Python<'_>, series: Vec<PySeries>, config: &PyConfig) -> PyResult<Self> {
        config.inner.validate().map_err(to_py)?;
        let raw = unwrap_series(&series);
        let pc = config.inner.pipeline();
        let t = py.detach(|| pipeline::train_model(&raw, &pc)).map_err(to_py)?;
        Ok(PyModel {
            preprocessor: t.preprocessor,
            model: t.model,
            history: t.history.epoch_losses,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(to_py)?;
        let preprocessor = ck
            .preprocessor
            .ok_or_else(|| PyValueError::new_err("checkpoint has no preprocessing state"))?;
        Ok(PyModel {
            preprocessor,
            model: ck.model,
            history: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::new(self.model.clone(), Some(self.preprocessor.clone()))
            .save(&path)
            .map_err(to_py)
    }

    #[getter]
    fn loss_history(&self) -> Vec<f64> {
        self.history.clone()
    }

    #[getter]
    fn window(&self) -> usize {
        self.model.config.window
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.model.config.embedding_dim()
    }

    /// `(t, z)` for every window of the preprocessed series; `t` is the
    /// 1-based index of the window's last step.
    fn embed(&self, series: &PySeries) -> PyResult<Vec<(usize, Vec<f64>)>> {
        let p = self.preprocessor.transform(&series.inner).map_err(to_py)?;
        let w = self.model.config.window;
        if p.len() < w {
            return Ok(Vec::new());
        }
        make_windows(&p, w, 1)
            .map_err(to_py)?
            .iter()
            .map(|win| Ok((win.end_index, self.model.embed(win).map_err(to_py)?)))
            .collect()
    }

    /// Reconstruction (w rows) of the window ending at 1-based step `t`.
    fn reconstruct(&self, series: &PySeries, t: usize) -> PyResult<Vec<Vec<f64>>> {
        let p = self.preprocessor.transform(&series.inner).map_err(to_py)?;
        let w = self.model.config.window;
        if t < w || t > p.len() {
            return Err(PyValueError::new_err(format!("t must lie in [{w}, {}]", p.len())));
        }
        let win = make_windows(&p.truncate_at(t).map_err(to_py)?, w, 1)
            .map_err(to_py)?
            .pop()
            .ok_or_else(|| PyValueError::new_err("no window"))?;
        let r = self.model.reconstruct(&win).map_err(to_py)?;
        Ok((0..w).map(|i| r.row(i).to_vec()).collect())
    }
}

/// HI scorer plus curve library, ready to estimate remaining life.
#[pyclass(module = "pyrulkit", name = "Estimator")]
struct PyEstimator {
    inner: pipeline::Estimator,
}

#[pymethods]
impl PyEstimator {
    /// `scorer` overrides `health.scorer` from the config.
    #[new]
    #[pyo3(signature = (model, train, config, scorer=None))]
    fn new(
        py: Python<'_>,
        model: &PyModel,
        train: Vec<PySeries>,
        config: &PyConfig,
        scorer: Option<&str>,
    ) -> PyResult<Self> {
        let kind: ScorerKind = match scorer {
            Some(s) => s.parse().map_err(to_py)?,
            None => config.inner.health.scorer,
        };
        let raw = unwrap_series(&train);
        let (pre, m) = (model.preprocessor.clone(), model.model.clone());
        let beta = config.inner.health.beta;
        let matching = config.inner.matching();
        let inner = py
            .detach(|| pipeline::Estimator::build(pre, m, &raw, kind, beta, matching))
            .map_err(to_py)?;
        Ok(PyEstimator { inner })
    }

    #[getter]
    fn scorer(&self) -> String {
        self.inner.kind.to_string()
    }

    /// Returns `None` when the series is too short to score, otherwise a dict
    /// with `value`, `fallback_used` and `candidates`.
    #[pyo3(signature = (series, noise_sigma=0.0, seed=0))]
    fn estimate<'py>(
        &self,
        py: Python<'py>,
        series: &PySeries,
        noise_sigma: f64,
        seed: u64,
    ) -> PyResult<Option<Bound<'py, PyDict>>> {
        let mut rng = RngState::new(seed);
        let noise = (noise_sigma > 0.0).then_some(Noise {
            sigma: noise_sigma,
            rng: &mut rng,
        });
        let Some(est) = self.inner.estimate(&series.inner, noise).map_err(to_py)? else {
            return Ok(None);
        };
        let d = PyDict::new(py);
        d.set_item("value", est.value)?;
        d.set_item("fallback_used", est.fallback_used)?;
        let cands: Vec<(String, usize, f64, f64)> = est
            .candidates
            .iter()
            .map(|c| (c.train_id.clone(), c.lag, c.similarity(), c.rul))
            .collect();
        d.set_item("candidates", cands)?;
        Ok(Some(d))
    }

    /// `(times, values)` of the scaled HI curve, or `None` if too short.
    fn hi_curve(&self, series: &PySeries) -> PyResult<Option<(Vec<usize>, Vec<f64>)>> {
        let p = self.inner.prepare(&series.inner, None).map_err(to_py)?;
        Ok(self
            .inner
            .curve(&p)
            .map_err(to_py)?
            .map(|c| ((0..c.len()).map(|j| c.time_of(j)).collect(), c.values)))
    }
}

#[pyfunction]
#[pyo3(signature = (n_instances=20, sensors=3, life_min=150, life_max=250, onset=0.7, drift=3.0, noise=0.1, missing_prob=0.0, seed=0, quadratic=false))]
#[allow(clippy::too_many_arguments)]
fn generate_fleet(
    n_instances: usize,
    sensors: usize,
    life_min: usize,
    life_max: usize,
    onset: f64,
    drift: f64,
    noise: f64,
    missing_prob: f64,
    seed: u64,
    quadratic: bool,
) -> PyResult<Vec<PySeries>> {
    let cfg = SynthConfig {
        n_instances,
        sensors,
        life_min,
        life_max,
        onset,
        drift,
        drift_shape: if quadratic { DriftShape::Quadratic } else { DriftShape::Linear },
        noise,
        missing_prob,
        seed,
    };
    Ok(wrap_series(synth::generate_fleet(&cfg).map_err(to_py)?))
}

/// Reads `.csv` (generic format) or turbofan text files.
#[pyfunction]
fn load_series(path: PathBuf) -> PyResult<Vec<PySeries>> {
    Ok(wrap_series(dataio::load_series(&path).map_err(to_py)?))
}

#[pyfunction]
fn write_series_csv(path: PathBuf, series: Vec<PySeries>) -> PyResult<()> {
    let f = std::fs::File::create(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    dataio::write_series_csv(std::io::BufWriter::new(f), &unwrap_series(&series)).map_err(to_py)
}

/// `per_instance` random prefixes of each series with their remaining life.
#[pyfunction]
#[pyo3(signature = (series, per_instance=5, min_len=1, seed=0))]
fn truncate_instances(
    series: Vec<PySeries>,
    per_instance: usize,
    min_len: usize,
    seed: u64,
) -> PyResult<Vec<(PySeries, f64)>> {
    Ok(
        dataio::truncated_instances(&unwrap_series(&series), per_instance, min_len, seed)
            .map_err(to_py)?
            .into_iter()
            .map(|l| (PySeries { inner: l.series }, l.rul))
            .collect(),
    )
}

/// Full metrics report as a dict.
#[pyfunction]
#[pyo3(signature = (estimates, actuals, tau1=13.0, tau2=10.0))]
fn evaluate<'py>(
    py: Python<'py>,
    estimates: Vec<f64>,
    actuals: Vec<f64>,
    tau1: f64,
    tau2: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::evaluate(&estimates, &actuals, &MetricConfig { tau1, tau2 }).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("S", r.s)?;
    d.set_item("A", r.accuracy)?;
    d.set_item("MAE", r.mae)?;
    d.set_item("MSE", r.mse)?;
    d.set_item("MAPE", r.mape)?;
    d.set_item("FPR", r.fpr)?;
    d.set_item("FNR", r.fnr)?;
    d.set_item("N", r.n)?;
    d.set_item("MAPE_excluded", r.mape_excluded)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (deltas, tau1=13.0, tau2=10.0))]
fn timeliness_score(deltas: Vec<f64>, tau1: f64, tau2: f64) -> f64 {
    metrics::timeliness_score(&deltas, &MetricConfig { tau1, tau2 })
}

/// Largest relative error between analytic and central-difference gradients
/// on a random model and window.
#[pyfunction]
#[pyo3(signature = (seed=0, sensors=2, units=vec![4], window=5, mask_delta=true, epsilon=1e-5))]
fn grad_check(
    seed: u64,
    sensors: usize,
    units: Vec<usize>,
    window: usize,
    mask_delta: bool,
    epsilon: f64,
) -> PyResult<f64> {
    let mut cfg = ModelConfig::new(sensors, units, window);
    cfg.mask_delta = mask_delta;
    let model = Seq2SeqModel::new(cfg, seed).map_err(to_py)?;
    let mut rng = RngState::new(seed ^ 0xA5A5);
    let rows: Vec<Vec<f64>> = (0..window)
        .map(|_| (0..sensors).map(|_| rng.normal(0.0, 1.0)).collect())
        .collect();
    let present: Vec<Vec<bool>> = (0..window)
        .map(|_| (0..sensors).map(|_| !rng.bernoulli(0.3)).collect())
        .collect();
    let ts = (0..window).map(|t| t as f64).collect();
    let s = MultivariateSeries::new("g", ts, rows, present).map_err(to_py)?;
    let win = make_windows(&s, window, 1).map_err(to_py)?.remove(0);
    Ok(seq2seq::grad_check(&model, &win, epsilon).map_err(to_py)?.max_rel_error)
}

#[pymodule]
fn pyrulkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySeries>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEstimator>()?;
    m.add_function(wrap_pyfunction!(generate_fleet, m)?)?;
    m.add_function(wrap_pyfunction!(load_series, m)?)?;
    m.add_function(wrap_pyfunction!(write_series_csv, m)?)?;
    m.add_function(wrap_pyfunction!(truncate_instances, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(timeliness_score, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
