//! TOML run configuration. Model symbols keep their short names
//! (`p`, `L`, `c`, `d`, `w`, `tau`, `alpha`, `r_max`, `lambda`, `beta`,
//! `tau1`, `tau2`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::PreprocessConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::pipeline::{PipelineConfig, ScorerKind};
use crate::rul::{MatchConfig, SimilarityNorm};
use crate::seq2seq::{LossKind, Optimizer, OutputOrder, TrainConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub health: HealthSection,
    pub rul: RulSection,
    pub metrics: MetricsSection,
    pub estimate: EstimateSection,
    pub noise: NoiseSection,
    pub grid: GridSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Run-to-failure training instances (`.csv` or turbofan text).
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// True remaining life of each test instance, one integer per line.
    pub test_rul: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: None,
            test: None,
            test_rul: None,
            out_dir: PathBuf::from("out"),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    /// Principal components kept; 0 skips PCA.
    pub p: usize,
    /// Bucket width for daily-style aggregation.
    pub bucket: Option<f64>,
    pub constant_tol: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            p: 2,
            bucket: None,
            constant_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ModelSection {
    /// GRU layers.
    pub L: usize,
    /// Units per layer.
    pub c: usize,
    /// Input dropout rate.
    pub d: f64,
    /// Window length.
    pub w: usize,
    pub mask_delta: bool,
    pub output_order: OutputOrder,
    pub loss: LossKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            L: 1,
            c: 55,
            d: 0.2,
            w: 30,
            mask_delta: false,
            output_order: OutputOrder::Reverse,
            loss: LossKind::Squared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub clip: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Spacing of training windows.
    pub stride: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            clip: t.clip,
            seed: t.seed,
            shuffle: t.shuffle,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealthSection {
    /// Fraction of each training life treated as normal.
    pub beta: f64,
    pub scorer: ScorerKind,
}

impl Default for HealthSection {
    fn default() -> Self {
        HealthSection {
            beta: 0.25,
            scorer: ScorerKind::EmbedLr1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulSection {
    /// Largest lag searched.
    pub tau: usize,
    pub alpha: f64,
    pub r_max: f64,
    pub lambda: f64,
    pub norm: SimilarityNorm,
}

impl Default for RulSection {
    fn default() -> Self {
        let m = MatchConfig::default();
        RulSection {
            tau: m.tau,
            alpha: m.alpha,
            r_max: m.r_max,
            lambda: m.lambda,
            norm: m.norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let m = MetricConfig::default();
        MetricsSection { tau1: m.tau1, tau2: m.tau2 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    /// Also estimate at every `cadence`-th step of each test series.
    pub cadence: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigmas: Vec<f64>,
    pub noise_seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            sigmas: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Timeliness score.
    #[default]
    S,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub objective: Objective,
    pub split_seed: u64,
    pub train_fraction: f64,
    /// Random truncations per validation instance.
    pub truncations: usize,
    /// Shortest validation prefix; defaults to the largest `w` in the grid.
    pub min_len: Option<usize>,
    /// Values to try per key, e.g. `w = [20, 30]`.
    pub values: BTreeMap<String, Vec<toml::Value>>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            objective: Objective::S,
            split_seed: 0,
            train_fraction: 0.8,
            truncations: 5,
            min_len: None,
            values: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    #[serde(flatten)]
    pub fleet: SynthConfig,
    /// Share of instances written as truncated test instances.
    pub test_fraction: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            fleet: SynthConfig::default(),
            test_fraction: 0.0,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths in it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(&absolute(base)?);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.data.train, &mut self.data.test, &mut self.data.test_rul, &mut self.data.checkpoint]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.data.out_dir);
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.data
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.data.out_dir.join("checkpoint.json"))
    }

    /// Sets one key from its TOML text, e.g. `("alpha", "1.0")`. A bare key
    /// must be unique across sections; otherwise write `section.key`.
    pub fn set_str(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
            Err(_) => toml::Value::String(raw.into()),
        };
        self.set(key, value)
    }

    pub fn set(&mut self, key: &str, value: toml::Value) -> Result<()> {
        let mut root = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let (section, name) = self.locate(key, &root)?;
        let table = root
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("[{section}] is not a table")))?;
        table.insert(name, value);
        *self = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    fn locate(&self, key: &str, root: &toml::Table) -> Result<(String, String)> {
        if let Some((s, k)) = key.split_once('.') {
            if !SECTIONS.contains(&s) {
                return Err(Error::Config(format!("unknown section {s:?}")));
            }
            return Ok((s.to_string(), k.to_string()));
        }
        let hits: Vec<&str> = SECTIONS
            .iter()
            .copied()
            .filter(|s| section_has_key(root, s, key))
            .collect();
        match hits.as_slice() {
            [s] => Ok((s.to_string(), key.to_string())),
            [] => Err(Error::Config(format!("unknown config key {key:?}"))),
            _ => Err(Error::Config(format!(
                "key {key:?} is ambiguous ({}); write section.key",
                hits.join(", ")
            ))),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            preprocess: PreprocessConfig {
                bucket: self.preprocess.bucket,
                components: (self.preprocess.p > 0).then_some(self.preprocess.p),
                constant_tol: self.preprocess.constant_tol,
            },
            layers: vec![self.model.c; self.model.L],
            dropout: self.model.d,
            window: self.model.w,
            mask_delta: self.model.mask_delta,
            output_order: self.model.output_order,
            loss: self.model.loss,
            train: TrainConfig {
                learning_rate: self.train.learning_rate,
                epochs: self.train.epochs,
                batch_size: self.train.batch_size,
                optimizer: self.train.optimizer,
                clip: self.train.clip,
                seed: self.train.seed,
                shuffle: self.train.shuffle,
            },
            train_stride: self.train.stride,
            beta: self.health.beta,
            matching: self.matching(),
        }
    }

    pub fn matching(&self) -> MatchConfig {
        MatchConfig {
            tau: self.rul.tau,
            lambda: self.rul.lambda,
            alpha: self.rul.alpha,
            r_max: self.rul.r_max,
            norm: self.rul.norm,
        }
    }

    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            tau1: self.metrics.tau1,
            tau2: self.metrics.tau2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.pipeline();
        if self.model.L == 0 || self.model.c == 0 {
            return Err(Error::Config("L and c must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.model.d) {
            return Err(Error::Config(format!("d must be in [0, 1), got {}", self.model.d)));
        }
        if self.model.w == 0 || self.train.stride == 0 {
            return Err(Error::Config("w and stride must be >= 1".into()));
        }
        if !(self.health.beta > 0.0 && self.health.beta <= 1.0) {
            return Err(Error::Config(format!("beta must be in (0, 1], got {}", self.health.beta)));
        }
        if self.estimate.cadence == Some(0) {
            return Err(Error::Config("cadence must be >= 1".into()));
        }
        if self.noise.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("noise sigmas must be finite and >= 0".into()));
        }
        p.train.validate().map_err(as_config)?;
        p.matching.validate()?;
        self.metric_config().validate().map_err(as_config)?;
        Ok(())
    }
}

const SECTIONS: [&str; 11] = [
    "data", "preprocess", "model", "train", "health", "rul", "metrics", "estimate", "noise", "grid", "synth",
];

/// Keys each section accepts, including optional ones that serialize to nothing.
fn section_has_key(root: &toml::Table, section: &str, key: &str) -> bool {
    let optional: &[&str] = match section {
        "data" => &["train", "test", "test_rul", "checkpoint"],
        "preprocess" => &["bucket"],
        "estimate" => &["cadence"],
        "grid" => &["min_len"],
        _ => &[],
    };
    optional.contains(&key)
        || root
            .get(section)
            .and_then(|v| v.as_table())
            .is_some_and(|t| t.contains_key(key))
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

pub(crate) fn absolute(p: &Path) -> Result<PathBuf> {
    if p.as_os_str().is_empty() {
        return Ok(std::env::current_dir()?);
    }
    Ok(std::path::absolute(p)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_engine_values() {
        let c = RunConfig::default();
        assert_eq!((c.preprocess.p, c.model.L, c.model.c, c.model.w), (2, 1, 55, 30));
        assert_eq!((c.model.d, c.rul.tau, c.rul.alpha), (0.2, 30, 0.95));
        assert_eq!((c.rul.r_max, c.rul.lambda), (120.0, 0.005));
        assert_eq!((c.metrics.tau1, c.metrics.tau2, c.health.beta), (13.0, 10.0, 0.25));
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_keeps_everything() {
        let mut c = RunConfig::default();
        c.data.train = Some("/x/train.csv".into());
        c.estimate.cadence = Some(3);
        c.grid.values.insert("w".into(), vec![toml::Value::Integer(20)]);
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn short_names_parse() {
        let c = RunConfig::from_toml("[model]\nL = 2\nc = 8\n[rul]\nalpha = 1.0\nlambda = 0.01\n").unwrap();
        assert_eq!(c.pipeline().layers, vec![8, 8]);
        assert_eq!(c.matching().alpha, 1.0);
        assert!(RunConfig::from_toml("[model]\nunits = 3\n").is_err());
    }

    #[test]
    fn set_finds_section() {
        let mut c = RunConfig::default();
        c.set_str("alpha", "1").unwrap();
        c.set_str("scorer", "recon").unwrap();
        c.set_str("cadence", "3").unwrap();
        c.set_str("train", "data.csv").unwrap();
        assert_eq!(c.rul.alpha, 1.0);
        assert_eq!(c.health.scorer, ScorerKind::Recon);
        assert_eq!(c.estimate.cadence, Some(3));
        assert_eq!(c.data.train, Some(PathBuf::from("data.csv")));
        assert!(c.set_str("seed", "3").is_err());
        c.set_str("synth.seed", "3").unwrap();
        assert_eq!(c.synth.fleet.seed, 3);
        assert!(c.set_str("nope", "3").is_err());
    }
}
