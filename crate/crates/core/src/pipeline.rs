//! End-to-end glue: preprocessing, model training, HI scoring and curve
//! matching, shared by the CLI, the Python bindings and the tests.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{make_windows, LabeledInstance, MultivariateSeries, PreprocessConfig, Preprocessor};
use crate::error::{Error, Result};
use crate::health::{
    build_normal_set, fit_linear_hi, hi_curve, CurveScale, HiCurve, HiScorer, InstanceEmbeddings,
    LinearHiModel, LinearTarget, NormalSet,
};
use crate::metrics::{evaluate, MetricConfig, MetricsReport};
use crate::numerics::{add_gaussian_noise, RngState};
use crate::rul::{estimate_rul, CurveLibrary, MatchConfig, RulEstimate, RulRow};
use crate::seq2seq::{self, LossKind, ModelConfig, OutputOrder, Seq2SeqModel, TrainConfig, TrainHistory};

/// How HI curves are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ScorerKind {
    /// Distance of each window embedding to the nearest normal embedding.
    #[default]
    #[serde(rename = "embed")]
    Embed,
    /// Reconstruction error of each window.
    #[serde(rename = "recon")]
    Recon,
    /// Linear regression from sensors onto the scaled embedding HI.
    #[serde(rename = "embed-lr1")]
    EmbedLr1,
    /// Linear regression onto the squared scaled embedding HI.
    #[serde(rename = "embed-lr2")]
    EmbedLr2,
    #[serde(rename = "recon-lr1")]
    ReconLr1,
    #[serde(rename = "recon-lr2")]
    ReconLr2,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 6] = [
        ScorerKind::Embed,
        ScorerKind::Recon,
        ScorerKind::EmbedLr1,
        ScorerKind::EmbedLr2,
        ScorerKind::ReconLr1,
        ScorerKind::ReconLr2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::Embed => "embed",
            ScorerKind::Recon => "recon",
            ScorerKind::EmbedLr1 => "embed-lr1",
            ScorerKind::EmbedLr2 => "embed-lr2",
            ScorerKind::ReconLr1 => "recon-lr1",
            ScorerKind::ReconLr2 => "recon-lr2",
        }
    }

    fn uses_embedding(self) -> bool {
        matches!(self, ScorerKind::Embed | ScorerKind::EmbedLr1 | ScorerKind::EmbedLr2)
    }

    fn linear_target(self) -> Option<LinearTarget> {
        match self {
            ScorerKind::EmbedLr1 | ScorerKind::ReconLr1 => Some(LinearTarget::Scaled),
            ScorerKind::EmbedLr2 | ScorerKind::ReconLr2 => Some(LinearTarget::Squared),
            _ => None,
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScorerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scorer {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    /// Units per GRU layer.
    pub layers: Vec<usize>,
    pub dropout: f64,
    pub window: usize,
    pub mask_delta: bool,
    pub output_order: OutputOrder,
    pub loss: LossKind,
    pub train: TrainConfig,
    /// Spacing of training windows.
    pub train_stride: usize,
    /// Fraction of each training life treated as normal.
    pub beta: f64,
    pub matching: MatchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preprocess: PreprocessConfig::default(),
            layers: vec![55],
            dropout: 0.2,
            window: 30,
            mask_delta: false,
            output_order: OutputOrder::Reverse,
            loss: LossKind::Squared,
            train: TrainConfig::default(),
            train_stride: 1,
            beta: 0.25,
            matching: MatchConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn model_config(&self, sensors: usize) -> ModelConfig {
        ModelConfig {
            sensors,
            mask_delta: self.mask_delta,
            layer_sizes: self.layers.clone(),
            dropout: self.dropout,
            window: self.window,
            output_order: self.output_order,
            loss: self.loss,
        }
    }
}

/// Preprocessor and model fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub preprocessor: Preprocessor,
    pub model: Seq2SeqModel,
    pub history: TrainHistory,
}

/// All windows of every series, in series order.
pub fn windows_of(
    series: &[MultivariateSeries],
    w: usize,
    stride: usize,
) -> Result<Vec<crate::dataio::AugmentedWindow>> {
    let mut out = Vec::new();
    for s in series {
        out.extend(make_windows(s, w, stride)?);
    }
    Ok(out)
}

/// Fits preprocessing on `train` and trains a fresh model on its windows.
pub fn train_model(train_raw: &[MultivariateSeries], cfg: &PipelineConfig) -> Result<TrainedModel> {
    if train_raw.is_empty() {
        return Err(Error::InsufficientData("no training instances".into()));
    }
    let preprocessor = Preprocessor::fit(train_raw, &cfg.preprocess)?;
    let train = train_raw
        .iter()
        .map(|s| preprocessor.transform(s))
        .collect::<Result<Vec<_>>>()?;
    let windows = windows_of(&train, cfg.window, cfg.train_stride)?;
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "every training instance is shorter than the window ({})",
            cfg.window
        )));
    }
    let mut model = Seq2SeqModel::new(cfg.model_config(preprocessor.output_dim()), cfg.train.seed)?;
    let history = seq2seq::train(&mut model, &windows, &cfg.train)?;
    Ok(TrainedModel {
        preprocessor,
        model,
        history,
    })
}

/// Optional Gaussian corruption applied to standardized sensors before
/// projection.
pub struct Noise<'a> {
    pub sigma: f64,
    pub rng: &'a mut RngState,
}

/// A trained model plus everything needed to turn a series into a RUL
/// estimate with one scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub kind: ScorerKind,
    pub preprocessor: Preprocessor,
    pub model: Seq2SeqModel,
    pub normal: Option<NormalSet>,
    /// Min-max scale of the raw window-based HI over the training curves.
    pub scale: CurveScale,
    pub linear: Option<LinearHiModel>,
    pub library: CurveLibrary,
    pub matching: MatchConfig,
}

impl Estimator {
    /// Builds the normal set, curve scale, optional linear model and the
    /// curve library from run-to-failure training series.
    pub fn build(
        preprocessor: Preprocessor,
        model: Seq2SeqModel,
        train_raw: &[MultivariateSeries],
        kind: ScorerKind,
        beta: f64,
        matching: MatchConfig,
    ) -> Result<Self> {
        matching.validate()?;
        let w = model.config.window;
        let train = train_raw
            .iter()
            .map(|s| preprocessor.transform(s))
            .collect::<Result<Vec<_>>>()?;
        let usable: Vec<&MultivariateSeries> = train.iter().filter(|s| s.len() >= w).collect();
        if usable.is_empty() {
            return Err(Error::InsufficientData(format!(
                "every training instance is shorter than the window ({w})"
            )));
        }

        let normal = if kind.uses_embedding() {
            let per_instance = usable
                .par_iter()
                .map(|s| {
                    let wins = make_windows(s, w, 1)?;
                    let embeddings = wins
                        .iter()
                        .map(|win| Ok((win.end_index, model.embed(win)?)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(InstanceEmbeddings {
                        instance_id: s.instance_id.clone(),
                        total_len: s.len(),
                        embeddings,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(build_normal_set(&per_instance, beta)?)
        } else {
            None
        };

        let scorer = match &normal {
            Some(n) => HiScorer::Embedding { model: &model, normal: n },
            None => HiScorer::Reconstruction { model: &model },
        };
        let raw_curves = usable
            .iter()
            .map(|s| hi_curve(&s.instance_id, &make_windows(s, w, 1)?, s.len(), scorer))
            .collect::<Result<Vec<_>>>()?;
        let scale = CurveScale::fit(&raw_curves)?;
        let scaled: Vec<HiCurve> = raw_curves.iter().map(|c| scale.apply(c)).collect();

        let (linear, curves) = match kind.linear_target() {
            None => (None, scaled),
            Some(target) => {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for (s, c) in usable.iter().zip(&scaled) {
                    for (j, h) in c.values.iter().enumerate() {
                        xs.push(s.readings()[c.time_of(j) - 1].clone());
                        ys.push(*h);
                    }
                }
                let lm = fit_linear_hi(&xs, &ys, target)?;
                let curves = train
                    .iter()
                    .map(|s| lm.curve(&s.instance_id, s.readings()))
                    .collect::<Result<Vec<_>>>()?;
                (Some(lm), curves)
            }
        };

        Ok(Estimator {
            kind,
            preprocessor,
            model,
            normal,
            scale,
            linear,
            library: CurveLibrary::new(curves),
            matching,
        })
    }

    pub fn from_trained(
        trained: &TrainedModel,
        train_raw: &[MultivariateSeries],
        kind: ScorerKind,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        Self::build(
            trained.preprocessor.clone(),
            trained.model.clone(),
            train_raw,
            kind,
            cfg.beta,
            cfg.matching.clone(),
        )
    }

    /// Raw series → model input space, optionally with noise added to the
    /// standardized sensors.
    pub fn prepare(&self, raw: &MultivariateSeries, noise: Option<Noise<'_>>) -> Result<MultivariateSeries> {
        if raw.dim() != self.preprocessor.input_dim() && self.preprocessor.bucket.is_none() {
            return Err(Error::Config(format!(
                "series {} has {} sensors, the model was trained on {}",
                raw.instance_id,
                raw.dim(),
                self.preprocessor.input_dim()
            )));
        }
        let bucketed = self.preprocessor.bucket(raw)?;
        if bucketed.dim() != self.preprocessor.input_dim() {
            return Err(Error::Config(format!(
                "series {} yields {} sensors, the model was trained on {}",
                raw.instance_id,
                bucketed.dim(),
                self.preprocessor.input_dim()
            )));
        }
        let mut std = self.preprocessor.standardize(&bucketed)?;
        if let Some(n) = noise {
            if n.sigma > 0.0 {
                std = add_gaussian_noise(&std, n.sigma, n.rng)?;
            }
        }
        self.preprocessor.project(&std)
    }

    /// Scaled HI curve of a prepared series; `None` if it is shorter than
    /// the window and the scorer needs windows.
    pub fn curve(&self, prepared: &MultivariateSeries) -> Result<Option<HiCurve>> {
        if let Some(lm) = &self.linear {
            if prepared.is_empty() {
                return Ok(None);
            }
            return lm.curve(&prepared.instance_id, prepared.readings()).map(Some);
        }
        let w = self.model.config.window;
        if prepared.len() < w {
            return Ok(None);
        }
        let scorer = match &self.normal {
            Some(n) => HiScorer::Embedding { model: &self.model, normal: n },
            None => HiScorer::Reconstruction { model: &self.model },
        };
        let c = hi_curve(&prepared.instance_id, &make_windows(prepared, w, 1)?, prepared.len(), scorer)?;
        Ok(Some(self.scale.apply(&c)))
    }

    pub fn estimate_curve(&self, curve: &HiCurve) -> Result<RulEstimate> {
        estimate_rul(curve, &self.library, &self.matching)
    }

    pub fn estimate(&self, raw: &MultivariateSeries, noise: Option<Noise<'_>>) -> Result<Option<RulEstimate>> {
        match self.curve(&self.prepare(raw, noise)?)? {
            Some(c) => self.estimate_curve(&c).map(Some),
            None => Ok(None),
        }
    }

    /// Report rows for labelled test instances: one per instance, or with
    /// `cadence = Some(k)` one per `k`-th time index (ids `instance@t`).
    pub fn report(
        &self,
        test: &[LabeledInstance],
        cadence: Option<usize>,
        noise: Option<(f64, u64)>,
    ) -> Result<Vec<RulRow>> {
        if cadence == Some(0) {
            return Err(Error::invalid("cadence must be >= 1"));
        }
        let per_instance = test
            .par_iter()
            .enumerate()
            .map(|(i, inst)| {
                let mut rng = noise.map(|(_, seed)| RngState::new(crate::numerics::mix_seed(seed, i as u64)));
                let n = match (&noise, rng.as_mut()) {
                    (Some((sigma, _)), Some(rng)) => Some(Noise { sigma: *sigma, rng }),
                    _ => None,
                };
                let prepared = self.prepare(&inst.series, n)?;
                let curve = self.curve(&prepared)?;
                let total = prepared.len();
                let times: Vec<usize> = match cadence {
                    None => vec![total],
                    Some(k) => (1..=total).filter(|t| t % k == 0).collect(),
                };
                times
                    .into_iter()
                    .map(|t| {
                        let id = match cadence {
                            None => inst.series.instance_id.clone(),
                            Some(_) => format!("{}@{}", inst.series.instance_id, t),
                        };
                        let actual = inst.rul + (total - t) as f64;
                        let est = match &curve {
                            Some(c) if t == total => Some(self.estimate_curve(c)?),
                            Some(c) => {
                                let cut = c.truncate_at(t);
                                if cut.is_empty() {
                                    None
                                } else {
                                    Some(self.estimate_curve(&cut)?)
                                }
                            }
                            None => None,
                        };
                        Ok(RulRow {
                            instance: id,
                            estimate: est.as_ref().map(|e| e.value),
                            actual: Some(actual),
                            fallback_used: est.as_ref().is_some_and(|e| e.fallback_used),
                            n_candidates: est.as_ref().map_or(0, |e| e.candidates.len()),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_instance.into_iter().flatten().collect())
    }
}

/// Metrics over the rows that have both an estimate and an actual.
pub fn evaluate_rows(rows: &[RulRow], cfg: &MetricConfig) -> Result<MetricsReport> {
    let (est, act): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| Some((r.estimate?, r.actual?)))
        .unzip();
    if est.is_empty() {
        return Err(Error::InsufficientData("no rows with both estimate and actual".into()));
    }
    evaluate(&est, &act, cfg)
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepRow {
    pub sigma: f64,
    pub mse: f64,
    pub s: f64,
}

/// Per-σ MSE and S on noise-corrupted copies of the test set.
pub fn noise_sweep(
    est: &Estimator,
    test: &[LabeledInstance],
    sigmas: &[f64],
    seed: u64,
    metrics: &MetricConfig,
) -> Result<Vec<NoiseSweepRow>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let noise = (sigma > 0.0).then_some((sigma, seed));
            let rows = est.report(test, None, noise)?;
            let r = evaluate_rows(&rows, metrics)?;
            Ok(NoiseSweepRow { sigma, mse: r.mse, s: r.s })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::Optimizer;
    use crate::synth::{generate_fleet, SynthConfig};

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            preprocess: PreprocessConfig {
                components: None,
                ..Default::default()
            },
            layers: vec![6],
            dropout: 0.0,
            window: 10,
            train: TrainConfig {
                epochs: 2,
                learning_rate: 0.01,
                optimizer: Optimizer::Adam,
                ..Default::default()
            },
            train_stride: 5,
            ..Default::default()
        }
    }

    fn fleet() -> Vec<MultivariateSeries> {
        generate_fleet(&SynthConfig {
            n_instances: 6,
            life_min: 60,
            life_max: 90,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn scorer_names_roundtrip() {
        for k in ScorerKind::ALL {
            assert_eq!(k.name().parse::<ScorerKind>().unwrap(), k);
        }
        assert!("nope".parse::<ScorerKind>().is_err());
    }

    #[test]
    fn every_scorer_builds_and_estimates() {
        let f = fleet();
        let cfg = small_cfg();
        let trained = train_model(&f, &cfg).unwrap();
        assert_eq!(trained.history.epoch_losses.len(), 2);
        let test = vec![LabeledInstance {
            series: f[0].truncate_at(50).unwrap(),
            rul: (f[0].len() - 50) as f64,
        }];
        for kind in ScorerKind::ALL {
            let est = Estimator::from_trained(&trained, &f, kind, &cfg).unwrap();
            assert_eq!(est.library.curves.len(), 6);
            let start = if kind.linear_target().is_some() { 1 } else { 10 };
            assert!(est.library.curves.iter().all(|c| c.start == start));
            let rows = est.report(&test, None, None).unwrap();
            assert_eq!(rows.len(), 1);
            let v = rows[0].estimate.unwrap();
            assert!((0.0..=120.0).contains(&v));
        }
    }

    #[test]
    fn cadence_rows_and_short_series() {
        let f = fleet();
        let cfg = small_cfg();
        let trained = train_model(&f, &cfg).unwrap();
        let est = Estimator::from_trained(&trained, &f, ScorerKind::Embed, &cfg).unwrap();
        let inst = LabeledInstance {
            series: f[1].truncate_at(30).unwrap(),
            rul: 7.0,
        };
        let rows = est.report(std::slice::from_ref(&inst), Some(3), None).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[0].instance, format!("{}@3", f[1].instance_id));
        assert_eq!(rows[0].estimate, None);
        assert_eq!(rows[0].actual, Some(7.0 + 27.0));
        assert!(rows[3].estimate.is_some());
        let plain = est.report(&[inst], None, None).unwrap();
        assert_eq!(plain[0].estimate, rows[9].estimate);
    }

    #[test]
    fn zero_sigma_sweep_matches_plain_estimate() {
        let f = fleet();
        let cfg = small_cfg();
        let trained = train_model(&f, &cfg).unwrap();
        let est = Estimator::from_trained(&trained, &f, ScorerKind::Recon, &cfg).unwrap();
        let test: Vec<LabeledInstance> = f
            .iter()
            .map(|s| LabeledInstance {
                series: s.truncate_at(40).unwrap(),
                rul: (s.len() - 40) as f64,
            })
            .collect();
        let m = MetricConfig::default();
        let plain = evaluate_rows(&est.report(&test, None, None).unwrap(), &m).unwrap();
        let sweep = noise_sweep(&est, &test, &[0.0, 0.3], 5, &m).unwrap();
        assert_eq!(sweep[0].mse, plain.mse);
        assert_eq!(sweep.len(), 2);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let f = fleet();
        let cfg = small_cfg();
        let trained = train_model(&f, &cfg).unwrap();
        let est = Estimator::from_trained(&trained, &f, ScorerKind::Recon, &cfg).unwrap();
        let wrong = MultivariateSeries::with_unit_steps("x", vec![vec![0.0; 5]; 20]).unwrap();
        assert!(matches!(est.prepare(&wrong, None), Err(Error::Config(_))));
    }

    #[test]
    fn population_std_examples() {
        assert_eq!(population_std(&[2.0, 4.0]), 1.0);
        assert_eq!(population_std(&[3.0]), 0.0);
    }
}
