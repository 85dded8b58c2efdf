//! Seeded synthetic run-to-failure fleets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::MultivariateSeries;
use crate::error::{Error, Result};
use crate::numerics::{mix_seed, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftShape {
    #[default]
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub sensors: usize,
    pub life_min: usize,
    pub life_max: usize,
    /// Fraction of life before degradation starts.
    pub onset: f64,
    /// Drift size reached at end of life.
    pub drift: f64,
    #[serde(default)]
    pub drift_shape: DriftShape,
    pub noise: f64,
    pub missing_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_instances: 20,
            sensors: 3,
            life_min: 150,
            life_max: 250,
            onset: 0.7,
            drift: 3.0,
            drift_shape: DriftShape::Linear,
            noise: 0.1,
            missing_prob: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 || self.sensors == 0 {
            return Err(Error::Config("need at least one instance and one sensor".into()));
        }
        if self.life_min < 2 || self.life_min > self.life_max {
            return Err(Error::Config(format!(
                "life range [{}, {}] is invalid",
                self.life_min, self.life_max
            )));
        }
        if !(self.onset > 0.0 && self.onset <= 1.0) {
            return Err(Error::Config(format!("onset must be in (0, 1], got {}", self.onset)));
        }
        if !(0.0..=1.0).contains(&self.missing_prob) {
            return Err(Error::Config("missing probability must be in [0, 1]".into()));
        }
        if !(self.noise >= 0.0) || !self.drift.is_finite() {
            return Err(Error::Config("noise must be >= 0 and drift finite".into()));
        }
        Ok(())
    }
}

/// Per-sensor signal shape shared by the whole fleet.
struct SensorShape {
    freqs: [f64; 2],
    amps: [f64; 2],
    /// Signed drift weight.
    drift_dir: f64,
}

/// Drift level at 0-based step `t` of a life of length `len`.
pub fn drift_level(cfg: &SynthConfig, t: usize, len: usize) -> f64 {
    let onset = cfg.onset * len as f64;
    let span = len as f64 - onset;
    let pos = t as f64 + 1.0;
    if pos <= onset || span <= 0.0 {
        return 0.0;
    }
    let frac = (pos - onset) / span;
    cfg.drift
        * match cfg.drift_shape {
            DriftShape::Linear => frac,
            DriftShape::Quadratic => frac * frac,
        }
}

/// Each instance is a sum of two sinusoids per sensor (fleet-wide
/// frequencies, per-instance phases), plus a monotone drift after the onset,
/// Gaussian noise and Bernoulli missingness. Instance ids are `1..=n`; each
/// series ends at failure.
pub fn generate_fleet(cfg: &SynthConfig) -> Result<Vec<MultivariateSeries>> {
    cfg.validate()?;
    let mut fleet_rng = RngState::new(mix_seed(cfg.seed, u64::MAX));
    let shapes: Vec<SensorShape> = (0..cfg.sensors)
        .map(|_| SensorShape {
            freqs: [fleet_rng.uniform_range(0.05, 0.3), fleet_rng.uniform_range(0.3, 0.8)],
            amps: [fleet_rng.uniform_range(0.6, 1.0), fleet_rng.uniform_range(0.1, 0.4)],
            drift_dir: {
                let w = fleet_rng.uniform_range(0.5, 1.0);
                if fleet_rng.bernoulli(0.5) { w } else { -w }
            },
        })
        .collect();

    (0..cfg.n_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngState::new(mix_seed(cfg.seed, i as u64));
            let len = rng.int_range(cfg.life_min, cfg.life_max);
            let phases: Vec<[f64; 2]> = (0..cfg.sensors)
                .map(|_| {
                    let tau = std::f64::consts::TAU;
                    [rng.uniform_range(0.0, tau), rng.uniform_range(0.0, tau)]
                })
                .collect();
            let mut rows = Vec::with_capacity(len);
            let mut flags = Vec::with_capacity(len);
            for t in 0..len {
                let d = drift_level(cfg, t, len);
                let mut row = Vec::with_capacity(cfg.sensors);
                let mut pres = Vec::with_capacity(cfg.sensors);
                for (s, ph) in shapes.iter().zip(&phases) {
                    let base = s.amps[0] * (s.freqs[0] * t as f64 + ph[0]).sin()
                        + s.amps[1] * (s.freqs[1] * t as f64 + ph[1]).sin();
                    let noise = if cfg.noise > 0.0 { rng.normal(0.0, cfg.noise) } else { 0.0 };
                    let missing = cfg.missing_prob > 0.0 && rng.bernoulli(cfg.missing_prob);
                    row.push(if missing { 0.0 } else { base + s.drift_dir * d + noise });
                    pres.push(!missing);
                }
                rows.push(row);
                flags.push(pres);
            }
            let ts = (0..len).map(|t| t as f64).collect();
            MultivariateSeries::new((i + 1).to_string(), ts, rows, flags)
        })
        .collect()
}
