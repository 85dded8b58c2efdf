//! Prognostics scores for RUL estimates. Throughout, `Δ = estimate − actual`,
//! so positive errors are late predictions.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataio::csv_err;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Tolerated early error (Δ < 0).
    pub tau1: f64,
    /// Tolerated late error (Δ > 0).
    pub tau2: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { tau1: 13.0, tau2: 10.0 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0 && self.tau2 > 0.0) {
            return Err(Error::Config("tau1 and tau2 must both be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Accurate,
    /// Too early: Δ < −τ₁.
    FalsePositive,
    /// Too late: Δ > τ₂.
    FalseNegative,
}

pub fn classify(delta: f64, cfg: &MetricConfig) -> Outcome {
    if delta < -cfg.tau1 {
        Outcome::FalsePositive
    } else if delta > cfg.tau2 {
        Outcome::FalseNegative
    } else {
        Outcome::Accurate
    }
}

/// `Σ exp(γ|Δ|) − 1` with `γ = 1/τ₁` for early and `1/τ₂` for late errors.
pub fn timeliness_score(deltas: &[f64], cfg: &MetricConfig) -> f64 {
    deltas
        .iter()
        .map(|&d| {
            let gamma = if d < 0.0 { 1.0 / cfg.tau1 } else { 1.0 / cfg.tau2 };
            (gamma * d.abs()).exp_m1()
        })
        .sum()
}

fn count(deltas: &[f64], cfg: &MetricConfig, which: Outcome) -> usize {
    deltas.iter().filter(|&&d| classify(d, cfg) == which).count()
}

/// Percentage of errors within `[−τ₁, τ₂]`.
pub fn accuracy(deltas: &[f64], cfg: &MetricConfig) -> Result<f64> {
    if deltas.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    Ok(100.0 * count(deltas, cfg, Outcome::Accurate) as f64 / deltas.len() as f64)
}

/// `(FPR %, FNR %)`.
///
/// FNR is taken as the remainder `100 − (A + FPR)`, which keeps
/// `A + FPR + FNR` at exactly 100 in floating point; it differs from the
/// direct ratio by at most a few ulps.
pub fn classification_rates(deltas: &[f64], cfg: &MetricConfig) -> Result<(f64, f64)> {
    let acc = accuracy(deltas, cfg)?;
    let fpr = 100.0 * count(deltas, cfg, Outcome::FalsePositive) as f64 / deltas.len() as f64;
    Ok((fpr, 100.0 - (acc + fpr)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae: f64,
    pub mse: f64,
    /// Over instances with a nonzero actual; `None` if there are none.
    pub mape: Option<f64>,
    pub mape_excluded: usize,
}

pub fn error_stats(deltas: &[f64], actuals: &[f64]) -> Result<ErrorStats> {
    if deltas.len() != actuals.len() {
        return Err(Error::invalid("deltas and actuals differ in length"));
    }
    if deltas.is_empty() {
        return Err(Error::invalid("error statistics of an empty set"));
    }
    let n = deltas.len() as f64;
    let mae = deltas.iter().map(|d| d.abs()).sum::<f64>() / n;
    let mse = deltas.iter().map(|d| d * d).sum::<f64>() / n;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (d, r) in deltas.iter().zip(actuals) {
        if *r != 0.0 {
            sum += d.abs() / r.abs();
            used += 1;
        }
    }
    Ok(ErrorStats {
        mae,
        mse,
        mape: (used > 0).then(|| 100.0 * sum / used as f64),
        mape_excluded: deltas.len() - used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub s: f64,
    pub accuracy: f64,
    pub mae: f64,
    pub mse: f64,
    pub mape: Option<f64>,
    pub mape_excluded: usize,
    pub fpr: f64,
    pub fnr: f64,
    pub n: usize,
    pub n_accurate: usize,
    pub n_fp: usize,
    pub n_fn: usize,
}

pub fn evaluate(estimates: &[f64], actuals: &[f64], cfg: &MetricConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if estimates.len() != actuals.len() {
        return Err(Error::invalid("estimates and actuals differ in length"));
    }
    let deltas: Vec<f64> = estimates.iter().zip(actuals).map(|(e, a)| e - a).collect();
    let stats = error_stats(&deltas, actuals)?;
    let (fpr, fnr) = classification_rates(&deltas, cfg)?;
    Ok(MetricsReport {
        s: timeliness_score(&deltas, cfg),
        accuracy: accuracy(&deltas, cfg)?,
        mae: stats.mae,
        mse: stats.mse,
        mape: stats.mape,
        mape_excluded: stats.mape_excluded,
        fpr,
        fnr,
        n: deltas.len(),
        n_accurate: count(&deltas, cfg, Outcome::Accurate),
        n_fp: count(&deltas, cfg, Outcome::FalsePositive),
        n_fn: count(&deltas, cfg, Outcome::FalseNegative),
    })
}

impl MetricsReport {
    fn fields(&self) -> [(&'static str, String); 9] {
        let f = |v: f64| format!("{v:.4}");
        [
            ("S", f(self.s)),
            ("A", f(self.accuracy)),
            ("MAE", f(self.mae)),
            ("MSE", f(self.mse)),
            ("MAPE", self.mape.map(f).unwrap_or_else(|| "n/a".into())),
            ("FPR", f(self.fpr)),
            ("FNR", f(self.fnr)),
            ("N", self.n.to_string()),
            ("MAPE_excluded", self.mape_excluded.to_string()),
        ]
    }

    /// Header plus one data row, full precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["S", "A", "MAE", "MSE", "MAPE", "FPR", "FNR", "N", "MAPE_excluded"])
            .map_err(csv_err)?;
        w.write_record([
            self.s.to_string(),
            self.accuracy.to_string(),
            self.mae.to_string(),
            self.mse.to_string(),
            self.mape.map(|v| v.to_string()).unwrap_or_default(),
            self.fpr.to_string(),
            self.fnr.to_string(),
            self.n.to_string(),
            self.mape_excluded.to_string(),
        ])
        .map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fields = self.fields();
        let width = fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in fields {
            writeln!(f, "{k:<width$}  {v:>12}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: MetricConfig = MetricConfig { tau1: 13.0, tau2: 10.0 };

    #[test]
    fn score_examples() {
        assert_eq!(timeliness_score(&[0.0], &CFG), 0.0);
        let e1 = std::f64::consts::E - 1.0;
        assert!((timeliness_score(&[10.0], &CFG) - e1).abs() < 1e-12);
        assert!((timeliness_score(&[-13.0], &CFG) - e1).abs() < 1e-12);
        assert!((timeliness_score(&[13.0], &CFG) - 2.669_296_7).abs() < 1e-6);
    }

    #[test]
    fn accuracy_boundaries_inclusive() {
        assert_eq!(accuracy(&[0.0, 0.0], &CFG).unwrap(), 100.0);
        assert_eq!(accuracy(&[-13.0, 10.0], &CFG).unwrap(), 100.0);
        assert_eq!(accuracy(&[-14.0, 11.0], &CFG).unwrap(), 0.0);
        assert!(accuracy(&[], &CFG).is_err());
    }

    #[test]
    fn error_stat_examples() {
        let s = error_stats(&[0.0; 3], &[5.0; 3]).unwrap();
        assert_eq!((s.mae, s.mse, s.mape), (0.0, 0.0, Some(0.0)));
        let s = error_stats(&[3.0, -4.0], &[10.0, 20.0]).unwrap();
        assert_eq!((s.mae, s.mse), (3.5, 12.5));
        assert!((s.mape.unwrap() - 25.0).abs() < 1e-12);
        let s = error_stats(&[5.0], &[100.0]).unwrap();
        assert_eq!((s.mae, s.mse, s.mape), (5.0, 25.0, Some(5.0)));
        let s = error_stats(&[1.0, 2.0], &[0.0, 4.0]).unwrap();
        assert_eq!((s.mape, s.mape_excluded), (Some(50.0), 1));
    }

    #[test]
    fn rates_and_partition() {
        assert_eq!(classification_rates(&[0.0], &CFG).unwrap(), (0.0, 0.0));
        assert_eq!(
            classification_rates(&[-20.0, 20.0, 0.0, 0.0], &CFG).unwrap(),
            (25.0, 25.0)
        );
        let r = evaluate(&[0.0, 40.0, 5.0], &[20.0, 10.0, 5.0], &CFG).unwrap();
        assert_eq!(r.n_accurate + r.n_fp + r.n_fn, r.n);
    }

    #[test]
    fn perfect_report() {
        let r = evaluate(&[5.0, 7.0], &[5.0, 7.0], &CFG).unwrap();
        assert_eq!((r.s, r.accuracy, r.mae, r.mse, r.fpr, r.fnr), (0.0, 100.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.mape, Some(0.0));
        let text = r.to_string();
        assert!(text.contains("MSE") && text.contains("100.0000"));
    }
}
