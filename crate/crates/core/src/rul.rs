//! Remaining-life estimation by matching a test HI curve against the curves
//! of run-to-failure training instances.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::csv_err;
use crate::error::{Error, Result};
use crate::health::HiCurve;

/// What the squared-difference sum is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityNorm {
    /// Number of summed terms.
    #[default]
    TermCount,
    /// Length of the test series, regardless of how many terms overlap.
    TestLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Largest time lag tried.
    pub tau: usize,
    /// Similarity bandwidth.
    pub lambda: f64,
    /// Admission threshold relative to the best similarity.
    pub alpha: f64,
    /// Estimates are clipped to `[0, r_max]`.
    pub r_max: f64,
    #[serde(default)]
    pub norm: SimilarityNorm,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            tau: 30,
            lambda: 0.005,
            alpha: 0.95,
            r_max: 120.0,
            norm: SimilarityNorm::TermCount,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.r_max >= 0.0) {
            return Err(Error::Config(format!("r_max must be >= 0, got {}", self.r_max)));
        }
        if self.tau == 0 {
            return Err(Error::Config("tau must be >= 1".into()));
        }
        Ok(())
    }
}

/// HI curves of failed training instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveLibrary {
    pub curves: Vec<HiCurve>,
}

impl CurveLibrary {
    pub fn new(curves: Vec<HiCurve>) -> Self {
        CurveLibrary { curves }
    }

    pub fn max_len(&self) -> usize {
        self.curves.iter().map(|c| c.total_len).max().unwrap_or(0)
    }
}

/// Log of the curve similarity, or `None` when the lag is not admissible
/// (lag 0, test outlasting the shifted train curve, or no overlapping
/// points). Working in logs keeps tiny similarities comparable.
pub fn log_similarity(test: &HiCurve, train: &HiCurve, lag: usize, lambda: f64, norm: SimilarityNorm) -> Option<f64> {
    if lag == 0 || lag + test.total_len > train.total_len {
        return None;
    }
    let mut sum = 0.0;
    let mut terms = 0usize;
    for (j, h) in test.values.iter().enumerate() {
        if let Some(g) = train.at(test.time_of(j) + lag) {
            sum += (h - g) * (h - g);
            terms += 1;
        }
    }
    if terms == 0 {
        return None;
    }
    let m = match norm {
        SimilarityNorm::TermCount => terms as f64,
        SimilarityNorm::TestLength => test.total_len as f64,
    };
    Some(-sum / m / lambda)
}

/// Similarity in `(0, 1]`; `None` when the lag is not admissible.
pub fn curve_similarity(test: &HiCurve, train: &HiCurve, lag: usize, lambda: f64, norm: SimilarityNorm) -> Option<f64> {
    log_similarity(test, train, lag, lambda, norm).map(f64::exp)
}

/// Remaining life implied by aligning `test` with `train` at `lag`.
pub fn candidate_rul(train: &HiCurve, test: &HiCurve, lag: usize) -> Option<f64> {
    if lag == 0 || lag + test.total_len > train.total_len {
        return None;
    }
    Some((train.total_len - test.total_len - lag) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub train_id: String,
    pub lag: usize,
    pub log_similarity: f64,
    pub rul: f64,
}

impl Candidate {
    pub fn similarity(&self) -> f64 {
        self.log_similarity.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulEstimate {
    pub value: f64,
    /// Admitted pairs only.
    pub candidates: Vec<Candidate>,
    pub fallback_used: bool,
}

fn enumerate_pairs(test: &HiCurve, lib: &CurveLibrary, cfg: &MatchConfig) -> Vec<Candidate> {
    lib.curves
        .par_iter()
        .map(|train| {
            (1..=cfg.tau)
                .filter_map(|lag| {
                    let ls = log_similarity(test, train, lag, cfg.lambda, cfg.norm)?;
                    Some(Candidate {
                        train_id: train.instance_id.clone(),
                        lag,
                        log_similarity: ls,
                        rul: candidate_rul(train, test, lag)?,
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Shifts a curve back in time so its series ends at `len`, dropping the
/// earliest values that would fall before the original start.
fn shorten_to(curve: &HiCurve, len: usize) -> HiCurve {
    let shift = curve.total_len.saturating_sub(len);
    let values: Vec<f64> = curve
        .values
        .iter()
        .enumerate()
        .filter(|(j, _)| curve.time_of(*j) >= curve.start + shift)
        .map(|(_, v)| *v)
        .collect();
    let first = curve
        .values
        .iter()
        .enumerate()
        .position(|(j, _)| curve.time_of(j) >= curve.start + shift)
        .map_or(curve.start, |j| curve.time_of(j) - shift);
    HiCurve {
        instance_id: curve.instance_id.clone(),
        start: first,
        stride: curve.stride,
        values,
        total_len: len,
    }
}

/// Similarity-weighted mean of candidate lives over all admissible
/// `(train curve, lag)` pairs whose similarity is at least `alpha` times the
/// best one, clipped to `[0, r_max]`.
///
/// If no pair is admissible because the test series outlasts the library,
/// the test curve is shortened (earliest points dropped) to end one step
/// before the longest training life and matched again. If that also fails,
/// the estimate is 0, the terminal life of every library curve. Both paths
/// set `fallback_used`.
pub fn estimate_rul(test: &HiCurve, lib: &CurveLibrary, cfg: &MatchConfig) -> Result<RulEstimate> {
    cfg.validate()?;
    if lib.curves.is_empty() {
        return Err(Error::InvalidState("curve library is empty".into()));
    }
    let mut pairs = enumerate_pairs(test, lib, cfg);
    let mut fallback_used = false;
    if pairs.is_empty() {
        fallback_used = true;
        let max_len = lib.max_len();
        if max_len >= 2 && test.total_len > max_len - 1 {
            pairs = enumerate_pairs(&shorten_to(test, max_len - 1), lib, cfg);
        }
        if pairs.is_empty() {
            return Ok(RulEstimate {
                value: 0.0,
                candidates: Vec::new(),
                fallback_used,
            });
        }
    }

    let (value, candidates) = combine_candidates(pairs, cfg.alpha, cfg.r_max);
    Ok(RulEstimate {
        value,
        candidates,
        fallback_used,
    })
}

/// Admits the pairs whose similarity is at least `alpha` times the best and
/// returns their similarity-weighted mean RUL, clipped to `[0, r_max]`,
/// with the admitted pairs. `pairs` must be non-empty.
pub fn combine_candidates(pairs: Vec<Candidate>, alpha: f64, r_max: f64) -> (f64, Vec<Candidate>) {
    let best = pairs
        .iter()
        .map(|c| c.log_similarity)
        .fold(f64::NEG_INFINITY, f64::max);
    let cutoff = alpha.ln() + best;
    let admitted: Vec<Candidate> = pairs
        .into_iter()
        .filter(|c| c.log_similarity >= cutoff)
        .collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for c in &admitted {
        let w = (c.log_similarity - best).exp();
        num += w * c.rul;
        den += w;
    }
    ((num / den).clamp(0.0, r_max), admitted)
}

/// One row of a RUL report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulRow {
    pub instance: String,
    /// `None` when the instance was too short to score.
    pub estimate: Option<f64>,
    pub actual: Option<f64>,
    pub fallback_used: bool,
    pub n_candidates: usize,
}

impl RulRow {
    pub fn error(&self) -> Option<f64> {
        Some(self.estimate? - self.actual?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `instance,estimate,actual,error,fallback_used,n_candidates`.
pub fn write_rul_report<W: Write>(writer: W, rows: &[RulRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["instance", "estimate", "actual", "error", "fallback_used", "n_candidates"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.instance.clone(),
            opt(r.estimate),
            opt(r.actual),
            opt(r.error()),
            r.fallback_used.to_string(),
            r.n_candidates.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rul_report<R: Read>(reader: R) -> Result<Vec<RulRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("report lacks a `{name}` column")))
    };
    let (ci, ce, ca) = (col("instance")?, col("estimate")?, col("actual")?);
    let cf = col("fallback_used").ok();
    let cn = col("n_candidates").ok();
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = n + 2;
        let num = |i: usize| -> Result<Option<f64>> {
            let s = rec.get(i).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                line,
                msg: format!("not a number: {s:?}"),
            })
        };
        rows.push(RulRow {
            instance: rec.get(ci).unwrap_or("").to_string(),
            estimate: num(ce)?,
            actual: num(ca)?,
            fallback_used: cf.and_then(|i| rec.get(i)).is_some_and(|s| s.trim() == "true"),
            n_candidates: cn
                .and_then(|i| rec.get(i))
                .and_then(|s| s.trim().parse().ok())
                .unwrap_or(0),
        });
    }
    Ok(rows)
}
