//! Health-index curves from embeddings or reconstruction errors, plus the
//! linear-regression HI variants.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{csv_err, AugmentedWindow};
use crate::error::{Error, Result};
use crate::numerics::{dot, euclidean};
use crate::seq2seq::Seq2SeqModel;

/// Embeddings of one training instance, in window order.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEmbeddings {
    pub instance_id: String,
    /// Length T of the instance.
    pub total_len: usize,
    /// `(end_index, embedding)` pairs.
    pub embeddings: Vec<(usize, Vec<f64>)>,
}

/// Embeddings taken from the early, healthy part of every training instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalSet {
    pub embeddings: Vec<Vec<f64>>,
    /// `(instance_id, end_index)` for each embedding.
    pub sources: Vec<(String, usize)>,
    pub beta: f64,
    /// Instances that contributed nothing (no window ends inside the prefix).
    pub skipped: Vec<String>,
}

/// Last time index inside the first `beta` fraction of a length-`t` life.
pub fn normal_cutoff(total_len: usize, beta: f64) -> usize {
    // Guard against products like 0.25 * 200 landing a hair above 50.
    (beta * total_len as f64 - 1e-9).ceil().max(0.0) as usize
}

pub fn build_normal_set(train: &[InstanceEmbeddings], beta: f64) -> Result<NormalSet> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("normal fraction must be in (0, 1], got {beta}")));
    }
    let mut set = NormalSet {
        embeddings: Vec::new(),
        sources: Vec::new(),
        beta,
        skipped: Vec::new(),
    };
    for inst in train {
        let cutoff = normal_cutoff(inst.total_len, beta);
        let before = set.embeddings.len();
        for (end, z) in &inst.embeddings {
            if *end <= cutoff {
                set.embeddings.push(z.clone());
                set.sources.push((inst.instance_id.clone(), *end));
            }
        }
        if set.embeddings.len() == before {
            set.skipped.push(inst.instance_id.clone());
        }
    }
    if set.embeddings.is_empty() {
        return Err(Error::DegenerateData(format!(
            "no window ends within the first {:.0}% of any training instance",
            beta * 100.0
        )));
    }
    let c = set.embeddings[0].len();
    if set.embeddings.iter().any(|z| z.len() != c) {
        return Err(Error::invalid("embeddings of differing lengths"));
    }
    Ok(set)
}

impl NormalSet {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    /// Distance from `z` to its nearest normal embedding (0 = healthy).
    pub fn health_index(&self, z: &[f64]) -> Result<f64> {
        if self.embeddings.is_empty() {
            return Err(Error::InvalidState("normal set is empty".into()));
        }
        if z.len() != self.dim() {
            return Err(Error::invalid(format!(
                "embedding has length {}, normal set holds length {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(self
            .embeddings
            .iter()
            .map(|n| euclidean(z, n))
            .fold(f64::INFINITY, f64::min))
    }
}

/// Reconstruction error of a window, used directly as an HI.
pub fn recon_health_index(model: &Seq2SeqModel, window: &AugmentedWindow) -> Result<f64> {
    Ok(model.reconstruction_error(window)?.1)
}

/// How windows are turned into HI values.
#[derive(Clone, Copy)]
pub enum HiScorer<'a> {
    Embedding {
        model: &'a Seq2SeqModel,
        normal: &'a NormalSet,
    },
    Reconstruction {
        model: &'a Seq2SeqModel,
    },
}

impl HiScorer<'_> {
    pub fn score(&self, window: &AugmentedWindow) -> Result<f64> {
        match self {
            HiScorer::Embedding { model, normal } => normal.health_index(&model.embed(window)?),
            HiScorer::Reconstruction { model } => recon_health_index(model, window),
        }
    }
}

/// Time-ordered HI values for one instance. Value `j` belongs to time index
/// `start + j * stride` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiCurve {
    pub instance_id: String,
    pub start: usize,
    pub stride: usize,
    pub values: Vec<f64>,
    /// Length T of the underlying series.
    pub total_len: usize,
}

impl HiCurve {
    pub fn new(instance_id: impl Into<String>, start: usize, values: Vec<f64>, total_len: usize) -> Self {
        HiCurve {
            instance_id: instance_id.into(),
            start,
            stride: 1,
            values,
            total_len,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_of(&self, j: usize) -> usize {
        self.start + j * self.stride
    }

    /// Value at absolute time index `t`, if the curve has one.
    pub fn at(&self, t: usize) -> Option<f64> {
        if t < self.start || !(t - self.start).is_multiple_of(self.stride) {
            return None;
        }
        self.values.get((t - self.start) / self.stride).copied()
    }

    /// Prefix of the curve covering time indices `≤ t`, for a series
    /// truncated at `t`.
    pub fn truncate_at(&self, t: usize) -> HiCurve {
        let keep = self.values.iter().enumerate().take_while(|(j, _)| self.time_of(*j) <= t).count();
        HiCurve {
            instance_id: self.instance_id.clone(),
            start: self.start,
            stride: self.stride,
            values: self.values[..keep].to_vec(),
            total_len: t,
        }
    }
}

/// Scores each window; all windows must come from one instance, ordered by
/// end index with a constant spacing.
pub fn hi_curve(
    instance_id: &str,
    windows: &[AugmentedWindow],
    total_len: usize,
    scorer: HiScorer<'_>,
) -> Result<HiCurve> {
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "instance {instance_id} is shorter than the window"
        )));
    }
    let stride = if windows.len() > 1 {
        windows[1].end_index.saturating_sub(windows[0].end_index)
    } else {
        1
    };
    if stride == 0
        || windows
            .windows(2)
            .any(|p| p[1].end_index != p[0].end_index + stride)
    {
        return Err(Error::invalid("windows must be evenly spaced in time"));
    }
    let values: Vec<f64> = windows
        .par_iter()
        .map(|w| scorer.score(w))
        .collect::<Result<_>>()?;
    Ok(HiCurve {
        instance_id: instance_id.to_string(),
        start: windows[0].end_index,
        stride,
        values,
        total_len,
    })
}

/// Min-max scaling fitted on pooled training curves. Values outside the
/// training range map outside `[0, 1]`; nothing is clipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveScale {
    pub min: f64,
    pub max: f64,
}

impl CurveScale {
    pub fn fit(curves: &[HiCurve]) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in curves.iter().flat_map(|c| &c.values) {
            min = min.min(*v);
            max = max.max(*v);
        }
        if !min.is_finite() {
            return Err(Error::DegenerateData("no HI values to scale".into()));
        }
        if max <= min {
            return Err(Error::DegenerateData(format!(
                "all HI values equal {min}; cannot scale"
            )));
        }
        Ok(CurveScale { min, max })
    }

    pub fn apply_value(&self, h: f64) -> f64 {
        (h - self.min) / (self.max - self.min)
    }

    pub fn apply(&self, curve: &HiCurve) -> HiCurve {
        HiCurve {
            values: curve.values.iter().map(|&h| self.apply_value(h)).collect(),
            ..curve.clone()
        }
    }
}

/// Scales every curve with the pooled min and max of the set.
pub fn normalize_curves(curves: &[HiCurve]) -> Result<(Vec<HiCurve>, CurveScale)> {
    let scale = CurveScale::fit(curves)?;
    Ok((curves.iter().map(|c| scale.apply(c)).collect(), scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearTarget {
    /// Regress onto the scaled HI.
    Scaled,
    /// Regress onto the square of the scaled HI.
    Squared,
}

/// `h' = θᵀx + θ₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHiModel {
    pub theta: Vec<f64>,
    pub theta0: f64,
    pub target: LinearTarget,
}

/// Diagonal ridge added to the normal equations.
pub const OLS_RIDGE: f64 = 1e-8;

/// Least-squares fit of `targets` (already scaled; squared here for
/// [`LinearTarget::Squared`]) on the rows of `xs`.
pub fn fit_linear_hi(xs: &[Vec<f64>], targets: &[f64], target: LinearTarget) -> Result<LinearHiModel> {
    let n = xs.first().map_or(0, Vec::len);
    if xs.len() != targets.len() {
        return Err(Error::invalid("inputs and targets differ in length"));
    }
    if xs.len() < n + 1 {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot determine {} coefficients",
            xs.len(),
            n + 1
        )));
    }
    if xs.iter().any(|x| x.len() != n) {
        return Err(Error::invalid("input vectors of differing lengths"));
    }
    let y: Vec<f64> = match target {
        LinearTarget::Scaled => targets.to_vec(),
        LinearTarget::Squared => targets.iter().map(|h| h * h).collect(),
    };
    let design = DMatrix::from_fn(xs.len(), n + 1, |r, c| if c < n { xs[r][c] } else { 1.0 });
    let yv = DVector::from_vec(y);
    let mut gram = design.transpose() * &design;
    for i in 0..=n {
        gram[(i, i)] += OLS_RIDGE;
    }
    let rhs = design.transpose() * yv;
    let sol = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("normal equations are singular".into()))?,
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("least-squares solution is not finite".into()));
    }
    Ok(LinearHiModel {
        theta: sol.rows(0, n).iter().copied().collect(),
        theta0: sol[n],
        target,
    })
}

impl LinearHiModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.theta.len() {
            return Err(Error::invalid(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.theta.len()
            )));
        }
        Ok(dot(&self.theta, x) + self.theta0)
    }

    /// HI curve from per-step inputs, defined from time index 1.
    pub fn curve(&self, instance_id: &str, rows: &[Vec<f64>]) -> Result<HiCurve> {
        let values = rows.iter().map(|x| self.predict(x)).collect::<Result<_>>()?;
        Ok(HiCurve::new(instance_id, 1, values, rows.len()))
    }
}

pub fn predict_linear_hi(model: &LinearHiModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// Writes curves as `instance,t,hi` rows.
pub fn write_hi_curves_csv<W: Write>(writer: W, curves: &[HiCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["instance", "t", "hi"]).map_err(csv_err)?;
    for c in curves {
        for (j, v) in c.values.iter().enumerate() {
            w.write_record([c.instance_id.clone(), c.time_of(j).to_string(), v.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
