use serde::{Deserialize, Serialize};

use super::{downsample_daily, MultivariateSeries, Normalizer};
use crate::error::{Error, Result};
use crate::numerics::{fit_pca, PcaModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Aggregate raw readings into buckets of this duration first.
    pub bucket: Option<f64>,
    /// Number of principal components; `None` skips PCA.
    pub components: Option<usize>,
    pub constant_tol: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            bucket: None,
            components: Some(2),
            constant_tol: 1e-6,
        }
    }
}

/// Fitted chain: optional bucketing → drop near-constant sensors → z-score →
/// optional PCA.
///
/// With PCA, a projected component counts as observed at a step when at least
/// one input sensor was observed there; missing inputs enter the projection
/// at their fill value 0 (the training mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub bucket: Option<f64>,
    pub normalizer: Normalizer,
    pub pca: Option<PcaModel>,
}

impl Preprocessor {
    pub fn fit(train: &[MultivariateSeries], cfg: &PreprocessConfig) -> Result<Self> {
        let bucketed = bucket_all(train, cfg.bucket)?;
        let normalizer = Normalizer::fit(&bucketed, cfg.constant_tol)?;
        let pca = match cfg.components {
            None => None,
            Some(p) => {
                let normed = bucketed
                    .iter()
                    .map(|s| normalizer.apply(s))
                    .collect::<Result<Vec<_>>>()?;
                let complete: Vec<Vec<f64>> = normed
                    .iter()
                    .flat_map(|s| {
                        s.readings()
                            .iter()
                            .zip(s.present())
                            .filter(|(_, f)| f.iter().all(|&x| x))
                            .map(|(r, _)| r.clone())
                    })
                    .collect();
                let rows = if complete.len() >= 2 {
                    complete
                } else {
                    normed.iter().flat_map(|s| s.readings().to_vec()).collect()
                };
                let dim = normalizer.output_dim();
                if p > dim {
                    return Err(Error::Config(format!(
                        "p = {p} exceeds the {dim} retained sensors"
                    )));
                }
                Some(fit_pca(&rows, p)?)
            }
        };
        Ok(Preprocessor {
            bucket: cfg.bucket,
            normalizer,
            pca,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.normalizer.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.pca
            .as_ref()
            .map_or(self.normalizer.output_dim(), PcaModel::n_components)
    }

    /// Raw series → bucketed series, the stage at which `input_dim` applies.
    pub fn bucket(&self, series: &MultivariateSeries) -> Result<MultivariateSeries> {
        match self.bucket {
            Some(b) => downsample_daily(series, b),
            None => Ok(series.clone()),
        }
    }

    /// Standardized (pre-PCA) representation of an already-bucketed series.
    pub fn standardize(&self, bucketed: &MultivariateSeries) -> Result<MultivariateSeries> {
        self.normalizer.apply(bucketed)
    }

    /// Projects a standardized series; identity without PCA.
    pub fn project(&self, standardized: &MultivariateSeries) -> Result<MultivariateSeries> {
        let Some(pca) = &self.pca else {
            return Ok(standardized.clone());
        };
        let mut rows = Vec::with_capacity(standardized.len());
        let mut flags = Vec::with_capacity(standardized.len());
        for (r, f) in standardized.readings().iter().zip(standardized.present()) {
            rows.push(pca.apply(r)?);
            let any = f.iter().any(|&x| x);
            flags.push(vec![any; pca.n_components()]);
        }
        standardized.with_rows(rows, flags)
    }

    pub fn transform(&self, raw: &MultivariateSeries) -> Result<MultivariateSeries> {
        self.project(&self.standardize(&self.bucket(raw)?)?)
    }
}

fn bucket_all(train: &[MultivariateSeries], bucket: Option<f64>) -> Result<Vec<MultivariateSeries>> {
    match bucket {
        Some(b) => train.iter().map(|s| downsample_daily(s, b)).collect(),
        None => Ok(train.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(id: &str, len: usize, phase: f64) -> MultivariateSeries {
        let rows = (0..len)
            .map(|t| {
                let x = (t as f64 * 0.3 + phase).sin();
                vec![x, 2.0 * x + 0.01 * (t as f64).cos(), 7.0, -x]
            })
            .collect();
        MultivariateSeries::with_unit_steps(id, rows).unwrap()
    }

    #[test]
    fn chain_drops_constant_and_reduces() {
        let train = vec![series("a", 50, 0.0), series("b", 40, 1.0)];
        let pre = Preprocessor::fit(&train, &PreprocessConfig::default()).unwrap();
        assert_eq!(pre.normalizer.dropped, vec![2]);
        assert_eq!(pre.output_dim(), 2);
        let out = pre.transform(&train[0]).unwrap();
        assert_eq!(out.dim(), 2);
        assert_eq!(out.len(), 50);
    }

    #[test]
    fn no_pca_keeps_retained_dims() {
        let train = vec![series("a", 30, 0.0)];
        let cfg = PreprocessConfig {
            components: None,
            ..Default::default()
        };
        let pre = Preprocessor::fit(&train, &cfg).unwrap();
        assert_eq!(pre.transform(&train[0]).unwrap().dim(), 3);
    }

    #[test]
    fn too_many_components_is_config_error() {
        let train = vec![series("a", 30, 0.0)];
        let cfg = PreprocessConfig {
            components: Some(4),
            ..Default::default()
        };
        assert!(matches!(Preprocessor::fit(&train, &cfg), Err(Error::Config(_))));
    }
}
