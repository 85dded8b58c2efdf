use serde::{Deserialize, Serialize};

use super::MultivariateSeries;
use crate::error::{Error, Result};

/// Per-sensor z-score statistics fitted on training data. Uses the
/// population (1/N) standard deviation over present readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Indices of near-constant sensors excluded from the output.
    pub dropped: Vec<usize>,
}

impl Normalizer {
    pub fn fit(train: &[MultivariateSeries], constant_tol: f64) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::InsufficientData("empty training set".into()))?;
        let n = first.dim();
        if train.iter().any(|s| s.dim() != n) {
            return Err(Error::invalid("training series differ in dimension"));
        }
        let mut count = vec![0usize; n];
        let mut sum = vec![0.0; n];
        for s in train {
            for (row, flags) in s.readings().iter().zip(s.present()) {
                for j in 0..n {
                    if flags[j] {
                        count[j] += 1;
                        sum[j] += row[j];
                    }
                }
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let mut sq = vec![0.0; n];
        for s in train {
            for (row, flags) in s.readings().iter().zip(s.present()) {
                for j in 0..n {
                    if flags[j] {
                        sq[j] += (row[j] - mean[j]).powi(2);
                    }
                }
            }
        }
        let std: Vec<f64> = sq
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 })
            .collect();
        let dropped: Vec<usize> = (0..n)
            .filter(|&j| count[j] == 0 || std[j] <= constant_tol)
            .collect();
        if dropped.len() == n {
            return Err(Error::DegenerateData(
                "every sensor is near-constant on the training data".into(),
            ));
        }
        Ok(Normalizer { mean, std, dropped })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn retained(&self) -> Vec<usize> {
        (0..self.input_dim())
            .filter(|j| !self.dropped.contains(j))
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        self.input_dim() - self.dropped.len()
    }

    /// Drops excluded sensors and standardizes the rest. Missing readings
    /// stay flagged and are filled with 0, the standardized mean.
    pub fn apply(&self, series: &MultivariateSeries) -> Result<MultivariateSeries> {
        if series.dim() != self.input_dim() {
            return Err(Error::invalid(format!(
                "series {} has {} sensors, normalizer expects {}",
                series.instance_id,
                series.dim(),
                self.input_dim()
            )));
        }
        let keep = self.retained();
        let mut rows = Vec::with_capacity(series.len());
        let mut flags = Vec::with_capacity(series.len());
        for (row, pres) in series.readings().iter().zip(series.present()) {
            rows.push(
                keep.iter()
                    .map(|&j| {
                        if pres[j] {
                            (row[j] - self.mean[j]) / self.std[j]
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
            flags.push(keep.iter().map(|&j| pres[j]).collect());
        }
        series.with_rows(rows, flags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sensor(vals: &[(f64, f64)]) -> MultivariateSeries {
        MultivariateSeries::with_unit_steps("a", vals.iter().map(|&(a, b)| vec![a, b]).collect())
            .unwrap()
    }

    #[test]
    fn constant_sensor_dropped() {
        let s = two_sensor(&[(0.0, 5.0), (2.0, 5.0)]);
        let n = Normalizer::fit(std::slice::from_ref(&s), 1e-9).unwrap();
        assert_eq!(n.dropped, vec![1]);
        assert_eq!(n.mean[0], 1.0);
        assert_eq!(n.std[0], 1.0);
        let out = n.apply(&s).unwrap();
        assert_eq!(out.dim(), 1);
        assert_eq!(out.readings(), &[vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn all_constant_is_degenerate() {
        let s = two_sensor(&[(1.0, 5.0), (1.0, 5.0)]);
        assert!(matches!(
            Normalizer::fit(&[s], 1e-9),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn standardized_train_has_zero_mean_unit_std() {
        let a = two_sensor(&[(1.0, 3.0), (4.0, -2.0), (9.0, 0.5)]);
        let b = two_sensor(&[(2.0, 8.0), (-1.0, 1.0)]);
        let n = Normalizer::fit(&[a.clone(), b.clone()], 1e-9).unwrap();
        let vals: Vec<Vec<f64>> = [a, b]
            .iter()
            .flat_map(|s| n.apply(s).unwrap().readings().to_vec())
            .collect();
        for j in 0..2 {
            let m = vals.iter().map(|r| r[j]).sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn statistics_ignore_missing() {
        let s = MultivariateSeries::new(
            "m",
            vec![0.0, 1.0, 2.0],
            vec![vec![0.0], vec![100.0], vec![2.0]],
            vec![vec![true], vec![false], vec![true]],
        )
        .unwrap();
        let n = Normalizer::fit(std::slice::from_ref(&s), 1e-9).unwrap();
        assert_eq!((n.mean[0], n.std[0]), (1.0, 1.0));
        let out = n.apply(&s).unwrap();
        assert_eq!(out.readings()[1][0], 0.0);
        assert!(!out.is_present(1, 0));
    }
}
