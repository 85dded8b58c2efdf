use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor history of one machine instance.
///
/// `timestamps[0]` is 0 and timestamps strictly increase. `present[t][j]` is
/// false where sensor `j` was not observed at step `t`; the matching reading
/// is kept but never interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivariateSeries {
    pub instance_id: String,
    timestamps: Vec<f64>,
    readings: Vec<Vec<f64>>,
    present: Vec<Vec<bool>>,
}

impl MultivariateSeries {
    pub fn new(
        instance_id: impl Into<String>,
        timestamps: Vec<f64>,
        readings: Vec<Vec<f64>>,
        present: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let instance_id = instance_id.into();
        let len = timestamps.len();
        if len == 0 {
            return Err(Error::invalid(format!("series {instance_id} is empty")));
        }
        if readings.len() != len || present.len() != len {
            return Err(Error::invalid(format!(
                "series {instance_id}: timestamps, readings and flags differ in length"
            )));
        }
        let dim = readings[0].len();
        if readings.iter().any(|r| r.len() != dim) || present.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid(format!(
                "series {instance_id}: inconsistent sensor count"
            )));
        }
        if timestamps[0] != 0.0 {
            return Err(Error::invalid(format!(
                "series {instance_id}: first timestamp must be 0"
            )));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!(
                "series {instance_id}: timestamps must strictly increase"
            )));
        }
        for (row, flags) in readings.iter().zip(&present) {
            if row.iter().zip(flags).any(|(v, &p)| p && !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "series {instance_id}: non-finite present reading"
                )));
            }
        }
        Ok(MultivariateSeries {
            instance_id,
            timestamps,
            readings,
            present,
        })
    }

    /// Series with every reading present.
    pub fn fully_observed(
        instance_id: impl Into<String>,
        timestamps: Vec<f64>,
        readings: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let present = readings.iter().map(|r| vec![true; r.len()]).collect();
        Self::new(instance_id, timestamps, readings, present)
    }

    /// Unit-spaced timestamps 0, 1, 2, ….
    pub fn with_unit_steps(instance_id: impl Into<String>, readings: Vec<Vec<f64>>) -> Result<Self> {
        let ts = (0..readings.len()).map(|t| t as f64).collect();
        Self::fully_observed(instance_id, ts, readings)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.readings[0].len()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn readings(&self) -> &[Vec<f64>] {
        &self.readings
    }

    pub fn present(&self) -> &[Vec<bool>] {
        &self.present
    }

    pub fn is_present(&self, t: usize, j: usize) -> bool {
        self.present[t][j]
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = self.len() * self.dim();
        let missing = self.present.iter().flatten().filter(|&&p| !p).count();
        missing as f64 / total as f64
    }

    /// Applies `f` to every present reading, leaving missing slots and
    /// timestamps untouched.
    pub fn map_present(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let readings = self
            .readings
            .iter()
            .enumerate()
            .map(|(t, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| if self.present[t][j] { f(t, j, v) } else { v })
                    .collect()
            })
            .collect();
        MultivariateSeries {
            instance_id: self.instance_id.clone(),
            timestamps: self.timestamps.clone(),
            readings,
            present: self.present.clone(),
        }
    }

    /// Replaces readings and flags with new rows of (possibly) different
    /// dimension, keeping id and timestamps.
    pub fn with_rows(&self, readings: Vec<Vec<f64>>, present: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(
            self.instance_id.clone(),
            self.timestamps.clone(),
            readings,
            present,
        )
    }

    /// Prefix of length `t`; the remaining life of the result is `len() - t`
    /// when `self` is a run-to-failure instance.
    pub fn truncate_at(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.len() {
            return Err(Error::invalid(format!(
                "truncation point {t} outside 1..={}",
                self.len()
            )));
        }
        Ok(MultivariateSeries {
            instance_id: self.instance_id.clone(),
            timestamps: self.timestamps[..t].to_vec(),
            readings: self.readings[..t].to_vec(),
            present: self.present[..t].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> MultivariateSeries {
        MultivariateSeries::with_unit_steps("a", (0..n).map(|t| vec![t as f64]).collect()).unwrap()
    }

    #[test]
    fn validates_timestamps() {
        let r = vec![vec![1.0], vec![2.0]];
        assert!(MultivariateSeries::fully_observed("x", vec![0.0, 0.0], r.clone()).is_err());
        assert!(MultivariateSeries::fully_observed("x", vec![1.0, 2.0], r.clone()).is_err());
        assert!(MultivariateSeries::fully_observed("x", vec![0.0, 0.5], r).is_ok());
        assert!(MultivariateSeries::fully_observed("x", vec![], vec![]).is_err());
    }

    #[test]
    fn missing_reading_may_be_nan() {
        let s = MultivariateSeries::new(
            "m",
            vec![0.0, 1.0],
            vec![vec![f64::NAN], vec![1.0]],
            vec![vec![false], vec![true]],
        );
        assert!(s.is_ok());
    }

    #[test]
    fn truncation() {
        let s = ramp(192);
        let p = s.truncate_at(150).unwrap();
        assert_eq!(p.len(), 150);
        assert_eq!(s.len() - p.len(), 42);
        assert_eq!(s.truncate_at(192).unwrap(), s);
        assert!(s.truncate_at(0).is_err());
        assert!(s.truncate_at(193).is_err());
    }
}
