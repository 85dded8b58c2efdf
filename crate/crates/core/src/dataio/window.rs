use serde::{Deserialize, Serialize};

use super::MultivariateSeries;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Fixed-length subsequence with its masking and delta channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedWindow {
    /// w × k readings; missing entries hold the fill value 0.
    pub values: Matrix,
    /// w × k, 1 where observed.
    pub mask: Matrix,
    /// w × k elapsed time since the last observation of each sensor.
    pub delta: Matrix,
    /// 1-based time index of the last row.
    pub end_index: usize,
}

impl AugmentedWindow {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Builds a fully observed window with unit-spaced timestamps.
    pub fn from_values(values: Matrix, end_index: usize) -> Self {
        let (w, k) = values.shape();
        let mut mask = Matrix::zeros(w, k);
        mask.fill(1.0);
        let mut delta = Matrix::zeros(w, k);
        for t in 1..w {
            delta.row_mut(t).iter_mut().for_each(|d| *d = 1.0);
        }
        AugmentedWindow {
            values,
            mask,
            delta,
            end_index,
        }
    }
}

/// Masking and delta channels of a series, each `T × n`.
pub fn build_mask_delta(series: &MultivariateSeries) -> (Matrix, Matrix) {
    let (len, n) = (series.len(), series.dim());
    let y = series.timestamps();
    let mut mask = Matrix::zeros(len, n);
    let mut delta = Matrix::zeros(len, n);
    for t in 0..len {
        for j in 0..n {
            if series.is_present(t, j) {
                mask[(t, j)] = 1.0;
            }
            if t > 0 {
                let gap = y[t] - y[t - 1];
                delta[(t, j)] = if series.is_present(t - 1, j) {
                    gap
                } else {
                    gap + delta[(t - 1, j)]
                };
            }
        }
    }
    (mask, delta)
}

/// Windows of length `w` ending at t = w, w + stride, … ≤ T. Returns an empty
/// list when the series is shorter than `w`.
pub fn make_windows(
    series: &MultivariateSeries,
    w: usize,
    stride: usize,
) -> Result<Vec<AugmentedWindow>> {
    if w == 0 || stride == 0 {
        return Err(Error::invalid("window length and stride must be >= 1"));
    }
    if series.len() < w {
        return Ok(Vec::new());
    }
    let n = series.dim();
    let (mask, delta) = build_mask_delta(series);
    let mut out = Vec::new();
    let mut end = w;
    while end <= series.len() {
        let start = end - w;
        let mut values = Matrix::zeros(w, n);
        let mut m = Matrix::zeros(w, n);
        let mut d = Matrix::zeros(w, n);
        for (r, t) in (start..end).enumerate() {
            for j in 0..n {
                if series.is_present(t, j) {
                    values[(r, j)] = series.readings()[t][j];
                }
            }
            m.row_mut(r).copy_from_slice(mask.row(t));
            d.row_mut(r).copy_from_slice(delta.row(t));
        }
        out.push(AugmentedWindow {
            values,
            mask: m,
            delta: d,
            end_index: end,
        });
        end += stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(len: usize) -> MultivariateSeries {
        MultivariateSeries::with_unit_steps("r", (0..len).map(|t| vec![t as f64, -(t as f64)]).collect())
            .unwrap()
    }

    #[test]
    fn window_counts() {
        let w = make_windows(&ramp(100), 30, 1).unwrap();
        assert_eq!(w.len(), 71);
        assert_eq!(w[0].end_index, 30);
        assert_eq!(w[70].end_index, 100);
        assert_eq!(make_windows(&ramp(30), 30, 1).unwrap().len(), 1);
        let ends: Vec<usize> = make_windows(&ramp(36), 30, 3)
            .unwrap()
            .iter()
            .map(|w| w.end_index)
            .collect();
        assert_eq!(ends, vec![30, 33, 36]);
        assert!(make_windows(&ramp(10), 30, 1).unwrap().is_empty());
        assert!(make_windows(&ramp(10), 0, 1).is_err());
    }

    #[test]
    fn delta_all_present() {
        let s = MultivariateSeries::with_unit_steps("a", vec![vec![1.0]; 3]).unwrap();
        let (m, d) = build_mask_delta(&s);
        assert_eq!(d.column(0), vec![0.0, 1.0, 1.0]);
        assert_eq!(m.column(0), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn delta_accumulates_over_missing() {
        let s = MultivariateSeries::new(
            "a",
            vec![0.0, 1.0, 2.0],
            vec![vec![1.0, 1.0], vec![9.0, 1.0], vec![1.0, 1.0]],
            vec![vec![true, true], vec![false, true], vec![true, true]],
        )
        .unwrap();
        let (m, d) = build_mask_delta(&s);
        assert_eq!(m.column(0), vec![1.0, 0.0, 1.0]);
        assert_eq!(d.column(0), vec![0.0, 1.0, 2.0]);
        assert_eq!(d.column(1), vec![0.0, 1.0, 1.0]);
        let w = make_windows(&s, 3, 1).unwrap();
        assert_eq!(w[0].values[(1, 0)], 0.0);
    }

    fn irregular() -> impl Strategy<Value = MultivariateSeries> {
        (1usize..40, 1usize..4).prop_flat_map(|(len, n)| {
            (
                prop::collection::vec(0.1f64..5.0, len),
                prop::collection::vec(prop::collection::vec(-10.0f64..10.0, n), len),
                prop::collection::vec(prop::collection::vec(any::<bool>(), n), len),
            )
                .prop_map(|(gaps, rows, flags)| {
                    let mut ts = vec![0.0];
                    for g in &gaps[1..] {
                        ts.push(ts.last().unwrap() + g);
                    }
                    MultivariateSeries::new("p", ts, rows, flags).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn telescoping_delta_when_fully_present(len in 2usize..30, seed in any::<u64>()) {
            let mut rng = crate::numerics::RngState::new(seed);
            let mut ts = vec![0.0];
            for _ in 1..len {
                ts.push(ts.last().unwrap() + rng.uniform_range(0.1, 3.0));
            }
            let s = MultivariateSeries::fully_observed("t", ts.clone(), vec![vec![0.0; 2]; len]).unwrap();
            let (_, d) = build_mask_delta(&s);
            for t in 1..len {
                prop_assert_eq!(d[(t, 0)], ts[t] - ts[t - 1]);
            }
        }

        #[test]
        fn mask_matches_flags_and_values_filled(s in irregular()) {
            let (m, d) = build_mask_delta(&s);
            for t in 0..s.len() {
                for j in 0..s.dim() {
                    prop_assert_eq!(m[(t, j)] == 1.0, s.is_present(t, j));
                    prop_assert!(d[(t, j)] >= 0.0);
                }
            }
            for win in make_windows(&s, 1, 1).unwrap() {
                let t = win.end_index - 1;
                for j in 0..s.dim() {
                    if !s.is_present(t, j) {
                        prop_assert_eq!(win.values[(0, j)], 0.0);
                    }
                }
            }
        }

        #[test]
        fn non_overlapping_windows_rebuild_prefix(len in 1usize..60, w in 1usize..12) {
            let s = ramp(len);
            let wins = make_windows(&s, w, w).unwrap();
            let rebuilt: Vec<f64> = wins.iter().flat_map(|x| x.values.as_slice().to_vec()).collect();
            let prefix: Vec<f64> = s.readings()[..wins.len() * w].iter().flatten().copied().collect();
            prop_assert_eq!(rebuilt, prefix);
        }
    }
}
