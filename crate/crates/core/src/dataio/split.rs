use super::MultivariateSeries;
use crate::error::{Error, Result};
use crate::numerics::RngState;

/// A test instance with its ground-truth remaining life.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub series: MultivariateSeries,
    pub rul: f64,
}

/// Random instance-level split; `train_fraction` of the instances (rounded)
/// go to the first list.
pub fn split_instances(
    series: &[MultivariateSeries],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<MultivariateSeries>, Vec<MultivariateSeries>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::invalid("train fraction must lie in [0, 1]"));
    }
    let mut idx: Vec<usize> = (0..series.len()).collect();
    RngState::new(seed).shuffle(&mut idx);
    let cut = (train_fraction * series.len() as f64).round() as usize;
    let (a, b) = idx.split_at(cut);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((
        a.iter().map(|&i| series[i].clone()).collect(),
        b.iter().map(|&i| series[i].clone()).collect(),
    ))
}

/// Truncates every run-to-failure instance at `per_instance` random points in
/// `[min_len, T]`, labelling each prefix with RUL `T − t`. Instance ids get a
/// `#k` suffix.
pub fn truncated_instances(
    series: &[MultivariateSeries],
    per_instance: usize,
    min_len: usize,
    seed: u64,
) -> Result<Vec<LabeledInstance>> {
    let rng = RngState::new(seed);
    let mut out = Vec::with_capacity(series.len() * per_instance);
    for (i, s) in series.iter().enumerate() {
        if s.len() < min_len.max(1) {
            continue;
        }
        let mut r = rng.derive(i as u64);
        for k in 0..per_instance {
            let t = r.int_range(min_len.max(1), s.len());
            let mut prefix = s.truncate_at(t)?;
            prefix.instance_id = format!("{}#{}", s.instance_id, k + 1);
            out.push(LabeledInstance {
                series: prefix,
                rul: (s.len() - t) as f64,
            });
        }
    }
    Ok(out)
}
