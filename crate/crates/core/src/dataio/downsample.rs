use super::MultivariateSeries;
use crate::error::{Error, Result};

/// Aggregates readings into fixed-duration buckets. For every raw sensor `j`
/// the output carries four derived sensors at indices `4j..4j+4`:
/// minimum, maximum, mean and population standard deviation over the
/// present readings in the bucket. A sensor with no readings in a bucket
/// yields four missing derived values. Only buckets containing at least one
/// row are emitted; their timestamp is the bucket's start offset.
pub fn downsample_daily(series: &MultivariateSeries, bucket: f64) -> Result<MultivariateSeries> {
    if !(bucket > 0.0) || !bucket.is_finite() {
        return Err(Error::invalid(format!("bucket duration must be > 0, got {bucket}")));
    }
    let n = series.dim();
    let mut timestamps = Vec::new();
    let mut rows = Vec::new();
    let mut flags = Vec::new();

    let mut t = 0;
    while t < series.len() {
        let b = (series.timestamps()[t] / bucket).floor();
        let mut end = t;
        while end < series.len() && (series.timestamps()[end] / bucket).floor() == b {
            end += 1;
        }
        let mut row = Vec::with_capacity(4 * n);
        let mut pres = Vec::with_capacity(4 * n);
        for j in 0..n {
            let vals: Vec<f64> = (t..end)
                .filter(|&i| series.is_present(i, j))
                .map(|i| series.readings()[i][j])
                .collect();
            if vals.is_empty() {
                row.extend([0.0; 4]);
                pres.extend([false; 4]);
                continue;
            }
            let count = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / count;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.extend([min, max, mean, var.sqrt()]);
            pres.extend([true; 4]);
        }
        timestamps.push(b * bucket);
        rows.push(row);
        flags.push(pres);
        t = end;
    }
    MultivariateSeries::new(series.instance_id.clone(), timestamps, rows, flags)
}
