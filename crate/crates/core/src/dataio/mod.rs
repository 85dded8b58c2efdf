//! Dataset parsing, standardization, reduction, windowing and missing-value
//! augmentation.

mod cmapss;
mod csvio;
mod downsample;
mod normalize;
mod preprocess;
mod series;
mod split;
mod window;

pub use cmapss::{parse_cmapss, parse_rul_file, CMAPSS_COLUMNS};
pub(crate) use csvio::csv_err;
pub use csvio::{read_series_csv, write_series_csv};
pub use downsample::downsample_daily;
pub use normalize::Normalizer;
pub use preprocess::{PreprocessConfig, Preprocessor};
pub use series::MultivariateSeries;
pub use split::{split_instances, truncated_instances, LabeledInstance};
pub use window::{build_mask_delta, make_windows, AugmentedWindow};

use std::path::Path;

use crate::error::Result;

/// Loads a dataset, choosing the generic CSV reader for `.csv` files and the
/// turbofan text reader otherwise.
pub fn load_series(path: &Path) -> Result<Vec<MultivariateSeries>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_series_csv(file)
    } else {
        parse_cmapss(file)
    }
}
