//! Dense linear algebra, seeded randomness, PCA and noise injection.

mod matrix;
mod noise;
mod pca;
mod rng;

pub use matrix::Matrix;
pub(crate) use matrix::{dot, euclidean};
pub use noise::add_gaussian_noise;
pub use pca::{fit_pca, PcaModel};
pub use rng::{mix_seed, RngState};
