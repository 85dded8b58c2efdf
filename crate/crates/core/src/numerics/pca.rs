//! Principal components via eigendecomposition of the covariance matrix.
//!
//! Covariance uses the population (1/N) convention, so `explained_variance`
//! equals the population variance of the data projected on each component.
//! Each component is sign-normalized so its largest-magnitude entry is
//! positive, which makes the basis reproducible across runs.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// n × p, orthonormal columns.
    pub basis: Matrix,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn n_components(&self) -> usize {
        self.basis.cols()
    }

    /// `basisᵀ · (x − mean)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "pca input has length {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let mut out = vec![0.0; self.n_components()];
        self.basis.add_transposed_matvec(&centered, &mut out);
        Ok(out)
    }

    /// `mean + basis · y`.
    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n_components() {
            return Err(Error::invalid("component vector has wrong length"));
        }
        let mut out = self.basis.matvec(y);
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o += m;
        }
        Ok(out)
    }
}

pub fn fit_pca(rows: &[Vec<f64>], p: usize) -> Result<PcaModel> {
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "pca needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("pca rows have inconsistent lengths"));
    }
    if p == 0 || p > n {
        return Err(Error::invalid(format!(
            "number of components {p} must be in 1..={n}"
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("pca rows contain non-finite values"));
    }

    let count = rows.len() as f64;
    let mut mean = vec![0.0; n];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let mut cov = DMatrix::<f64>::zeros(n, n);
    for r in rows {
        for i in 0..n {
            let di = r[i] - mean[i];
            for j in i..n {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = cov[(i, j)] / count;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut basis = Matrix::zeros(n, p);
    let mut explained_variance = Vec::with_capacity(p);
    for (k, &idx) in order.iter().take(p).enumerate() {
        let col = eig.eigenvectors.column(idx);
        let pivot = (0..n)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            basis[(i, k)] = sign * col[i];
        }
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }

    Ok(PcaModel {
        mean,
        basis,
        explained_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn random_rows(seed: u64, count: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = RngState::new(seed);
        let mix: Vec<f64> = (0..n * n).map(|_| rng.normal(0.0, 1.0)).collect();
        (0..count)
            .map(|_| {
                let z: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
                (0..n)
                    .map(|i| (0..n).map(|j| mix[i * n + j] * z[j]).sum::<f64>() + i as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn axis_aligned_variance() {
        let rows: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 6.0]
            .iter()
            .map(|&x| vec![x, 0.0, 0.0])
            .collect();
        let m = fit_pca(&rows, 1).unwrap();
        assert!((m.basis[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(m.basis[(1, 0)].abs() < 1e-12 && m.basis[(2, 0)].abs() < 1e-12);
        // population variance of {1,2,3,6}: mean 3, squares 4+1+0+9 = 14, /4
        assert!((m.explained_variance[0] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_cloud_has_diagonal_component() {
        let rows = vec![
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.0],
            vec![0.0, 0.0],
        ];
        let m = fit_pca(&rows, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.basis[(0, 0)] - h).abs() < 1e-12);
        assert!((m.basis[(1, 0)] - h).abs() < 1e-12);
    }

    #[test]
    fn apply_examples() {
        let rows = vec![vec![1.0, 1.0], vec![-1.0, -1.0]];
        let m = fit_pca(&rows, 1).unwrap();
        assert_eq!(m.mean, vec![0.0, 0.0]);
        assert!((m.apply(&[3.0, 1.0]).unwrap()[0] - 4.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(m.apply(&m.mean.clone()).unwrap()[0].abs() < 1e-15);
        assert!(m.apply(&[1.0]).is_err());

        let ident = PcaModel {
            mean: vec![0.0, 0.0],
            basis: Matrix::identity(2),
            explained_variance: vec![1.0, 1.0],
        };
        assert_eq!(ident.apply(&[3.0, -2.0]).unwrap(), vec![3.0, -2.0]);
    }

    #[test]
    fn full_rank_round_trip() {
        let rows = random_rows(3, 40, 4);
        let m = fit_pca(&rows, 4).unwrap();
        for r in &rows {
            let back = m.reconstruct(&m.apply(r).unwrap()).unwrap();
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            fit_pca(&[vec![1.0, 2.0]], 1),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            fit_pca(&[vec![1.0], vec![2.0]], 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn orthonormal_basis_and_projection_energy() {
        for seed in 0..10 {
            let rows = random_rows(seed, 60, 5);
            let m = fit_pca(&rows, 3).unwrap();
            let gram = m.basis.transpose().matmul(&m.basis).unwrap();
            assert!(gram.max_abs_diff(&Matrix::identity(3)) < 1e-8);
            assert!(m
                .explained_variance
                .windows(2)
                .all(|w| w[0] >= w[1]));
            let proj: Vec<Vec<f64>> = rows.iter().map(|r| m.apply(r).unwrap()).collect();
            for k in 0..3 {
                let var = proj.iter().map(|p| p[k] * p[k]).sum::<f64>() / rows.len() as f64;
                let ev = m.explained_variance[k];
                assert!((var - ev).abs() <= 1e-6 * ev.max(1e-12), "{var} vs {ev}");
            }
        }
    }
}
