//! Truncated spectral projection of a sparse rating matrix by subspace
//! iteration with a Rayleigh–Ritz step.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng as _;

use crate::sparse::Csr;

const SUBSPACE_ITERS: usize = 12;
const SPECTRAL_STREAM: u64 = 0x5bec;

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.nrows(), m.ncols(), m.as_slice().expect("standard layout"))
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn orthonormalize(m: &Array2<f64>) -> Array2<f64> {
    from_na(&to_na(m).qr().q())
}

/// Projects rows of `x` onto its top `r` right singular vectors, ordered by
/// decreasing singular value.
pub fn spectral_projection(x: &Csr, r: usize, seed: u64) -> Array2<f64> {
    let r = r.min(x.n_cols()).min(x.n_rows()).max(1);
    let mut rng = crate::seeded_rng(seed, SPECTRAL_STREAM);
    let mut v = Array2::from_shape_fn((x.n_cols(), r), |_| rng.random_range(-1.0..1.0));
    v = orthonormalize(&v);
    for _ in 0..SUBSPACE_ITERS {
        let xv = x.mul_dense(v.view()).expect("shapes agree");
        v = orthonormalize(&x.tmul_dense(xv.view()));
    }
    let xv = x.mul_dense(v.view()).expect("shapes agree");
    let gram = to_na(&xv.t().dot(&xv));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let rot = Array2::from_shape_fn((r, r), |(i, j)| eig.eigenvectors[(i, order[j])]);
    xv.dot(&rot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_norms_are_leading_singular_values() {
        // known spectrum: X = U diag(σ) Vᵀ with orthonormal U, V
        let mut rng = crate::seeded_rng(3, 0);
        let sigma = [10.0, 6.0, 3.0, 1.5, 0.7];
        let u = orthonormalize(&Array2::from_shape_fn((30, 5), |_| rng.random_range(-1.0..1.0)));
        let v = orthonormalize(&Array2::from_shape_fn((12, 5), |_| rng.random_range(-1.0..1.0)));
        let dense = (&u * &ndarray::arr1(&sigma)).dot(&v.t());
        let x = Csr::from_dense(dense.view());
        let proj = spectral_projection(&x, 4, 9);
        assert_eq!(proj.dim(), (30, 4));
        let sv = sigma;
        for (j, col) in proj.columns().into_iter().enumerate() {
            let norm = col.dot(&col).sqrt();
            assert!((norm - sv[j]).abs() < 1e-6 * sv[0], "column {j}: {norm} vs {}", sv[j]);
        }
        // projected columns are mutually orthogonal
        let gram = proj.t().dot(&proj);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(gram[[i, j]].abs() < 1e-8 * sv[0] * sv[0]);
                }
            }
        }
    }

    #[test]
    fn rank_is_clamped_to_matrix_size() {
        let x = Csr::from_dense(ndarray::array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]].view());
        assert_eq!(spectral_projection(&x, 32, 0).ncols(), 2);
    }
}
