//! User–user similarity graph and its symmetric normalisation.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::sparse::Csr;

pub const DEFAULT_TOP_K: usize = 50;

/// Similarity graph `A` (zero diagonal) and `Ã = D^{-1/2}(A + I)D^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGraph {
    pub adjacency: Csr,
    pub normalized: Csr,
    /// Row sums of `A + I`.
    pub degree: Vec<f64>,
}

impl UserGraph {
    pub fn build(x: &Csr, top_k: Option<usize>) -> Self {
        let adjacency = build_adjacency(x, top_k);
        let (normalized, degree) = normalize_adjacency(&adjacency);
        UserGraph {
            adjacency,
            normalized,
            degree,
        }
    }

    pub fn n_users(&self) -> usize {
        self.adjacency.n_rows()
    }
}

/// `a_uv = max(x_u · x_v, 0)` off the diagonal, zero on it. With `top_k`,
/// each row keeps its `top_k` largest entries and the result is
/// re-symmetrised by `max(a_uv, a_vu)`.
pub fn build_adjacency(x: &Csr, top_k: Option<usize>) -> Csr {
    let n = x.n_rows();
    let xt = x.transpose();
    let rows: Vec<Vec<(u32, f64)>> = crate::par::map_rows(n, |u| {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, xui) in x.row_iter(u) {
            for (v, xvi) in xt.row_iter(i) {
                if v != u {
                    *acc.entry(v).or_insert(0.0) += xui * xvi;
                }
            }
        }
        let mut row: Vec<(u32, f64)> = acc
            .into_iter()
            .map(|(v, s)| (v as u32, s.max(0.0)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        if let Some(k) = top_k {
            if row.len() > k {
                row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                row.truncate(k);
            }
        }
        row
    });
    if top_k.is_none() {
        return Csr::from_rows(n, rows);
    }
    let mut sym: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); n];
    for (u, row) in rows.into_iter().enumerate() {
        for (v, s) in row {
            for (a, b) in [(u, v), (v as usize, u as u32)] {
                let e = sym[a].entry(b).or_insert(0.0);
                *e = e.max(s);
            }
        }
    }
    Csr::from_rows(n, sym.into_iter().map(|r| r.into_iter().collect()).collect())
}

/// Returns `Ã` and the degree vector of `A + I`.
pub fn normalize_adjacency(a: &Csr) -> (Csr, Vec<f64>) {
    let n = a.n_rows();
    let degree: Vec<f64> = (0..n)
        .map(|u| 1.0 + a.row(u).1.iter().sum::<f64>())
        .collect();
    let rows = (0..n)
        .map(|u| {
            let mut row: Vec<(u32, f64)> = a
                .row_iter(u)
                .map(|(v, w)| (v as u32, w / (degree[u] * degree[v]).sqrt()))
                .collect();
            row.push((u as u32, 1.0 / degree[u]));
            row
        })
        .collect();
    (Csr::from_rows(n, rows), degree)
}

/// Sparse–dense product `Ã · M`.
pub fn spmv(a_norm: &Csr, m: ArrayView2<f64>) -> Result<Array2<f64>> {
    a_norm.mul_dense(m)
}

/// Text histogram of stored entries per row, for debugging graph density.
pub fn nnz_histogram(a: &Csr) -> String {
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for u in 0..a.n_rows() {
        *hist.entry(a.row(u).0.len()).or_default() += 1;
    }
    let mut out = String::from("row_nnz\tusers\n");
    for (k, c) in hist {
        out.push_str(&format!("{k}\t{c}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    fn csr(rows: &[&[f64]]) -> Csr {
        let d = Array2::from_shape_vec(
            (rows.len(), rows[0].len()),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap();
        Csr::from_dense(d.view())
    }

    #[test]
    fn orthogonal_rows_have_no_edge() {
        let a = build_adjacency(&csr(&[&[1.0, 0.0], &[0.0, 1.0]]), None);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 0);
    }

    #[test]
    fn identical_unit_rows_have_unit_edge_and_zero_diagonal() {
        let a = build_adjacency(&csr(&[&[0.6, 0.8], &[0.6, 0.8]]), None);
        assert_abs_diff_eq!(a.get(0, 1), 1.0, epsilon = 1e-12);
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn isolated_user_keeps_unit_self_loop() {
        let a = csr(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let (an, d) = normalize_adjacency(&a);
        assert_eq!(an.get(0, 0), 1.0);
        assert_eq!(d, vec![1.0, 1.0]);
    }

    #[test]
    fn two_connected_users_normalise_to_halves() {
        let a = csr(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let (an, d) = normalize_adjacency(&a);
        assert_eq!(d, vec![2.0, 2.0]);
        assert_eq!(an.to_dense(), array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn normalisation_identity_and_symmetry_on_random_graph() {
        let mut rng = crate::seeded_rng(7, 0);
        let n = 9;
        let x = Array2::from_shape_fn((n, 6), |_| {
            if rng.random_bool(0.5) {
                rng.random_range(0.1..1.0)
            } else {
                0.0
            }
        });
        let g = UserGraph::build(&Csr::from_dense(x.view()), Some(3));
        let a = g.adjacency.to_dense();
        let an = g.normalized.to_dense();
        for u in 0..n {
            assert_eq!(a[[u, u]], 0.0);
            let du: f64 = 1.0 + a.row(u).sum();
            assert_abs_diff_eq!(du, g.degree[u], epsilon = 1e-12);
            for v in 0..n {
                assert_eq!(a[[u, v]], a[[v, u]]);
                assert_eq!(an[[u, v]], an[[v, u]]);
                let dv = 1.0 + a.row(v).sum();
                let expect = (a[[u, v]] + if u == v { 1.0 } else { 0.0 }) / (du * dv).sqrt();
                assert_abs_diff_eq!(an[[u, v]], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn top_k_keeps_strongest_edges_symmetrically() {
        let x = csr(&[&[1.0, 0.0, 0.0], &[0.9, 0.1, 0.0], &[0.5, 0.5, 0.0], &[0.0, 0.2, 0.9]]);
        let full = build_adjacency(&x, None);
        let sparse = build_adjacency(&x, Some(1));
        for u in 0..4 {
            for v in 0..4 {
                assert_eq!(sparse.get(u, v), sparse.get(v, u));
                if sparse.contains(u, v) {
                    assert_eq!(sparse.get(u, v), full.get(u, v));
                }
            }
        }
        // every user keeps at least its own strongest neighbour
        for u in 0..4 {
            assert!(sparse.row(u).0.len() >= 1);
        }
    }

    #[test]
    fn spmv_identity_and_dense_oracle() {
        let id = Csr::from_dense(Array2::<f64>::eye(4).view());
        let m = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(spmv(&id, m.view()).unwrap(), m);

        let mut rng = crate::seeded_rng(11, 0);
        let dense = Array2::from_shape_fn((5, 5), |_| {
            if rng.random_bool(0.6) {
                rng.random_range(0.0..1.0)
            } else {
                0.0
            }
        });
        let m = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let got = spmv(&Csr::from_dense(dense.view()), m.view()).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut want = 0.0;
                for k in 0..5 {
                    want += dense[[i, k]] * m[[k, j]];
                }
                assert!((got[[i, j]] - want).abs() <= 1e-6 * want.abs().max(1.0));
            }
        }
        assert!(spmv(&id, Array2::zeros((3, 2)).view()).is_err());
    }
}
