//! Classical grouping baselines: Pearson farthest-first seeding, K-Means on
//! raw rating rows, and a diagonal GMM on a spectral projection.

use web_time::Instant;

use crate::cluster::{kmeans, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::formation::GroupAssignment;
use crate::sparse::Csr;

pub const GMM_DIMS: usize = 32;
pub const GMM_MAX_ITER: usize = 100;
pub const GMM_VAR_FLOOR: f64 = 1e-6;

/// Pearson correlation over co-rated items; 0 with fewer than two co-rated
/// items or zero variance on either side.
pub fn pearson(x: &Csr, u: usize, v: usize) -> f64 {
    let (cu, vu) = x.row(u);
    let (cv, vv) = x.row(v);
    let (mut i, mut j) = (0, 0);
    let mut pairs = Vec::new();
    while i < cu.len() && j < cv.len() {
        match cu[i].cmp(&cv[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                pairs.push((vu[i], vv[j]));
                i += 1;
                j += 1;
            }
        }
    }
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    if va <= 1e-24 || vb <= 1e-24 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Farthest-first seeding on `1 − ρ`, then every other user joins the seed
/// with the highest correlation (ties to the earlier seed).
pub fn baseline_similarity_groups(x: &Csr, k: usize, seed: u64) -> Result<GroupAssignment> {
    let n = x.n_rows();
    check_k(k, n)?;
    let start = Instant::now();
    let mut rng = crate::seeded_rng(seed, 0x51);
    let first = rand::Rng::random_range(&mut rng, 0..n);
    let mut seeds = vec![first];
    let mut is_seed = vec![false; n];
    is_seed[first] = true;
    let mut min_dis: Vec<f64> = (0..n).map(|u| 1.0 - pearson(x, u, first)).collect();
    while seeds.len() < k {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for u in 0..n {
            if !is_seed[u] && min_dis[u] > best.1 {
                best = (u, min_dis[u]);
            }
        }
        let s = best.0;
        seeds.push(s);
        is_seed[s] = true;
        for u in 0..n {
            min_dis[u] = min_dis[u].min(1.0 - pearson(x, u, s));
        }
    }
    let membership = crate::par::map_rows(n, |u| {
        if let Some(g) = seeds.iter().position(|&s| s == u) {
            return g;
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (g, &s) in seeds.iter().enumerate() {
            let r = pearson(x, u, s);
            if r > best.1 {
                best = (g, r);
            }
        }
        best.0
    });
    Ok(GroupAssignment::new(k, membership, start.elapsed()))
}

/// K-Means directly on the normalised rating rows.
pub fn baseline_kmeans_groups(x: &Csr, k: usize, seed: u64) -> Result<GroupAssignment> {
    check_k(k, x.n_rows())?;
    let start = Instant::now();
    let dense = x.to_dense();
    let km = kmeans(dense.view(), k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    Ok(GroupAssignment::new(k, km.assign, start.elapsed()))
}

/// Diagonal GMM on the top-32 spectral projection of the rating rows.
pub fn baseline_gmm_groups(x: &Csr, k: usize, seed: u64) -> Result<GroupAssignment> {
    check_k(k, x.n_rows())?;
    let start = Instant::now();
    let reduced = super::spectral_projection(x, GMM_DIMS, seed);
    let fit = super::fit_diagonal_gmm(reduced.view(), k, seed, GMM_MAX_ITER, GMM_VAR_FLOOR)?;
    Ok(GroupAssignment::new(k, fit.assign, start.elapsed()))
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 1 || k > n {
        return Err(Error::Config(format!("K = {k} must lie in [1, {n}]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn zero_variance_pearson_is_zero() {
        let x = Csr::from_dense(ndarray::array![[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]].view());
        assert_eq!(pearson(&x, 0, 1), 0.0);
    }

    fn planted_blocks() -> (Csr, Vec<usize>) {
        // two user blocks on disjoint item sets, item-specific rating pattern
        let mut d = Array2::zeros((10, 8));
        let mut labels = vec![];
        for u in 0..10 {
            let b = u / 5;
            labels.push(b);
            for j in 0..4 {
                d[[u, b * 4 + j]] = 1.0 + j as f64 + 0.1 * (u % 5) as f64 * (j % 2) as f64;
            }
        }
        (Csr::from_dense(d.view()), labels)
    }

    #[test]
    fn similarity_recovers_disjoint_blocks() {
        let (x, labels) = planted_blocks();
        let g = baseline_similarity_groups(&x, 2, 0).unwrap();
        let (ari, _) = crate::eval::clustering_quality(&g.membership, &labels);
        assert_eq!(ari, 1.0);
    }

    #[test]
    fn k_equal_to_users_gives_singletons() {
        let (x, _) = planted_blocks();
        for g in [
            baseline_similarity_groups(&x, 10, 1).unwrap(),
            baseline_kmeans_groups(&x, 10, 1).unwrap(),
        ] {
            assert!(g.sizes.iter().all(|&s| s == 1));
        }
    }

    #[test]
    fn kmeans_baseline_is_seed_deterministic_and_recovers_blocks() {
        let (x, labels) = planted_blocks();
        let a = baseline_kmeans_groups(&x, 2, 5).unwrap();
        let b = baseline_kmeans_groups(&x, 2, 5).unwrap();
        assert_eq!(a.membership, b.membership);
        assert_eq!(crate::eval::clustering_quality(&a.membership, &labels).0, 1.0);
        let two = Csr::from_dense(ndarray::array![[1.0, 0.0], [0.0, 1.0]].view());
        assert_eq!(baseline_kmeans_groups(&two, 2, 0).unwrap().sizes, vec![1, 1]);
    }

    #[test]
    fn gmm_baseline_recovers_blocks() {
        let (x, labels) = planted_blocks();
        let g = baseline_gmm_groups(&x, 2, 3).unwrap();
        assert_eq!(crate::eval::clustering_quality(&g.membership, &labels).0, 1.0);
    }
}
