//! Stochastic cluster counts, K-Means, Student's-t soft assignments and the
//! KL clustering objective.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::Rng;

pub const DEFAULT_K_MAX: usize = 128;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-4;
const KMEANS_STREAM: u64 = 0x6b6d;

/// Draws `K` uniformly from `[2, k_max]`.
pub fn sample_k(k_max: usize, rng: &mut Rng) -> Result<usize> {
    if k_max < 2 {
        return Err(Error::Config(format!("k_max must be at least 2, got {k_max}")));
    }
    Ok(rng.random_range(2..=k_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assign: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration, final assignment included.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centroids.nrows()];
        for &a in &self.assign {
            s[a] += 1;
        }
        s
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-means++ seeding followed by Lloyd iterations. Stops when no centroid
/// moves by `tol` or more, or after `max_iter` iterations. Empty clusters
/// take over the point farthest from its own centroid.
pub fn kmeans(data: ArrayView2<f64>, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansResult> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("K = {k} must lie in [1, {n}]")));
    }
    let mut rng = crate::seeded_rng(seed, KMEANS_STREAM);
    let mut centroids = plus_plus_seeds(data, k, &mut rng);
    let mut assign = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        assign_nearest(data, centroids.view(), &mut assign);
        repair_empty(data, &mut centroids, &mut assign);
        let updated = means(data, &assign, &centroids);
        let shift = centroids
            .outer_iter()
            .zip(updated.outer_iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        history.push(inertia(data, centroids.view(), &assign));
        if shift < tol {
            break;
        }
    }
    assign_nearest(data, centroids.view(), &mut assign);
    repair_empty(data, &mut centroids, &mut assign);
    let final_inertia = inertia(data, centroids.view(), &assign);
    history.push(final_inertia);
    Ok(KMeansResult {
        centroids,
        assign,
        inertia: final_inertia,
        inertia_history: history,
        iterations,
    })
}

/// Draws one index with probability proportional to `weights`.
fn draw_weighted(weights: &[f64], total: f64, rng: &mut Rng) -> usize {
    let mut t = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if t < w {
            return i;
        }
        t -= w;
    }
    weights.len() - 1
}

/// Greedy k-means++: each new centre is the best, by resulting potential,
/// of `2 + ⌊ln k⌋` candidates drawn by squared distance.
pub(crate) fn plus_plus_seeds(data: ArrayView2<f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = data.nrows();
    let trials = 2 + (k as f64).ln() as usize;
    let mut chosen = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        if !(total > 0.0) {
            // every point coincides with a centre already
            chosen.push(rng.random_range(0..n));
            continue;
        }
        let candidates: Vec<usize> = (0..trials).map(|_| draw_weighted(&best, total, rng)).collect();
        let scored: Vec<(f64, Vec<f64>)> = candidates
            .iter()
            .map(|&c| {
                let d: Vec<f64> = (0..n).map(|i| best[i].min(sq_dist(data.row(i), data.row(c)))).collect();
                (d.iter().sum(), d)
            })
            .collect();
        let (pick, _) = scored
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .expect("at least two trials");
        chosen.push(candidates[pick]);
        best = scored.into_iter().nth(pick).unwrap().1;
    }
    let mut c = Array2::zeros((k, data.ncols()));
    for (r, &i) in chosen.iter().enumerate() {
        c.row_mut(r).assign(&data.row(i));
    }
    c
}

/// Nearest centroid per row, ties to the lowest index.
pub fn assign_nearest(data: ArrayView2<f64>, centroids: ArrayView2<f64>, assign: &mut [usize]) {
    let out = crate::par::map_rows(data.nrows(), |i| nearest(data.row(i), centroids).0);
    assign.copy_from_slice(&out);
}

fn nearest(x: ndarray::ArrayView1<f64>, centroids: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.outer_iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn repair_empty(data: ArrayView2<f64>, centroids: &mut Array2<f64>, assign: &mut [usize]) {
    let k = centroids.nrows();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assign.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = (usize::MAX, -1.0);
        for (i, &a) in assign.iter().enumerate() {
            if sizes[a] > 1 {
                let d = sq_dist(data.row(i), centroids.row(a));
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        let p = far.0;
        centroids.row_mut(empty).assign(&data.row(p));
        assign[p] = empty;
    }
}

fn means(data: ArrayView2<f64>, assign: &[usize], previous: &Array2<f64>) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros(previous.dim());
    let mut counts = vec![0usize; previous.nrows()];
    for (i, &a) in assign.iter().enumerate() {
        sums.row_mut(a).scaled_add(1.0, &data.row(i));
        counts[a] += 1;
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt == 0 {
            sums.row_mut(c).assign(&previous.row(c));
        } else {
            sums.row_mut(c).mapv_inplace(|v| v / cnt as f64);
        }
    }
    sums
}

pub fn inertia(data: ArrayView2<f64>, centroids: ArrayView2<f64>, assign: &[usize]) -> f64 {
    assign
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(data.row(i), centroids.row(a)))
        .sum()
}

/// Student's-t kernel matrix `κ_uc = (1 + ‖z_u − μ_c‖²)⁻¹`.
fn kernel(z: ArrayView2<f64>, mu: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((z.nrows(), mu.nrows()), |(u, c)| {
        1.0 / (1.0 + sq_dist(z.row(u), mu.row(c)))
    })
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.outer_iter_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Soft assignments `q_uc`: the kernel normalised over clusters.
pub fn soft_assign(z: ArrayView2<f64>, mu: ArrayView2<f64>) -> Array2<f64> {
    let mut q = kernel(z, mu);
    normalize_rows(&mut q);
    q
}

/// Sharpened targets: `q_uc² / Σ_i q_ic`, normalised over clusters.
pub fn target_distribution(q: ArrayView2<f64>) -> Array2<f64> {
    let mass: Array1<f64> = q.sum_axis(Axis(0));
    let mut p = Array2::from_shape_fn(q.dim(), |(u, c)| q[[u, c]] * q[[u, c]] / mass[c]);
    normalize_rows(&mut p);
    p
}

/// `Σ_u Σ_c p_uc log(p_uc / q_uc)`, with `0 · log 0 = 0`.
pub fn cluster_loss(p: ArrayView2<f64>, q: ArrayView2<f64>) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv).ln())
        .sum()
}

/// Loss and gradients w.r.t. the embeddings and centroids, with `P` held
/// fixed.
pub fn cluster_loss_grad(
    z: ArrayView2<f64>,
    mu: ArrayView2<f64>,
    p: ArrayView2<f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let kern = kernel(z, mu);
    let mut q = kern.clone();
    normalize_rows(&mut q);
    let loss = cluster_loss(p, q.view());
    let mut dz = Array2::zeros(z.dim());
    let mut dmu = Array2::zeros(mu.dim());
    for u in 0..z.nrows() {
        for c in 0..mu.nrows() {
            let coef = 2.0 * kern[[u, c]] * (p[[u, c]] - q[[u, c]]);
            if coef == 0.0 {
                continue;
            }
            let diff = &z.row(u) - &mu.row(c);
            dz.row_mut(u).scaled_add(coef, &diff);
            dmu.row_mut(c).scaled_add(-coef, &diff);
        }
    }
    (loss, dz, dmu)
}

/// Current cluster count, centroids, soft/target assignments and hard labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub k: usize,
    pub centroids: Array2<f64>,
    pub q: Array2<f64>,
    pub p: Array2<f64>,
    pub hard_assign: Vec<usize>,
}

impl ClusterState {
    /// Runs K-Means on `z` and derives `Q` and `P` from the result.
    pub fn fit(z: ArrayView2<f64>, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<Self> {
        let km = kmeans(z, k, seed, max_iter, tol)?;
        let q = soft_assign(z, km.centroids.view());
        let p = target_distribution(q.view());
        Ok(ClusterState {
            k,
            centroids: km.centroids,
            q,
            p,
            hard_assign: km.assign,
        })
    }

    /// Recomputes `Q` and `P` for new embeddings, keeping centroids and labels.
    pub fn refresh(&mut self, z: ArrayView2<f64>) {
        self.q = soft_assign(z, self.centroids.view());
        self.p = target_distribution(self.q.view());
    }
}
