//! Finite-difference verification of the analytic gradients.

use std::fmt::Write as _;

use ndarray::Array2;

use super::config::DenseTerms;
use super::objective::{LossWeights, Objective};
use crate::cluster::{kmeans, soft_assign, target_distribution};
use crate::contrastive::{sample_batch, ContrastBatch, NceDenominator};
use crate::encoder::{encode, EntrySet, ModelParams, ModelShape, TENSOR_NAMES};
use crate::error::Result;
use crate::graph::UserGraph;
use crate::sparse::Csr;

/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
const ABS_FLOOR: f64 = 1e-6;
const REL_STEP: f64 = 1e-4;

pub const TERMS: [&str; 8] = ["gcn_z", "gcn_a", "ae", "align", "cluster", "triplet", "nce", "total"];

/// A small problem with every sampled quantity frozen.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub x: Csr,
    pub graph: UserGraph,
    pub hops: usize,
    pub params: ModelParams,
    pub mu: Array2<f64>,
    pub targets: Array2<f64>,
    pub a_entries: EntrySet,
    pub x_entries: EntrySet,
    pub batch: ContrastBatch,
    pub weights: LossWeights,
    pub margin: f64,
    pub tau: f64,
    pub nce_mode: NceDenominator,
}

impl GradCheckInstance {
    /// Random instance on a planted-block rating matrix: 12 users, 10
    /// items, `d = 6`, three clusters.
    pub fn random(seed: u64, dense: DenseTerms, nce_mode: NceDenominator) -> Result<Self> {
        use rand::Rng as _;
        let spec = crate::synth::SynthSpec {
            users: 12,
            items: 10,
            blocks: vec![3],
            noise: 0.1,
            density: 0.6,
            seed,
        };
        let x = crate::synth::generate(&spec)?.dataset(0.8, seed)?.x_train;
        let graph = UserGraph::build(&x, None);
        let shape = ModelShape {
            n_users: x.n_rows(),
            n_items: x.n_cols(),
            d: 6,
            h1: 8,
            h2: 7,
        };
        let mut rng = crate::seeded_rng(seed, 0x6c4e);
        let mut params = ModelParams::init(shape, &mut rng);
        // spread the embeddings so every term has a non-trivial gradient
        params.z.mapv_inplace(|_| rng.random_range(-0.6..0.6));
        for l in params.enc.iter_mut().chain(params.dec.iter_mut()) {
            l.b.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        }
        let hops = 2;
        let out = encode(&graph, &x, &params, hops)?;
        let km = kmeans(out.z_final.view(), 3, seed, 50, 1e-6)?;
        let targets = target_distribution(soft_assign(out.z_final.view(), km.centroids.view()).view());
        let (a_entries, x_entries) = match dense {
            DenseTerms::Exact => (EntrySet::Exact, EntrySet::Exact),
            DenseTerms::Sampled => (
                EntrySet::sample(&graph.adjacency, &mut rng),
                EntrySet::sample(&x, &mut rng),
            ),
        };
        let batch = sample_batch(&km.assign, &mut rng, 3);
        // a singleton cluster's mean sits on its member, where the distance
        // to the centroid is not differentiable
        let mut mu = km.centroids;
        mu.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
        Ok(GradCheckInstance {
            x,
            graph,
            hops,
            params,
            mu,
            targets,
            a_entries,
            x_entries,
            batch,
            weights: LossWeights::default(),
            margin: 1.0,
            tau: 0.5,
            nce_mode,
        })
    }

    pub fn objective(&self) -> Objective<'_> {
        Objective {
            x: &self.x,
            graph: &self.graph,
            hops: self.hops,
            a_entries: &self.a_entries,
            x_entries: &self.x_entries,
            targets: self.targets.view(),
            batch: &self.batch,
            weights: self.weights,
            margin: self.margin,
            tau: self.tau,
            nce_mode: self.nce_mode,
            use_triplet: true,
            use_nce: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub term: &'static str,
    pub tensor: &'static str,
    pub checked: usize,
    /// Coordinates whose perturbation crosses a hinge kink.
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tolerance
    }

    /// One line per (term, tensor) pair.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            writeln!(
                s,
                "{:<8} {:<7} checked={:<3} skipped={:<3} max_rel_err={:.3e} {}",
                r.term,
                r.tensor,
                r.checked,
                r.skipped,
                r.max_rel_err,
                if r.max_rel_err <= self.tolerance { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        s
    }
}

fn tensor_len(params: &ModelParams, mu: &Array2<f64>, t: usize) -> usize {
    if t < TENSOR_NAMES.len() {
        params.tensors()[t].len()
    } else {
        mu.len()
    }
}

fn slot<'p>(params: &'p mut ModelParams, mu: &'p mut Array2<f64>, t: usize, i: usize) -> &'p mut f64 {
    if t < TENSOR_NAMES.len() {
        &mut params.tensors_mut().swap_remove(t)[i]
    } else {
        &mut mu.as_slice_mut().expect("standard layout")[i]
    }
}

/// Compares analytic and central-difference gradients for each loss term
/// at up to `coords` random coordinates of every tensor (centroids
/// included), using the five-point central stencil with step
/// `h = 1e-4 · max(|θ|, 1)`. The relative error is
/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(inst: &GradCheckInstance, coords: usize, seed: u64) -> Result<GradCheckReport> {
    let base = inst.objective();
    let mut rng = crate::seeded_rng(seed, 0x67c4);
    let n_tensors = TENSOR_NAMES.len() + 1;
    let picks: Vec<Vec<usize>> = (0..n_tensors)
        .map(|t| {
            let len = tensor_len(&inst.params, &inst.mu, t);
            rand::seq::index::sample(&mut rng, len, coords.min(len)).into_vec()
        })
        .collect();

    let mut rows = Vec::new();
    for term in TERMS {
        let obj = base.restricted(term);
        let (_, grads, dmu) = obj.gradient(&inst.params, inst.mu.view())?;
        let kinks = matches!(term, "triplet" | "total") && obj.weights.contrast != 0.0;
        let pattern = if kinks {
            obj.hinge_pattern(&inst.params, inst.mu.view())?
        } else {
            Vec::new()
        };
        for (t, idx) in picks.iter().enumerate() {
            let name = TENSOR_NAMES.get(t).copied().unwrap_or("mu");
            let mut row = GradCheckRow {
                term,
                tensor: name,
                checked: 0,
                skipped: 0,
                max_rel_err: 0.0,
            };
            let mut p = inst.params.clone();
            let mut mu = inst.mu.clone();
            for &i in idx {
                let analytic = if t < TENSOR_NAMES.len() {
                    grads.tensors()[t][i]
                } else {
                    dmu.as_slice().expect("standard layout")[i]
                };
                let theta = *slot(&mut p, &mut mu, t, i);
                let h = REL_STEP * theta.abs().max(1.0);
                let mut f = [0.0; 4];
                let mut crossed = false;
                for (j, step) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
                    *slot(&mut p, &mut mu, t, i) = theta + step * h;
                    f[j] = obj.loss(&p, mu.view())?.total();
                    crossed |= kinks && obj.hinge_pattern(&p, mu.view())? != pattern;
                }
                *slot(&mut p, &mut mu, t, i) = theta;
                if crossed {
                    row.skipped += 1;
                    continue;
                }
                // fourth-order central stencil
                let numeric = (8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
                row.max_rel_err = row.max_rel_err.max((analytic - numeric).abs() / denom);
                row.checked += 1;
            }
            rows.push(row);
        }
    }
    Ok(GradCheckReport {
        rows,
        tolerance: GRAD_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_gradient_matches_finite_differences() {
        for (seed, dense) in [(1, DenseTerms::Exact), (2, DenseTerms::Sampled)] {
            let inst = GradCheckInstance::random(seed, dense, NceDenominator::WithPositive).unwrap();
            let rep = grad_check(&inst, 20, seed).unwrap();
            assert!(rep.passed(), "{}", rep.to_text());
            assert_eq!(rep.rows.len(), TERMS.len() * 14);
        }
    }

    #[test]
    fn negatives_only_denominator_gradient() {
        let inst = GradCheckInstance::random(3, DenseTerms::Exact, NceDenominator::NegativesOnly).unwrap();
        let rep = grad_check(&inst, 10, 3).unwrap();
        assert!(rep.passed(), "{}", rep.to_text());
    }
}
