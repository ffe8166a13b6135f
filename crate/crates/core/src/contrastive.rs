//! Cluster-level contrastive objectives: a centroid triplet loss and
//! InfoNCE over provisional cluster labels.

use log::warn;
use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use crate::Rng;

pub const DEFAULT_MARGIN: f64 = 1.0;
pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_N_NEG: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NceDenominator {
    /// Positive and negatives in the denominator; the loss is never negative.
    #[default]
    WithPositive,
    /// Negatives only; unbounded below as the positive similarity grows.
    NegativesOnly,
}

impl std::str::FromStr for NceDenominator {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "with_positive" => Ok(Self::WithPositive),
            "negatives_only" => Ok(Self::NegativesOnly),
            other => Err(crate::Error::Config(format!("unknown nce_denominator {other:?}"))),
        }
    }
}

impl std::fmt::Display for NceDenominator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::WithPositive => "with_positive",
            Self::NegativesOnly => "negatives_only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub cluster: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NceTuple {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContrastBatch {
    pub triplets: Vec<Triplet>,
    pub nce: Vec<NceTuple>,
}

impl ContrastBatch {
    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty() && self.nce.is_empty()
    }
}

/// One triplet per user, and one InfoNCE tuple per user whose cluster has
/// another member. Positives and negatives are drawn uniformly; negatives
/// with replacement.
pub fn sample_batch(hard_assign: &[usize], rng: &mut Rng, n_neg: usize) -> ContrastBatch {
    let k = hard_assign.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (u, &c) in hard_assign.iter().enumerate() {
        members[c].push(u);
    }
    let n = hard_assign.len();
    if members.iter().filter(|m| !m.is_empty()).count() < 2 {
        warn!("all users share one cluster; contrastive batch skipped");
        return ContrastBatch::default();
    }
    let mut batch = ContrastBatch::default();
    let draw_outside = |c: usize, rng: &mut Rng| loop {
        // at least one user lies outside c, so rejection terminates
        let v = rng.random_range(0..n);
        if hard_assign[v] != c {
            break v;
        }
    };
    for u in 0..n {
        let c = hard_assign[u];
        let negative = draw_outside(c, rng);
        batch.triplets.push(Triplet {
            anchor: u,
            cluster: c,
            negative,
        });
        let mates = &members[c];
        if mates.len() < 2 || n_neg == 0 {
            continue;
        }
        let positive = loop {
            let v = mates[rng.random_range(0..mates.len())];
            if v != u {
                break v;
            }
        };
        let negatives = (0..n_neg).map(|_| draw_outside(c, rng)).collect();
        batch.nce.push(NceTuple {
            anchor: u,
            positive,
            negatives,
        });
    }
    batch
}

fn dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Hinge value of one triplet before averaging.
pub fn triplet_term(z: ArrayView2<f64>, mu: ArrayView2<f64>, t: &Triplet, margin: f64) -> f64 {
    let c = mu.row(t.cluster);
    (dist(z.row(t.anchor), c) - dist(z.row(t.negative), c) + margin).max(0.0)
}

/// Mean hinge `max(0, ‖z_u − μ_c‖ − ‖z_{u⁻} − μ_c‖ + Δ)` with gradients
/// w.r.t. embeddings and centroids. The gradient is zero where the hinge is
/// inactive or exactly at its kink.
pub fn triplet_loss(
    batch: &ContrastBatch,
    z: ArrayView2<f64>,
    mu: ArrayView2<f64>,
    margin: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let mut dz = Array2::zeros(z.dim());
    let mut dmu = Array2::zeros(mu.dim());
    if batch.triplets.is_empty() {
        return (0.0, dz, dmu);
    }
    let scale = 1.0 / batch.triplets.len() as f64;
    let mut loss = 0.0;
    for t in &batch.triplets {
        let c = mu.row(t.cluster);
        let da = &z.row(t.anchor) - &c;
        let dn = &z.row(t.negative) - &c;
        let (na, nn) = (da.dot(&da).sqrt(), dn.dot(&dn).sqrt());
        let h = na - nn + margin;
        if h <= 0.0 {
            continue;
        }
        loss += h;
        if na > 0.0 {
            dz.row_mut(t.anchor).scaled_add(scale / na, &da);
            dmu.row_mut(t.cluster).scaled_add(-scale / na, &da);
        }
        if nn > 0.0 {
            dz.row_mut(t.negative).scaled_add(-scale / nn, &dn);
            dmu.row_mut(t.cluster).scaled_add(scale / nn, &dn);
        }
    }
    (loss * scale, dz, dmu)
}

/// Mean InfoNCE over tuples with max-subtracted logits, and its gradient
/// w.r.t. the embeddings.
pub fn infonce_loss(
    batch: &ContrastBatch,
    z: ArrayView2<f64>,
    tau: f64,
    mode: NceDenominator,
) -> (f64, Array2<f64>) {
    let mut dz = Array2::zeros(z.dim());
    if batch.nce.is_empty() {
        return (0.0, dz);
    }
    let scale = 1.0 / batch.nce.len() as f64;
    let mut loss = 0.0;
    for t in &batch.nce {
        let za = z.row(t.anchor);
        let s_pos = za.dot(&z.row(t.positive)) / tau;
        let s_neg: Vec<f64> = t.negatives.iter().map(|&v| za.dot(&z.row(v)) / tau).collect();
        let with_pos = mode == NceDenominator::WithPositive;
        let mut m = s_neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if with_pos {
            m = m.max(s_pos);
        }
        let e_neg: Vec<f64> = s_neg.iter().map(|s| (s - m).exp()).collect();
        let e_pos = if with_pos { (s_pos - m).exp() } else { 0.0 };
        let denom: f64 = e_neg.iter().sum::<f64>() + e_pos;
        loss += -s_pos + m + denom.ln();

        // d loss / d logit
        let g_pos = -1.0 + e_pos / denom;
        let coef = scale / tau;
        let zp = z.row(t.positive).to_owned();
        let za_owned = za.to_owned();
        dz.row_mut(t.anchor).scaled_add(coef * g_pos, &zp);
        dz.row_mut(t.positive).scaled_add(coef * g_pos, &za_owned);
        for (&v, e) in t.negatives.iter().zip(&e_neg) {
            let g = e / denom;
            let zv = z.row(v).to_owned();
            dz.row_mut(t.anchor).scaled_add(coef * g, &zv);
            dz.row_mut(v).scaled_add(coef * g, &za_owned);
        }
    }
    (loss * scale, dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn singletons_get_triplets_only() {
        let mut rng = crate::seeded_rng(0, 0);
        let b = sample_batch(&[0, 1], &mut rng, 3);
        assert_eq!(b.triplets.len(), 2);
        assert!(b.nce.is_empty());
    }

    #[test]
    fn counting_and_eligibility() {
        let assign = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let mut rng = crate::seeded_rng(3, 0);
        let b = sample_batch(&assign, &mut rng, 3);
        assert_eq!(b.triplets.len(), 10);
        assert_eq!(b.nce.len(), 10);
        for t in &b.triplets {
            assert_eq!(assign[t.anchor], t.cluster);
            assert_ne!(assign[t.negative], t.cluster);
        }
        for t in &b.nce {
            assert_eq!(t.negatives.len(), 3);
            assert_ne!(t.anchor, t.positive);
            assert_eq!(assign[t.positive], assign[t.anchor]);
            assert!(t.negatives.iter().all(|&v| assign[v] != assign[t.anchor]));
        }
        let again = sample_batch(&assign, &mut crate::seeded_rng(3, 0), 3);
        assert_eq!(b, again);
    }

    #[test]
    fn one_cluster_yields_empty_batch() {
        let b = sample_batch(&[0, 0, 0], &mut crate::seeded_rng(0, 0), 2);
        assert!(b.is_empty());
    }

    #[test]
    fn triplet_hinge_cases() {
        let mu = array![[0.0, 0.0]];
        let batch = ContrastBatch {
            triplets: vec![Triplet {
                anchor: 0,
                cluster: 0,
                negative: 1,
            }],
            nce: vec![],
        };
        let z = array![[0.0, 0.0], [2.0, 0.0]];
        assert_eq!(triplet_loss(&batch, z.view(), mu.view(), 1.0).0, 0.0);
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        assert_abs_diff_eq!(triplet_loss(&batch, z.view(), mu.view(), 1.0).0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_similarities_negatives_only_gives_zero() {
        let z = array![[1.0, 0.0], [0.5, 0.5], [0.5, -0.5]];
        let batch = ContrastBatch {
            triplets: vec![],
            nce: vec![NceTuple {
                anchor: 0,
                positive: 1,
                negatives: vec![2],
            }],
        };
        let (l, _) = infonce_loss(&batch, z.view(), 0.5, NceDenominator::NegativesOnly);
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
        let (l, _) = infonce_loss(&batch, z.view(), 0.5, NceDenominator::WithPositive);
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn large_positive_margin_is_bounded_with_positive() {
        let z = array![[10.0, 0.0], [10.0, 0.0], [-10.0, 0.0]];
        let batch = ContrastBatch {
            triplets: vec![],
            nce: vec![NceTuple {
                anchor: 0,
                positive: 1,
                negatives: vec![2],
            }],
        };
        let (l, g) = infonce_loss(&batch, z.view(), 0.1, NceDenominator::WithPositive);
        assert!(l >= 0.0 && l.is_finite());
        assert!(g.iter().all(|v| v.is_finite()));
        let (l, _) = infonce_loss(&batch, z.view(), 0.1, NceDenominator::NegativesOnly);
        assert!(l < -1000.0 && l.is_finite());
    }
}
