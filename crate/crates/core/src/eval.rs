//! Ranking metrics for group lists, the end-to-end evaluation loop, and
//! clustering agreement scores.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::index::sample;

use crate::formation::GroupAssignment;
use crate::grouprec::{aggregate, candidates, rank, CandidatePolicy, Preferences, Strategy};
use crate::ingest::Dataset;

pub const DEFAULT_K_LIST: [usize; 3] = [5, 10, 20];

/// Binary-relevance NDCG over the first `k` ranks; 0 when nothing is relevant.
pub fn ndcg_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(relevant.len()))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    dcg / idcg
}

/// 1 if any relevant item is within the first `k` ranks.
pub fn hr_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    if ranked.iter().take(k).any(|i| relevant.contains(i)) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub ks: Vec<usize>,
    pub ndcg: Vec<f64>,
    pub hr: Vec<f64>,
    pub groups: usize,
    pub users_evaluated: usize,
    pub users_total: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.hr[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "strategy {}  groups {}  users {}/{}  seed {}\n",
            self.strategy, self.groups, self.users_evaluated, self.users_total, self.seed
        );
        s.push_str("   k    NDCG@k      HR@k\n");
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(s, "{k:>4}  {:>8.4}  {:>8.4}", self.ndcg[i], self.hr[i]).unwrap();
        }
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("strategy\tk\tndcg\thr\tgroups\tusers_evaluated\tusers_total\tseed\n");
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(
                s,
                "{}\t{k}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
                self.strategy,
                self.ndcg[i],
                self.hr[i],
                self.groups,
                self.users_evaluated,
                self.users_total,
                self.seed
            )
            .unwrap();
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub k_list: Vec<usize>,
    pub candidates: CandidatePolicy,
    /// Rank each user's test items among this many sampled non-test
    /// candidates instead of the full candidate list.
    pub sampled_negatives: Option<usize>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k_list: DEFAULT_K_LIST.to_vec(),
            candidates: CandidatePolicy::default(),
            sampled_negatives: None,
            seed: 0,
        }
    }
}

/// Builds one ranked list per group and scores it against every member's
/// held-out items; metrics are averaged over users that have test items.
pub fn evaluate_pipeline(
    groups: &GroupAssignment,
    strategy: Strategy,
    ds: &Dataset,
    prefs: &dyn Preferences,
    opts: &EvalOptions,
) -> MetricsReport {
    let max_k = opts.k_list.iter().copied().max().unwrap_or(0);
    let members = groups.members();
    let per_group: Vec<Vec<(Vec<f64>, Vec<f64>)>> = crate::par::map_rows(members.len(), |g| {
        let mem = &members[g];
        if mem.is_empty() {
            return Vec::new();
        }
        let cand = candidates(mem, &ds.x_train, opts.candidates);
        let scores = aggregate(strategy, mem, prefs, &cand);
        let full = rank(g, &cand, &scores, max_k);
        let score_of: HashMap<u32, f64> = match opts.sampled_negatives {
            Some(_) => cand.iter().copied().zip(scores.iter().copied()).collect(),
            None => HashMap::new(),
        };
        mem.iter()
            .filter(|&&u| !ds.test_items[u].is_empty())
            .map(|&u| {
                let relevant = &ds.test_items[u];
                let list = match opts.sampled_negatives {
                    None => full.items.clone(),
                    Some(n_neg) => {
                        let pool: Vec<u32> = cand
                            .iter()
                            .copied()
                            .filter(|i| !relevant.contains(i))
                            .collect();
                        let mut rng = crate::seeded_rng(opts.seed, u as u64);
                        let mut items: Vec<u32> = sample(&mut rng, pool.len(), n_neg.min(pool.len()))
                            .into_iter()
                            .map(|j| pool[j])
                            .collect();
                        items.extend(relevant.iter().filter(|i| score_of.contains_key(i)));
                        items.sort_unstable();
                        let s: Vec<f64> = items.iter().map(|i| score_of[i]).collect();
                        rank(g, &items, &s, max_k).items
                    }
                };
                let nd = opts.k_list.iter().map(|&k| ndcg_at_k(&list, relevant, k)).collect();
                let hr = opts.k_list.iter().map(|&k| hr_at_k(&list, relevant, k)).collect();
                (nd, hr)
            })
            .collect()
    });
    let nk = opts.k_list.len();
    let (mut ndcg, mut hr, mut users) = (vec![0.0; nk], vec![0.0; nk], 0usize);
    for (nd, h) in per_group.iter().flatten() {
        users += 1;
        for j in 0..nk {
            ndcg[j] += nd[j];
            hr[j] += h[j];
        }
    }
    if users > 0 {
        ndcg.iter_mut().chain(hr.iter_mut()).for_each(|v| *v /= users as f64);
    }
    MetricsReport {
        strategy: strategy.to_string(),
        ks: opts.k_list.clone(),
        ndcg,
        hr,
        groups: members.iter().filter(|m| !m.is_empty()).count(),
        users_evaluated: users,
        users_total: ds.n_users(),
        seed: opts.seed,
    }
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index and normalised mutual information (arithmetic-mean
/// normalisation) between two labelings of the same items.
pub fn clustering_quality(pred: &[usize], truth: &[usize]) -> (f64, f64) {
    assert_eq!(pred.len(), truth.len(), "labelings differ in length");
    let n = pred.len() as f64;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut a: HashMap<usize, f64> = HashMap::new();
    let mut b: HashMap<usize, f64> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *table.entry((p, t)).or_default() += 1.0;
        *a.entry(p).or_default() += 1.0;
        *b.entry(t).or_default() += 1.0;
    }
    let sum_ij: f64 = table.values().map(|&v| comb2(v)).sum();
    let sum_a: f64 = a.values().map(|&v| comb2(v)).sum();
    let sum_b: f64 = b.values().map(|&v| comb2(v)).sum();
    let pairs = comb2(n);
    let expected = if pairs > 0.0 { sum_a * sum_b / pairs } else { 0.0 };
    let max_index = 0.5 * (sum_a + sum_b);
    // no pairs, or both labelings trivial: agreement is perfect
    let ari = if (max_index - expected).abs() < 1e-12 {
        1.0
    } else {
        (sum_ij - expected) / (max_index - expected)
    };
    let entropy = |m: &HashMap<usize, f64>| -> f64 {
        m.values().map(|&c| -(c / n) * (c / n).ln()).sum()
    };
    let (ha, hb) = (entropy(&a), entropy(&b));
    let mi: f64 = table
        .iter()
        .map(|(&(p, t), &c)| (c / n) * ((c * n) / (a[&p] * b[&t])).ln())
        .sum();
    let nmi = if ha + hb == 0.0 {
        1.0
    } else {
        (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
    };
    (ari, nmi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ndcg_closed_forms() {
        assert_eq!(ndcg_at_k(&[3, 1, 2], &[3], 5), 1.0);
        assert_abs_diff_eq!(ndcg_at_k(&[1, 3, 2], &[3], 5), 1.0 / 3f64.log2(), epsilon = 1e-12);
        assert_abs_diff_eq!(ndcg_at_k(&[1, 3, 2], &[3], 5), 0.6309, epsilon = 1e-4);
        assert_eq!(ndcg_at_k(&[1, 2], &[], 5), 0.0);
    }

    #[test]
    fn hr_boundaries() {
        assert_eq!(hr_at_k(&[1, 2, 3, 4, 5], &[5], 5), 1.0);
        assert_eq!(hr_at_k(&[1, 2, 3, 4, 5, 6], &[6], 5), 0.0);
    }

    #[test]
    fn clustering_quality_identities() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(clustering_quality(&a, &a), (1.0, 1.0));
        let relabeled = [2, 2, 0, 0, 1, 1];
        let (ari, nmi) = clustering_quality(&relabeled, &a);
        assert_abs_diff_eq!(ari, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nmi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn independent_labelings_have_ari_near_zero() {
        use rand::Rng;
        let mut rng = crate::seeded_rng(17, 0);
        let n = 20_000;
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let (ari, nmi) = clustering_quality(&a, &b);
        assert!(ari.abs() < 0.01, "ari = {ari}");
        assert!(nmi < 0.01);
    }

    #[test]
    fn degenerate_labelings_are_finite() {
        assert_eq!(clustering_quality(&[0], &[3]), (1.0, 1.0));
        assert_eq!(clustering_quality(&[0, 0], &[1, 1]), (1.0, 1.0));
        let (ari, _) = clustering_quality(&[0, 1], &[0, 0]);
        assert!(ari.is_finite());
    }
}
