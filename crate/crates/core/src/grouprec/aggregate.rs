use std::collections::HashSet;

use crate::error::Error;
use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Avg,
    Borda,
    LeastMisery,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "avg" => Ok(Strategy::Avg),
            "bc" | "borda" => Ok(Strategy::Borda),
            "lm" | "least_misery" => Ok(Strategy::LeastMisery),
            other => Err(Error::Config(format!("unknown strategy {other:?} (avg|bc|lm)"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Avg => "avg",
            Strategy::Borda => "bc",
            Strategy::LeastMisery => "lm",
        })
    }
}

/// Per-member item preferences. Missing preferences are 0.
pub trait Preferences: Sync {
    fn scores(&self, user: usize, items: &[u32]) -> Vec<f64>;
}

/// Observed training ratings only.
impl Preferences for Csr {
    fn scores(&self, user: usize, items: &[u32]) -> Vec<f64> {
        items.iter().map(|&i| self.get(user, i as usize)).collect()
    }
}

/// Observed ratings, with unrated items filled by the similarity-weighted
/// mean of graph neighbours' ratings `Σ_v a_uv x_vi / Σ_v a_uv`.
pub struct NeighborFilled<'a> {
    pub x: &'a Csr,
    pub adjacency: &'a Csr,
}

impl Preferences for NeighborFilled<'_> {
    fn scores(&self, user: usize, items: &[u32]) -> Vec<f64> {
        let mut dense = vec![0.0; self.x.n_cols()];
        let mut wsum = 0.0;
        for (v, a) in self.adjacency.row_iter(user) {
            wsum += a;
            for (i, x) in self.x.row_iter(v) {
                dense[i] += a * x;
            }
        }
        if wsum > 0.0 {
            dense.iter_mut().for_each(|s| *s /= wsum);
        }
        for (i, x) in self.x.row_iter(user) {
            dense[i] = x;
        }
        items.iter().map(|&i| dense[i as usize]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidatePolicy {
    /// Items that at least one member has not consumed in training.
    #[default]
    NotConsumedByAll,
    /// Items that no member has consumed in training.
    NotConsumedByAny,
}

impl std::str::FromStr for CandidatePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "not_consumed_by_all" => Ok(Self::NotConsumedByAll),
            "not_consumed_by_any" => Ok(Self::NotConsumedByAny),
            other => Err(Error::Config(format!("unknown candidate policy {other:?}"))),
        }
    }
}

/// Candidate items for a group, ascending.
pub fn candidates(members: &[usize], x_train: &Csr, policy: CandidatePolicy) -> Vec<u32> {
    let n_items = x_train.n_cols() as u32;
    match policy {
        CandidatePolicy::NotConsumedByAny => {
            let used: HashSet<u32> = members
                .iter()
                .flat_map(|&u| x_train.row(u).0.iter().copied())
                .collect();
            (0..n_items).filter(|i| !used.contains(i)).collect()
        }
        CandidatePolicy::NotConsumedByAll => {
            let mut counts = vec![0usize; n_items as usize];
            for &u in members {
                for &i in x_train.row(u).0 {
                    counts[i as usize] += 1;
                }
            }
            (0..n_items)
                .filter(|&i| counts[i as usize] < members.len())
                .collect()
        }
    }
}

/// Mean member preference per candidate.
pub fn aggregate_avg(members: &[usize], prefs: &dyn Preferences, candidates: &[u32]) -> Vec<f64> {
    let mut acc = vec![0.0; candidates.len()];
    for &u in members {
        for (a, s) in acc.iter_mut().zip(prefs.scores(u, candidates)) {
            *a += s;
        }
    }
    acc.iter_mut().for_each(|a| *a /= members.len() as f64);
    acc
}

/// Minimum member preference per candidate.
pub fn aggregate_least_misery(members: &[usize], prefs: &dyn Preferences, candidates: &[u32]) -> Vec<f64> {
    let mut acc = vec![f64::INFINITY; candidates.len()];
    for &u in members {
        for (a, s) in acc.iter_mut().zip(prefs.scores(u, candidates)) {
            *a = a.min(s);
        }
    }
    acc
}

/// Borda count: within each member's ordering of the `m` candidates the item
/// at position `r` (0-based) earns `m − 1 − r` points; tied items share the
/// mean of their positions' points. Points are summed over members.
pub fn aggregate_borda(members: &[usize], prefs: &dyn Preferences, candidates: &[u32]) -> Vec<f64> {
    let m = candidates.len();
    let mut acc = vec![0.0; m];
    for &u in members {
        let s = prefs.scores(u, candidates);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let mut start = 0;
        while start < m {
            let mut end = start + 1;
            while end < m && s[order[end]] == s[order[start]] {
                end += 1;
            }
            // positions start..end share their points
            let pts: f64 = (start..end).map(|r| (m - 1 - r) as f64).sum::<f64>() / (end - start) as f64;
            for &idx in &order[start..end] {
                acc[idx] += pts;
            }
            start = end;
        }
    }
    acc
}

pub fn aggregate(strategy: Strategy, members: &[usize], prefs: &dyn Preferences, candidates: &[u32]) -> Vec<f64> {
    match strategy {
        Strategy::Avg => aggregate_avg(members, prefs, candidates),
        Strategy::Borda => aggregate_borda(members, prefs, candidates),
        Strategy::LeastMisery => aggregate_least_misery(members, prefs, candidates),
    }
}

/// Items best first, ties by ascending item index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub group: usize,
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
}

pub fn rank(group: usize, candidates: &[u32], scores: &[f64], top_k: usize) -> RankedList {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(candidates[a].cmp(&candidates[b]))
    });
    order.truncate(top_k);
    RankedList {
        group,
        items: order.iter().map(|&i| candidates[i]).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
    }
}
