//! Planted-block interaction data with known group labels.
//!
//! Users and items are split into the leaves of a block hierarchy (for
//! example `3,2,2` gives 3 top blocks, each split twice more, 12 leaves).
//! A user interacts with items of its own leaf with probability `density`,
//! and with items of a leaf sharing its first `c` levels with probability
//! `density · 2^(c − depth)`; items under another top block are never chosen.
//! `noise` is the fraction of interactions redirected to uniformly random
//! items.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::ingest::{build_dataset, Dataset, InteractionRecord};

const SYNTH_STREAM: u64 = 0x5717;
const MIN_PER_USER: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    /// Branching factor per level, top first.
    pub blocks: Vec<usize>,
    pub noise: f64,
    pub density: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            users: 300,
            items: 120,
            blocks: vec![3],
            noise: 0.0,
            density: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn leaves(&self) -> usize {
        self.blocks.iter().product()
    }

    /// Parses a comma-separated branching list such as `3,2,2`.
    pub fn parse_blocks(s: &str) -> Result<Vec<usize>> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("blocks: expected a list like 3,2,2, got {s:?}")))?;
        if v.is_empty() || v.contains(&0) {
            return Err(Error::Config("blocks: every level needs at least one block".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub records: Vec<InteractionRecord>,
    pub user_ids: Vec<String>,
    /// Leaf block of each user, in `user_ids` order.
    pub leaf: Vec<usize>,
    /// Top-level block of each user.
    pub top: Vec<usize>,
}

/// Number of leading hierarchy levels two leaves share.
fn shared_levels(blocks: &[usize], a: usize, b: usize) -> usize {
    let leaves: usize = blocks.iter().product();
    let mut span = leaves;
    let mut shared = 0;
    for &br in blocks {
        span /= br;
        if a / span != b / span {
            break;
        }
        shared += 1;
    }
    shared
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    let leaves = spec.leaves();
    let depth = spec.blocks.len();
    if spec.users < leaves || spec.items < leaves {
        return Err(Error::Config(format!(
            "need at least one user and one item per leaf block ({leaves}), got {} users and {} items",
            spec.users, spec.items
        )));
    }
    if !(0.0..=1.0).contains(&spec.noise) || !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::Config("noise must be in [0, 1] and density in (0, 1]".into()));
    }
    let mut rng = crate::seeded_rng(spec.seed, SYNTH_STREAM);
    let uw = spec.users.to_string().len();
    let iw = spec.items.to_string().len();
    let item_leaf = |i: usize| i * leaves / spec.items;
    let user_leaf = |u: usize| u * leaves / spec.users;
    let top_span = leaves / spec.blocks[0];

    let mut records = Vec::new();
    let mut user_ids = Vec::with_capacity(spec.users);
    let mut leaf = Vec::with_capacity(spec.users);
    for u in 0..spec.users {
        let ul = user_leaf(u);
        let uid = format!("u{u:0uw$}");
        let mut chosen: Vec<usize> = (0..spec.items)
            .filter(|&i| {
                let c = shared_levels(&spec.blocks, ul, item_leaf(i));
                c > 0 && rng.random::<f64>() < spec.density * 0.5f64.powi((depth - c) as i32)
            })
            .collect();
        let own: Vec<usize> = (0..spec.items).filter(|&i| item_leaf(i) == ul).collect();
        while chosen.len() < MIN_PER_USER.min(own.len()) {
            let i = own[rng.random_range(0..own.len())];
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        for i in chosen.iter_mut() {
            if rng.random::<f64>() < spec.noise {
                *i = rng.random_range(0..spec.items);
            }
        }
        chosen.sort_unstable();
        chosen.dedup();
        for i in chosen {
            let rating = if item_leaf(i) == ul {
                rng.random_range(4..=5)
            } else {
                rng.random_range(1..=5)
            };
            let ts = rng.random_range(1_000_000_000i64..1_700_000_000);
            records.push(InteractionRecord::new(uid.clone(), format!("i{i:0iw$}"), rating as f64).at(ts));
        }
        user_ids.push(uid);
        leaf.push(ul);
    }
    let top = leaf.iter().map(|&l| l / top_span).collect();
    Ok(SynthData {
        records,
        user_ids,
        leaf,
        top,
    })
}

impl SynthData {
    /// Split and normalise without interaction filtering.
    pub fn dataset(&self, ratio: f64, seed: u64) -> Result<Dataset> {
        build_dataset(self.records.clone(), 1, ratio, seed)
    }

    /// Labels of the dataset's users, in dataset order.
    pub fn labels_for(&self, ds: &Dataset, labels: &[usize]) -> Result<Vec<usize>> {
        let pos: std::collections::HashMap<&str, usize> =
            self.user_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        ds.user_ids
            .iter()
            .map(|u| {
                pos.get(u.as_str())
                    .map(|&i| labels[i])
                    .ok_or_else(|| Error::Data(format!("user {u:?} is not in the synthetic data")))
            })
            .collect()
    }

    /// Tab-separated `user_id item_id rating timestamp` with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("user_id\titem_id\trating\ttimestamp\n");
        for r in &self.records {
            writeln!(s, "{}\t{}\t{}\t{}", r.user_id, r.item_id, r.rating, r.timestamp.unwrap_or(0)).unwrap();
        }
        s
    }

    /// `user_id,leaf,top` with a header row.
    pub fn labels_csv(&self) -> String {
        let mut s = String::from("user_id,leaf,top\n");
        for ((u, l), t) in self.user_ids.iter().zip(&self.leaf).zip(&self.top) {
            writeln!(s, "{u},{l},{t}").unwrap();
        }
        s
    }
}

/// Reads a labels file written by [`SynthData::labels_csv`]; returns
/// `(user_id, leaf, top)` triples.
pub fn parse_labels(text: &str) -> Result<Vec<(String, usize, usize)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("labels line {}: expected user_id,leaf,top", no + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        out.push((
            f[0].to_string(),
            f[1].trim().parse().map_err(|_| bad())?,
            f[2].trim().parse().map_err(|_| bad())?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_levels_follow_the_tree() {
        let b = [3, 2, 2];
        assert_eq!(shared_levels(&b, 0, 0), 3);
        assert_eq!(shared_levels(&b, 0, 1), 2);
        assert_eq!(shared_levels(&b, 0, 2), 1);
        assert_eq!(shared_levels(&b, 0, 4), 0);
    }

    #[test]
    fn noiseless_blocks_are_disjoint() {
        let spec = SynthSpec {
            users: 60,
            items: 30,
            blocks: vec![3],
            ..SynthSpec::default()
        };
        let d = generate(&spec).unwrap();
        let block_of_user: std::collections::HashMap<_, _> =
            d.user_ids.iter().cloned().zip(d.top.iter().copied()).collect();
        for r in &d.records {
            let item: usize = r.item_id[1..].parse().unwrap();
            assert_eq!(item * 3 / 30, block_of_user[&r.user_id]);
        }
        assert_eq!(d.leaf.iter().filter(|&&l| l == 1).count(), 20);
    }

    #[test]
    fn generation_is_seeded_and_labels_round_trip() {
        let spec = SynthSpec {
            users: 48,
            items: 24,
            blocks: vec![2, 2],
            noise: 0.1,
            seed: 7,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        let parsed = parse_labels(&a.labels_csv()).unwrap();
        assert_eq!(parsed.len(), 48);
        assert_eq!(parsed[47], (a.user_ids[47].clone(), 3, 1));
        let ds = a.dataset(0.8, 1).unwrap();
        assert_eq!(a.labels_for(&ds, &a.leaf).unwrap(), a.leaf);
        let (recs, _) = crate::ingest::parse_str(&a.to_tsv(), crate::ingest::Delimiter::Auto).unwrap();
        assert_eq!(recs.len(), a.records.len());
    }
}
