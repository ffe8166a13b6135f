//! Interaction log parsing, k-core filtering, train/test splitting,
//! per-user rating normalisation and the binary dataset cache.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;

use crate::binio::{read_file, write_atomic, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::sparse::Csr;

pub const DEFAULT_MIN_INTERACTIONS: usize = 10;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
const CACHE_MAGIC: &[u8; 4] = b"DFRM";
const CACHE_VERSION: u16 = 1;
/// Share of malformed lines above which parsing is aborted.
const MAX_MALFORMED_FRACTION: f64 = 0.01;
// generator stream for the random split fallback
const SPLIT_STREAM: u64 = 0x5b17;

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

impl InteractionRecord {
    pub fn new(user: impl Into<String>, item: impl Into<String>, rating: f64) -> Self {
        Self {
            user_id: user.into(),
            item_id: item.into(),
            rating,
            timestamp: None,
        }
    }

    pub fn at(mut self, timestamp: i64) -> Self {
        self.timestamp = Some(timestamp);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    /// Tab if the first data line contains one, else comma.
    #[default]
    Auto,
    Tab,
    Comma,
}

impl std::str::FromStr for Delimiter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Delimiter::Auto),
            "tab" | "\\t" => Ok(Delimiter::Tab),
            "comma" | "," => Ok(Delimiter::Comma),
            other => Err(Error::Config(format!("unknown delimiter {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub lines: usize,
    pub malformed_lines: Vec<usize>,
    pub zero_ratings_dropped: usize,
    pub duplicates_merged: usize,
    pub header_skipped: bool,
}

pub fn parse_interactions(path: &Path, delim: Delimiter) -> Result<Vec<InteractionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (records, report) = parse_str(&text, delim)?;
    if !report.malformed_lines.is_empty() {
        warn!(
            "{}: skipped {} malformed line(s)",
            path.display(),
            report.malformed_lines.len()
        );
    }
    Ok(records)
}

/// Parses delimiter-separated `user, item, rating[, timestamp]` lines and
/// deduplicates `(user, item)` pairs.
pub fn parse_str(text: &str, delim: Delimiter) -> Result<(Vec<InteractionRecord>, ParseReport)> {
    let mut report = ParseReport::default();
    let sep = match delim {
        Delimiter::Tab => '\t',
        Delimiter::Comma => ',',
        Delimiter::Auto => {
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
            if first.contains('\t') {
                '\t'
            } else {
                ','
            }
        }
    };
    let mut parsed = Vec::new();
    let mut seen_data = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        match parse_line(line, sep) {
            Some(rec) => {
                seen_data = true;
                if rec.rating == 0.0 {
                    report.zero_ratings_dropped += 1;
                } else {
                    parsed.push(rec);
                }
            }
            None if !seen_data && report.lines == 1 && looks_like_header(line, sep) => {
                report.header_skipped = true;
                report.lines -= 1;
            }
            None => report.malformed_lines.push(lineno + 1),
        }
    }
    if report.lines == 0 {
        warn!("interaction file is empty");
    }
    let bad = report.malformed_lines.len();
    if bad > 0 && bad as f64 > MAX_MALFORMED_FRACTION * report.lines as f64 {
        let shown: Vec<String> = report
            .malformed_lines
            .iter()
            .take(20)
            .map(|l| l.to_string())
            .collect();
        return Err(Error::Parse(format!(
            "{bad} of {} lines malformed (lines {}{})",
            report.lines,
            shown.join(", "),
            if bad > 20 { ", ..." } else { "" }
        )));
    }
    let before = parsed.len();
    let records = dedup_keep_last(parsed);
    report.duplicates_merged = before - records.len();
    Ok((records, report))
}

fn parse_line(line: &str, sep: char) -> Option<InteractionRecord> {
    let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
    if fields.len() < 3 || fields[0].is_empty() || fields[1].is_empty() {
        return None;
    }
    let rating: f64 = fields[2].parse().ok()?;
    if !rating.is_finite() || rating < 0.0 {
        return None;
    }
    let timestamp = match fields.get(3) {
        Some(t) if !t.is_empty() => Some(t.parse::<i64>().ok()?),
        _ => None,
    };
    Some(InteractionRecord {
        user_id: fields[0].to_string(),
        item_id: fields[1].to_string(),
        rating,
        timestamp,
    })
}

fn looks_like_header(line: &str, sep: char) -> bool {
    line.split(sep)
        .nth(2)
        .map(|f| f.trim().parse::<f64>().is_err())
        .unwrap_or(false)
}

/// Keeps one record per `(user, item)`: the latest timestamp when both
/// carry one, otherwise the later line.
fn dedup_keep_last(records: Vec<InteractionRecord>) -> Vec<InteractionRecord> {
    let mut slot: HashMap<(String, String), usize> = HashMap::new();
    let mut out: Vec<InteractionRecord> = Vec::with_capacity(records.len());
    for rec in records {
        let key = (rec.user_id.clone(), rec.item_id.clone());
        match slot.get(&key) {
            Some(&i) => {
                let replace = match (out[i].timestamp, rec.timestamp) {
                    (Some(old), Some(new)) => new >= old,
                    _ => true,
                };
                if replace {
                    out[i] = rec;
                }
            }
            None => {
                slot.insert(key, out.len());
                out.push(rec);
            }
        }
    }
    out
}

/// Iteratively drops users and items with fewer than `min_count`
/// interactions until every survivor meets the threshold.
pub fn filter_min_interactions(
    records: Vec<InteractionRecord>,
    min_count: usize,
) -> Result<Vec<InteractionRecord>> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut current = records;
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for r in &current {
            *users.entry(&r.user_id).or_default() += 1;
            *items.entry(&r.item_id).or_default() += 1;
        }
        let keep: Vec<bool> = current
            .iter()
            .map(|r| users[r.user_id.as_str()] >= min_count && items[r.item_id.as_str()] >= min_count)
            .collect();
        if keep.iter().all(|&k| k) {
            break;
        }
        let mut it = keep.into_iter();
        current.retain(|_| it.next().unwrap());
    }
    if current.is_empty() {
        return Err(Error::Data("filter removed all data".into()));
    }
    Ok(current)
}

/// Keeps only the `n` users with the most interactions (ties by id).
pub fn subsample_top_users(records: Vec<InteractionRecord>, n: usize) -> Vec<InteractionRecord> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in &records {
        *counts.entry(&r.user_id).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let keep: HashSet<String> = ranked.iter().take(n).map(|(u, _)| u.to_string()).collect();
    records
        .into_iter()
        .filter(|r| keep.contains(&r.user_id))
        .collect()
}

/// Users, items, the training rating matrix and held-out test items.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// `|U| × |I|` training ratings; unit-norm rows once normalised.
    pub x_train: Csr,
    /// Held-out item indices per user, ascending.
    pub test_items: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub train_nnz: usize,
    pub test_nnz: usize,
}

impl DatasetStats {
    pub fn interactions(&self) -> usize {
        self.train_nnz + self.test_nnz
    }
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }
    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.n_users(),
            items: self.n_items(),
            train_nnz: self.x_train.nnz(),
            test_nnz: self.test_items.iter().map(Vec::len).sum(),
        }
    }

    pub fn user_index(&self) -> HashMap<&str, usize> {
        self.user_ids
            .iter()
            .enumerate()
            .map(|(i, u)| (u.as_str(), i))
            .collect()
    }

    /// Writes the binary cache atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = LeWriter::default();
        w.magic(CACHE_MAGIC);
        w.u16(CACHE_VERSION);
        w.u32(self.n_users() as u32);
        w.u32(self.n_items() as u32);
        w.u64(self.x_train.nnz() as u64);
        for &p in self.x_train.indptr() {
            w.u64(p as u64);
        }
        for &c in self.x_train.indices() {
            w.u32(c);
        }
        w.f32s(self.x_train.values().iter().copied());
        for id in self.user_ids.iter().chain(&self.item_ids) {
            w.str(id);
        }
        // held-out items, CSR without values
        let test_nnz: usize = self.test_items.iter().map(Vec::len).sum();
        w.u64(test_nnz as u64);
        let mut off = 0u64;
        w.u64(0);
        for t in &self.test_items {
            off += t.len() as u64;
            w.u64(off);
        }
        for t in &self.test_items {
            for &i in t {
                w.u32(i);
            }
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = LeReader::new(data, "dataset cache");
        r.expect_magic(CACHE_MAGIC)?;
        let version = r.u16()?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported dataset cache version {version}")));
        }
        let n_users = r.u32()? as usize;
        let n_items = r.u32()? as usize;
        let nnz = r.u64()? as usize;
        let indptr = (0..=n_users)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let indices = (0..nnz).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let values = r.f32s(nnz)?;
        let x_train = Csr::from_raw(n_users, n_items, indptr, indices, values)?;
        let user_ids = (0..n_users).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let item_ids = (0..n_items).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let test_nnz = r.u64()? as usize;
        let offs = (0..=n_users)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if offs[0] != 0 || offs[n_users] != test_nnz || offs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Format("inconsistent test item offsets".into()));
        }
        let flat = (0..test_nnz).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if flat.iter().any(|&i| i as usize >= n_items) {
            return Err(Error::Format("test item index out of range".into()));
        }
        r.finish()?;
        let test_items = offs.windows(2).map(|w| flat[w[0]..w[1]].to_vec()).collect();
        Ok(Dataset {
            user_ids,
            item_ids,
            x_train,
            test_items,
        })
    }
}

/// Per-user split: the latest `ceil((1 - ratio) · n)` interactions become
/// test when every record of that user has a timestamp; otherwise a seeded
/// random subset of the same size. Users with a single interaction are kept
/// in training only. Ratings are left unnormalised.
pub fn split_train_test(records: &[InteractionRecord], ratio: f64, seed: u64) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    if records.is_empty() {
        return Err(Error::Data("no interactions to split".into()));
    }
    let mut by_user: BTreeMap<&str, Vec<(usize, &InteractionRecord)>> = BTreeMap::new();
    let mut items: Vec<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
    items.sort_unstable();
    items.dedup();
    let item_index: HashMap<&str, u32> = items
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i as u32))
        .collect();
    for (pos, r) in records.iter().enumerate() {
        by_user.entry(&r.user_id).or_default().push((pos, r));
    }
    let mut rng = crate::seeded_rng(seed, SPLIT_STREAM);
    let mut train_rows = Vec::with_capacity(by_user.len());
    let mut test_items = Vec::with_capacity(by_user.len());
    let mut single = 0usize;
    for (_, mut recs) in by_user.iter().map(|(u, r)| (u, r.clone())) {
        let n = recs.len();
        let n_test = if n < 2 {
            single += 1;
            0
        } else {
            (((1.0 - ratio) * n as f64).ceil() as usize).clamp(1, n - 1)
        };
        if recs.iter().all(|(_, r)| r.timestamp.is_some()) {
            recs.sort_by_key(|(pos, r)| (r.timestamp.unwrap(), *pos));
        } else {
            recs.shuffle(&mut rng);
        }
        let (train, test) = recs.split_at(n - n_test);
        train_rows.push(
            train
                .iter()
                .map(|(_, r)| (item_index[r.item_id.as_str()], r.rating))
                .collect(),
        );
        let mut t: Vec<u32> = test.iter().map(|(_, r)| item_index[r.item_id.as_str()]).collect();
        t.sort_unstable();
        test_items.push(t);
    }
    if single > 0 {
        warn!("{single} user(s) with a single interaction have no test items");
    }
    Ok(Dataset {
        user_ids: by_user.keys().map(|s| s.to_string()).collect(),
        item_ids: items.iter().map(|s| s.to_string()).collect(),
        x_train: Csr::from_rows(items.len(), train_rows),
        test_items,
    })
}

/// Scales every training row to unit Euclidean norm. Values are rounded to
/// `f32` so the dataset cache stores them exactly.
pub fn normalize_ratings(mut ds: Dataset) -> Result<Dataset> {
    let indptr = ds.x_train.indptr().to_vec();
    let values = ds.x_train.values_mut();
    for (u, w) in indptr.windows(2).enumerate() {
        let row = &mut values[w[0]..w[1]];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Data(format!("user {u} has no training ratings")));
        }
        row.iter_mut().for_each(|v| *v = (*v / norm) as f32 as f64);
    }
    Ok(ds)
}

/// Filter, split and normalise in one go.
pub fn build_dataset(
    records: Vec<InteractionRecord>,
    min_count: usize,
    ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    let filtered = filter_min_interactions(records, min_count)?;
    normalize_ratings(split_train_test(&filtered, ratio, seed)?)
}
