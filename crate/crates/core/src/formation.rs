//! Inference-time group formation: embed once, then answer any number of
//! K requests with K-Means alone.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use ndarray::{Array2, ArrayView2};
use web_time::Instant;

use crate::binio::{read_file, write_atomic, LeReader, LeWriter};
use crate::cluster::{kmeans, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::graph::UserGraph;
use crate::ingest::Dataset;
use crate::trainer::Checkpoint;

pub const DEFAULT_K: usize = 128;
const EMBED_MAGIC: &[u8; 4] = b"DFEM";
const EMBED_VERSION: u16 = 1;

/// A partition of users into `k` non-overlapping, non-empty groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub k: usize,
    pub membership: Vec<usize>,
    pub sizes: Vec<usize>,
    pub elapsed_ms: f64,
}

impl GroupAssignment {
    pub fn new(k: usize, membership: Vec<usize>, elapsed: Duration) -> Self {
        let mut sizes = vec![0; k];
        for &g in &membership {
            sizes[g] += 1;
        }
        GroupAssignment {
            k,
            membership,
            sizes,
            elapsed_ms: elapsed.as_secs_f64() * 1e3,
        }
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (u, &g) in self.membership.iter().enumerate() {
            out[g].push(u);
        }
        out
    }

    /// `user_id,group_id` with header.
    pub fn to_csv(&self, user_ids: &[String]) -> String {
        let mut s = String::from("user_id,group_id\n");
        for (u, &g) in self.membership.iter().enumerate() {
            writeln!(s, "{},{}", user_ids[u], g).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str, ds: &Dataset) -> Result<Self> {
        let index = ds.user_index();
        let mut membership = vec![usize::MAX; ds.n_users()];
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "user_id,group_id" => {}
            other => return Err(Error::Parse(format!("bad group file header {other:?}"))),
        }
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (u, g) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::Parse(format!("group file line {}: {line:?}", no + 2)))?;
            let ui = *index
                .get(u)
                .ok_or_else(|| Error::Data(format!("unknown user {u:?} in group file")))?;
            membership[ui] = g
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad group id {g:?}")))?;
        }
        if let Some(u) = membership.iter().position(|&g| g == usize::MAX) {
            return Err(Error::Data(format!("user {:?} has no group", ds.user_ids[u])));
        }
        let k = membership.iter().max().map_or(0, |m| m + 1);
        Ok(GroupAssignment::new(k, membership, Duration::ZERO))
    }
}

/// One forward pass from a checkpoint to `Z_final`.
pub fn embed(ckpt: &Checkpoint, ds: &Dataset, graph: &UserGraph) -> Result<Array2<f64>> {
    let expect = ckpt.params.shape();
    if expect.n_users != ds.n_users() || expect.n_items != ds.n_items() {
        return Err(Error::Shape {
            expected: format!("checkpoint {expect}"),
            found: format!("dataset (users={}, items={})", ds.n_users(), ds.n_items()),
        });
    }
    Ok(encode(graph, &ds.x_train, &ckpt.params, ckpt.hops)?.z_final)
}

pub fn embeddings_to_bytes(z: ArrayView2<f64>) -> Vec<u8> {
    let mut w = LeWriter::default();
    w.magic(EMBED_MAGIC);
    w.u16(EMBED_VERSION);
    w.u32(z.nrows() as u32);
    w.u32(z.ncols() as u32);
    w.f32s(z.iter().copied());
    w.buf
}

pub fn embeddings_from_bytes(data: &[u8]) -> Result<Array2<f64>> {
    let mut r = LeReader::new(data, "embedding file");
    r.expect_magic(EMBED_MAGIC)?;
    let v = r.u16()?;
    if v != EMBED_VERSION {
        return Err(Error::Format(format!("unsupported embedding version {v}")));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let vals = r.f32s(n * d)?;
    r.finish()?;
    Ok(Array2::from_shape_vec((n, d), vals).expect("length checked"))
}

pub fn save_embeddings(path: &Path, z: ArrayView2<f64>) -> Result<()> {
    write_atomic(path, &embeddings_to_bytes(z))
}

pub fn load_embeddings(path: &Path) -> Result<Array2<f64>> {
    embeddings_from_bytes(&read_file(path)?)
}

/// K-Means on the fixed embeddings. Never modifies `z`.
pub fn form_groups(z: ArrayView2<f64>, k: usize, seed: u64) -> Result<GroupAssignment> {
    Ok(form_groups_detailed(z, k, seed)?.0)
}

fn form_groups_detailed(z: ArrayView2<f64>, k: usize, seed: u64) -> Result<(GroupAssignment, usize, f64)> {
    let n = z.nrows();
    if k < 2 || k > n {
        return Err(Error::Config(format!("K = {k} must lie in [2, {n}]")));
    }
    let start = Instant::now();
    let km = kmeans(z, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let elapsed = start.elapsed();
    Ok((GroupAssignment::new(k, km.assign, elapsed), km.iterations, km.inertia))
}

/// Splits every group larger than `max_size` by K-Means over its members
/// into `ceil(size / max_size)` parts, repeating until all groups fit.
pub fn enforce_max_group_size(
    z: ArrayView2<f64>,
    groups: &GroupAssignment,
    max_size: usize,
    seed: u64,
) -> Result<GroupAssignment> {
    if max_size == 0 {
        return Err(Error::Config("max group size must be positive".into()));
    }
    let start = Instant::now();
    let mut membership = groups.membership.clone();
    let mut k = groups.k;
    loop {
        let mut members = vec![Vec::new(); k];
        for (u, &g) in membership.iter().enumerate() {
            members[g].push(u);
        }
        let Some(g) = members.iter().position(|m| m.len() > max_size) else {
            break;
        };
        let idx = &members[g];
        let parts = idx.len().div_ceil(max_size);
        let sub = z.select(ndarray::Axis(0), idx);
        let km = kmeans(sub.view(), parts, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
        let mut progressed = false;
        for (local, &u) in idx.iter().enumerate() {
            let a = km.assign[local];
            if a > 0 {
                membership[u] = k + a - 1;
                progressed = true;
            }
        }
        if !progressed {
            // identical points: split by position instead
            for (local, &u) in idx.iter().enumerate().skip(max_size) {
                membership[u] = k + local / max_size - 1;
            }
        }
        k = membership.iter().max().unwrap() + 1;
    }
    Ok(GroupAssignment::new(
        k,
        membership,
        start.elapsed() + Duration::from_secs_f64(groups.elapsed_ms / 1e3),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub k: usize,
    pub millis: f64,
    pub iterations: usize,
    pub inertia: f64,
}

/// Formation wall time per requested K, on a single fixed embedding.
pub fn bench_formation(z: ArrayView2<f64>, k_list: &[usize], seed: u64) -> Result<Vec<BenchRow>> {
    if k_list.is_empty() {
        return Err(Error::Config("empty K list".into()));
    }
    k_list
        .iter()
        .map(|&k| {
            let (g, iterations, inertia) = form_groups_detailed(z, k, seed)?;
            Ok(BenchRow {
                k,
                millis: g.elapsed_ms,
                iterations,
                inertia,
            })
        })
        .collect()
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = String::from("k\tmillis\titerations\tinertia\n");
    for r in rows {
        writeln!(s, "{}\t{:.4}\t{}\t{:.6}", r.k, r.millis, r.iterations, r.inertia).unwrap();
    }
    s
}
