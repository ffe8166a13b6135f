//! Browser bindings: generate a planted-block population, train the
//! embedding model a few epochs at a time, then partition users at any K
//! and compare group recommendation quality against raw-rating K-Means.

use ndarray::{Array2, Axis};
use wasm_bindgen::prelude::*;

use groupform::eval::{clustering_quality, evaluate_pipeline, EvalOptions};
use groupform::formation::{embed, form_groups, GroupAssignment};
use groupform::graph::UserGraph;
use groupform::grouprec::baselines::baseline_kmeans_groups;
use groupform::grouprec::{spectral_projection, NeighborFilled, Strategy};
use groupform::ingest::Dataset;
use groupform::sparse::Csr;
use groupform::synth::{generate, SynthSpec};
use groupform::trainer::{Checkpoint, TrainConfig, Trainer};

fn js_err(e: groupform::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One synthetic population and the model being trained on it.
#[wasm_bindgen]
pub struct Session {
    ds: Dataset,
    graph: UserGraph,
    top: Vec<usize>,
    leaf: Vec<usize>,
    ckpt: Checkpoint,
    losses: Vec<f64>,
    seed: u64,
}

#[wasm_bindgen]
impl Session {
    /// `blocks` is a comma-separated hierarchy such as `"3"` or `"3,2,2"`.
    #[wasm_bindgen(constructor)]
    pub fn new(users: usize, items: usize, blocks: &str, noise: f64, lr: f64, seed: u64) -> Result<Session, JsError> {
        Self::build(users, items, blocks, noise, lr, seed).map_err(js_err)
    }

    /// Runs `n` more epochs and returns the last total loss.
    pub fn train(&mut self, n: usize) -> Result<f64, JsError> {
        self.advance(n).map_err(js_err)
    }

    /// Partitions users into `k` groups using the current embeddings.
    pub fn form(&self, k: usize) -> Result<Formation, JsError> {
        self.partition(k).map_err(js_err)
    }

    /// HR@10 and NDCG@10 per aggregation strategy (`avg`, `bc`, `lm`) for
    /// the given groups, followed by the same three for raw-rating K-Means
    /// at the same K. Six `[hr, ndcg]` pairs, flattened.
    pub fn compare(&self, formation: &Formation) -> Result<Vec<f64>, JsError> {
        self.metrics(formation).map_err(js_err)
    }

    pub fn users(&self) -> usize {
        self.ds.n_users()
    }

    pub fn epochs_done(&self) -> usize {
        self.losses.len()
    }

    /// Total loss after each completed epoch.
    pub fn losses(&self) -> Vec<f64> {
        self.losses.clone()
    }
}

impl Session {
    fn build(users: usize, items: usize, blocks: &str, noise: f64, lr: f64, seed: u64) -> groupform::Result<Session> {
        let spec = SynthSpec {
            users,
            items,
            blocks: SynthSpec::parse_blocks(blocks)?,
            noise,
            density: 0.3,
            seed,
        };
        let data = generate(&spec)?;
        let ds = data.dataset(0.8, seed)?;
        let top = data.labels_for(&ds, &data.top)?;
        let leaf = data.labels_for(&ds, &data.leaf)?;
        // the epoch budget is set on every resume
        let cfg = TrainConfig {
            lr,
            epochs: 1,
            seed,
            ..TrainConfig::default()
        };
        let graph = UserGraph::build(&ds.x_train, cfg.graph_top_k);
        let ckpt = Trainer::new(&ds.x_train, &graph, cfg)?.checkpoint();
        Ok(Session {
            ds,
            graph,
            top,
            leaf,
            ckpt,
            losses: Vec::new(),
            seed,
        })
    }

    fn advance(&mut self, n: usize) -> groupform::Result<f64> {
        let target = self.losses.len() + n;
        let ckpt = self.ckpt.clone();
        let mut t = Trainer::resume(&self.ds.x_train, &self.graph, ckpt, Some(target))?;
        t.run(|r| self.losses.push(r.total()))?;
        self.ckpt = t.checkpoint();
        self.losses
            .last()
            .copied()
            .ok_or_else(|| groupform::Error::Config("train needs at least one epoch".into()))
    }

    fn partition(&self, k: usize) -> groupform::Result<Formation> {
        let z = embed(&self.ckpt, &self.ds, &self.graph)?;
        let groups = form_groups(z.view(), k, self.seed)?;
        Ok(Formation {
            xy: project_2d(&z, self.seed),
            ari_top: clustering_quality(&groups.membership, &self.top).0,
            ari_leaf: clustering_quality(&groups.membership, &self.leaf).0,
            groups,
        })
    }

    fn metrics(&self, formation: &Formation) -> groupform::Result<Vec<f64>> {
        let baseline = baseline_kmeans_groups(&self.ds.x_train, formation.groups.k, self.seed)?;
        let prefs = NeighborFilled {
            x: &self.ds.x_train,
            adjacency: &self.graph.adjacency,
        };
        let opts = EvalOptions {
            k_list: vec![10],
            seed: self.seed,
            ..EvalOptions::default()
        };
        let mut out = Vec::with_capacity(12);
        for g in [&formation.groups, &baseline] {
            for s in [Strategy::Avg, Strategy::Borda, Strategy::LeastMisery] {
                let r = evaluate_pipeline(g, s, &self.ds, &prefs, &opts);
                out.extend([r.hr[0], r.ndcg[0]]);
            }
        }
        Ok(out)
    }
}

/// A partition together with a 2-D view of the embeddings.
#[wasm_bindgen]
pub struct Formation {
    groups: GroupAssignment,
    xy: Vec<f64>,
    ari_top: f64,
    ari_leaf: f64,
}

#[wasm_bindgen]
impl Formation {
    pub fn membership(&self) -> Vec<u32> {
        self.groups.membership.iter().map(|&g| g as u32).collect()
    }

    /// Interleaved `x, y` per user along the two leading principal axes.
    pub fn xy(&self) -> Vec<f64> {
        self.xy.clone()
    }

    pub fn sizes(&self) -> Vec<u32> {
        self.groups.sizes.iter().map(|&s| s as u32).collect()
    }

    pub fn millis(&self) -> f64 {
        self.groups.elapsed_ms
    }

    /// Agreement with the top-level planted blocks.
    pub fn ari_top(&self) -> f64 {
        self.ari_top
    }

    /// Agreement with the finest planted blocks.
    pub fn ari_leaf(&self) -> f64 {
        self.ari_leaf
    }
}

/// Centred rows projected on their two leading principal axes.
fn project_2d(z: &Array2<f64>, seed: u64) -> Vec<f64> {
    let mean = z.mean_axis(Axis(0)).expect("at least one user");
    let centred = z - &mean;
    let p = spectral_projection(&Csr::from_dense(centred.view()), 2, seed);
    p.outer_iter()
        .flat_map(|r| [r[0], r.get(1).copied().unwrap_or(0.0)])
        .collect()
}
