//! Full-batch training of the encoder, centroids and contrastive terms.

mod checkpoint;
mod config;
mod gradcheck;
mod objective;
mod optim;

use std::fmt::Write as _;

use ndarray::Array2;
use web_time::Instant;

pub use checkpoint::{Checkpoint, TrainState};
pub use config::{DenseTerms, OptimizerKind, TrainConfig};
pub use gradcheck::{grad_check, GradCheckInstance, GradCheckReport, GradCheckRow, GRAD_TOLERANCE};
pub use objective::{LossBreakdown, LossWeights, Objective};
pub use optim::{Moments, OptimizerState};

use crate::cluster::{kmeans, sample_k, soft_assign, target_distribution};
use crate::contrastive::sample_batch;
use crate::encoder::{encode, AlignWeights, EntrySet, ModelParams, ModelShape};
use crate::error::{Error, Result};
use crate::graph::UserGraph;
use crate::sparse::Csr;

const INIT_STREAM: u64 = 0x1417;
const EPOCH_STREAM: u64 = 0xe90c_0000;
/// Attempts at one epoch after a non-finite value before giving up.
pub const MAX_NAN_RETRIES: usize = 3;

pub const LOG_HEADER: &str = "epoch\tk\tgcn_z\tgcn_a\tae\talign\tcluster\ttriplet\tnce\ttotal\tgrad_norm\tlr\twall_ms";

/// One completed epoch. Losses are measured before the epoch's update.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub k: usize,
    pub losses: LossBreakdown,
    pub grad_norm: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

impl EpochRecord {
    pub fn total(&self) -> f64 {
        self.losses.total()
    }

    pub fn to_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{}\t{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:.3}",
            self.epoch,
            self.k,
            l.gcn_z,
            l.gcn_a,
            l.ae,
            l.align,
            l.cluster,
            l.triplet,
            l.nce,
            l.total(),
            self.grad_norm,
            self.lr,
            self.wall_ms
        )
    }

    /// The record with timing removed, for reproducibility comparisons.
    pub fn untimed(&self) -> EpochRecord {
        EpochRecord {
            wall_ms: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(s, "{}", r.to_row()).unwrap();
        }
        s
    }

    pub fn untimed(&self) -> Vec<EpochRecord> {
        self.records.iter().map(EpochRecord::untimed).collect()
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            align: AlignWeights {
                gcn_z: self.w_gcn_z,
                gcn_a: self.w_gcn_a,
                ae: self.w_ae,
                align: self.w_align,
            },
            cluster: self.w_cluster,
            contrast: self.w_contrast,
        }
    }

    pub fn model_shape(&self, n_users: usize, n_items: usize) -> ModelShape {
        ModelShape {
            n_users,
            n_items,
            d: self.d,
            h1: self.h1,
            h2: self.h2,
        }
    }
}

/// Training session over a fixed rating matrix and user graph.
pub struct Trainer<'a> {
    x: &'a Csr,
    graph: &'a UserGraph,
    cfg: TrainConfig,
    params: ModelParams,
    centroids: Array2<f64>,
    hard_assign: Vec<usize>,
    opt: OptimizerState,
    lr: f64,
    next_epoch: usize,
    log: TrainLog,
}

fn check_inputs(x: &Csr, graph: &UserGraph) -> Result<()> {
    if graph.n_users() != x.n_rows() {
        return Err(Error::Shape {
            expected: format!("graph over {} users", x.n_rows()),
            found: format!("graph over {} users", graph.n_users()),
        });
    }
    if x.n_rows() < 2 {
        return Err(Error::Data("training needs at least two users".into()));
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    /// Fresh parameters drawn from the configured seed.
    pub fn new(x: &'a Csr, graph: &'a UserGraph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_inputs(x, graph)?;
        let shape = cfg.model_shape(x.n_rows(), x.n_cols());
        let mut params = ModelParams::init(shape, &mut crate::seeded_rng(cfg.seed, INIT_STREAM));
        params.snap_to_f32();
        let centroids = Array2::zeros((0, cfg.d));
        let opt = OptimizerState::new(cfg.optimizer, &params, &centroids);
        Ok(Trainer {
            x,
            graph,
            lr: cfg.lr,
            cfg,
            params,
            centroids,
            hard_assign: Vec::new(),
            opt,
            next_epoch: 0,
            log: TrainLog::default(),
        })
    }

    /// Continues from a checkpoint that carries training state. `epochs`
    /// optionally replaces the stored epoch budget.
    pub fn resume(x: &'a Csr, graph: &'a UserGraph, ckpt: Checkpoint, epochs: Option<usize>) -> Result<Self> {
        check_inputs(x, graph)?;
        let state = ckpt
            .state
            .ok_or_else(|| Error::Config("checkpoint has no training state to resume from".into()))?;
        let mut cfg = state.config;
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        let shape = ckpt.params.shape();
        if shape != cfg.model_shape(x.n_rows(), x.n_cols()) {
            return Err(Error::Shape {
                expected: format!("{}", cfg.model_shape(x.n_rows(), x.n_cols())),
                found: format!("checkpoint {shape}"),
            });
        }
        Ok(Trainer {
            x,
            graph,
            cfg,
            params: ckpt.params,
            centroids: state.centroids,
            hard_assign: state.hard_assign,
            opt: state.optimizer,
            lr: state.lr,
            next_epoch: state.next_epoch,
            log: TrainLog::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn hard_assign(&self) -> &[usize] {
        &self.hard_assign
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            hops: self.cfg.hops,
            graph_top_k: self.cfg.graph_top_k,
            state: Some(TrainState {
                config: self.cfg.clone(),
                next_epoch: self.next_epoch,
                lr: self.lr,
                centroids: self.centroids.clone(),
                hard_assign: self.hard_assign.clone(),
                optimizer: self.opt.clone(),
            }),
        }
    }

    /// Runs one epoch. A non-finite loss, gradient or update restores the
    /// state from before the epoch, halves the learning rate and retries.
    pub fn step(&mut self) -> Result<EpochRecord> {
        let epoch = self.next_epoch;
        let start = Instant::now();
        let mut failures = Vec::new();
        loop {
            let saved = (
                self.params.clone(),
                self.centroids.clone(),
                self.hard_assign.clone(),
                self.opt.clone(),
            );
            match self.try_epoch(epoch) {
                Ok((losses, grad_norm)) => {
                    let rec = EpochRecord {
                        epoch,
                        k: self.centroids.nrows(),
                        losses,
                        grad_norm,
                        lr: self.lr,
                        wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    };
                    self.next_epoch += 1;
                    self.log.records.push(rec.clone());
                    return Ok(rec);
                }
                Err(Error::Numeric(msg)) => {
                    (self.params, self.centroids, self.hard_assign, self.opt) = saved;
                    failures.push(format!("lr={:e}: {msg}", self.lr));
                    if failures.len() > MAX_NAN_RETRIES {
                        return Err(Error::Numeric(format!(
                            "epoch {epoch} stayed non-finite after {MAX_NAN_RETRIES} learning-rate halvings \
                             (|params|²={:e}, K={}): {}",
                            self.params.sq_norm(),
                            self.centroids.nrows(),
                            failures.join("; ")
                        )));
                    }
                    log::warn!("epoch {epoch}: {msg}; halving learning rate");
                    self.lr *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn try_epoch(&mut self, epoch: usize) -> Result<(LossBreakdown, f64)> {
        let cfg = &self.cfg;
        let n = self.x.n_rows();
        let mut rng = crate::seeded_rng(cfg.seed, EPOCH_STREAM + epoch as u64);
        let resample = self.centroids.nrows() == 0 || epoch % cfg.k_resample_every == 0;
        if resample {
            let k = match cfg.fixed_k {
                Some(k) => k.min(n),
                None => sample_k(cfg.k_max.min(n), &mut rng)?,
            };
            let out = encode(self.graph, self.x, &self.params, cfg.hops)?;
            let km = kmeans(
                out.z_final.view(),
                k,
                cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                cfg.kmeans_max_iter,
                cfg.kmeans_tol,
            )?;
            self.centroids = km.centroids.mapv(|v| v as f32 as f64);
            self.hard_assign = km.assign;
            self.opt.reset_centroids(&self.centroids);
        }
        let (a_entries, x_entries) = match cfg.dense_terms {
            DenseTerms::Exact => (EntrySet::Exact, EntrySet::Exact),
            DenseTerms::Sampled => (
                EntrySet::sample(&self.graph.adjacency, &mut rng),
                EntrySet::sample(self.x, &mut rng),
            ),
        };
        let batch = sample_batch(&self.hard_assign, &mut rng, cfg.n_neg);

        let out = encode(self.graph, self.x, &self.params, cfg.hops)?;
        let p = target_distribution(soft_assign(out.z_final.view(), self.centroids.view()).view());
        let obj = Objective {
            x: self.x,
            graph: self.graph,
            hops: cfg.hops,
            a_entries: &a_entries,
            x_entries: &x_entries,
            targets: p.view(),
            batch: &batch,
            weights: cfg.loss_weights(),
            margin: cfg.margin,
            tau: cfg.tau,
            nce_mode: cfg.nce_denominator,
            use_triplet: true,
            use_nce: true,
        };
        let (losses, grads, dmu) = obj.gradient_at(&out, &self.params, self.centroids.view());
        let grad_sq = grads.sq_norm() + dmu.iter().map(|v| v * v).sum::<f64>();
        if !losses.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {losses:?}")));
        }
        if !grad_sq.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.opt
            .apply(&mut self.params, &mut self.centroids, &grads, &dmu, self.lr);
        if !self.params.is_finite() || self.centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameters after update".into()));
        }
        Ok((losses, grad_sq.sqrt()))
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        while !self.is_done() {
            let rec = self.step()?;
            log::info!(
                "epoch {} K={} loss={:.6e} |g|={:.3e}",
                rec.epoch,
                rec.k,
                rec.total(),
                rec.grad_norm
            );
            on_epoch(&rec);
        }
        Ok(())
    }
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(x: &Csr, graph: &UserGraph, cfg: &TrainConfig) -> Result<(Checkpoint, TrainLog)> {
    let mut t = Trainer::new(x, graph, cfg.clone())?;
    t.run(|_| {})?;
    Ok((t.checkpoint(), t.log.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn toy(users: usize) -> (Csr, UserGraph) {
        let spec = SynthSpec {
            users,
            items: 16,
            blocks: vec![2],
            noise: 0.05,
            density: 0.5,
            seed: 4,
        };
        let ds = generate(&spec).unwrap().dataset(0.8, 4).unwrap();
        let g = UserGraph::build(&ds.x_train, None);
        (ds.x_train, g)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            d: 4,
            h1: 8,
            h2: 6,
            epochs: 4,
            k_max: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn logged_total_is_sum_of_components() {
        let (x, g) = toy(20);
        let (_, log) = train(&x, &g, &small_cfg()).unwrap();
        assert_eq!(log.records.len(), 4);
        for (i, r) in log.records.iter().enumerate() {
            assert_eq!(r.epoch, i);
            let l = &r.losses;
            let sum = l.gcn_z + l.gcn_a + l.ae + l.align + l.cluster + l.triplet + l.nce;
            assert!((sum - r.total()).abs() <= 1e-6);
            assert!((2..=4).contains(&r.k));
        }
        let tsv = log.to_tsv();
        assert!(tsv.starts_with(LOG_HEADER));
        assert_eq!(tsv.lines().count(), 5);
    }

    #[test]
    fn alignment_only_descends() {
        let (x, g) = toy(20);
        let cfg = TrainConfig {
            epochs: 10,
            lr: 1e-2,
            w_cluster: 0.0,
            w_contrast: 0.0,
            dense_terms: DenseTerms::Exact,
            ..small_cfg()
        };
        let (_, log) = train(&x, &g, &cfg).unwrap();
        for w in log.records.windows(2) {
            assert!(w[1].total() <= w[0].total(), "{} -> {}", w[0].total(), w[1].total());
        }
    }

    #[test]
    fn same_seed_same_run_and_exact_resume() {
        let (x, g) = toy(16);
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            k_resample_every: 2,
            ..small_cfg()
        };
        let (a, la) = train(&x, &g, &cfg).unwrap();
        let (b, lb) = train(&x, &g, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(la.untimed(), lb.untimed());

        let mut t = Trainer::new(&x, &g, TrainConfig { epochs: 3, ..cfg.clone() }).unwrap();
        t.run(|_| {}).unwrap();
        let bytes = t.checkpoint().to_bytes();
        let mut resumed = Trainer::resume(&x, &g, Checkpoint::from_bytes(&bytes).unwrap(), Some(4)).unwrap();
        let rec = resumed.step().unwrap();
        assert_eq!(rec.untimed(), la.records[3].untimed());
        assert_eq!(resumed.checkpoint().to_bytes(), a.to_bytes());
    }

    #[test]
    fn runaway_learning_rate_is_halved_then_fatal() {
        let (x, g) = toy(12);
        let cfg = TrainConfig {
            lr: 1e300,
            epochs: 3,
            ..small_cfg()
        };
        match train(&x, &g, &cfg) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("halvings"), "{msg}"),
            Ok((c, _)) => {
                let st = c.state.unwrap();
                assert!(st.lr < 1e300);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
