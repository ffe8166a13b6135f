//! Training configuration and its flat `key = value` text form.

use std::fmt::Write as _;

use crate::contrastive::NceDenominator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    /// Plain full-batch gradient descent.
    #[default]
    Gd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenseTerms {
    /// Observed entries plus an equal number of sampled zeros, redrawn each epoch.
    #[default]
    Sampled,
    /// Every entry of the dense residuals.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Propagation hops `L`.
    pub hops: usize,
    pub d: usize,
    pub h1: usize,
    pub h2: usize,
    pub k_max: usize,
    /// Train with this K at every resample instead of drawing it.
    pub fixed_k: Option<usize>,
    pub margin: f64,
    pub tau: f64,
    pub n_neg: usize,
    pub w_gcn_z: f64,
    pub w_gcn_a: f64,
    pub w_ae: f64,
    pub w_align: f64,
    pub w_cluster: f64,
    pub w_contrast: f64,
    pub seed: u64,
    pub k_resample_every: usize,
    pub optimizer: OptimizerKind,
    pub nce_denominator: NceDenominator,
    pub dense_terms: DenseTerms,
    /// Per-row neighbour cap of the similarity graph; `None` keeps all edges.
    pub graph_top_k: Option<usize>,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            epochs: 200,
            hops: 3,
            d: 64,
            h1: 256,
            h2: 128,
            k_max: crate::cluster::DEFAULT_K_MAX,
            fixed_k: None,
            margin: crate::contrastive::DEFAULT_MARGIN,
            tau: crate::contrastive::DEFAULT_TAU,
            n_neg: crate::contrastive::DEFAULT_N_NEG,
            w_gcn_z: 1.0,
            w_gcn_a: 1.0,
            w_ae: 1.0,
            w_align: 1.0,
            w_cluster: 1.0,
            w_contrast: 1.0,
            seed: 0,
            k_resample_every: 1,
            optimizer: OptimizerKind::Gd,
            nce_denominator: NceDenominator::WithPositive,
            dense_terms: DenseTerms::Sampled,
            graph_top_k: Some(crate::graph::DEFAULT_TOP_K),
            kmeans_max_iter: crate::cluster::DEFAULT_MAX_ITER,
            kmeans_tol: crate::cluster::DEFAULT_TOL,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn optional(key: &str, v: &str) -> Result<Option<usize>> {
    match v {
        "none" | "" => Ok(None),
        _ => num(key, v).map(Some),
    }
}

impl TrainConfig {
    /// Applies one `key = value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lr" => self.lr = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "hops" => self.hops = num(key, v)?,
            "d" => self.d = num(key, v)?,
            "h1" => self.h1 = num(key, v)?,
            "h2" => self.h2 = num(key, v)?,
            "k_max" => self.k_max = num(key, v)?,
            "fixed_k" => self.fixed_k = optional(key, v)?,
            "margin" => self.margin = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "n_neg" => self.n_neg = num(key, v)?,
            "w_gcn_z" => self.w_gcn_z = num(key, v)?,
            "w_gcn_a" => self.w_gcn_a = num(key, v)?,
            "w_ae" => self.w_ae = num(key, v)?,
            "w_align" => self.w_align = num(key, v)?,
            "w_cluster" => self.w_cluster = num(key, v)?,
            "w_contrast" => self.w_contrast = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "k_resample_every" => self.k_resample_every = num(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "gd" => OptimizerKind::Gd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(Error::Config(format!("optimizer: unknown {v:?} (gd|adam)"))),
                }
            }
            "nce_denominator" => self.nce_denominator = v.parse()?,
            "dense_terms" => {
                self.dense_terms = match v {
                    "sampled" => DenseTerms::Sampled,
                    "exact" => DenseTerms::Exact,
                    _ => return Err(Error::Config(format!("dense_terms: unknown {v:?} (sampled|exact)"))),
                }
            }
            "graph_top_k" => self.graph_top_k = optional(key, v)?,
            "kmeans_max_iter" => self.kmeans_max_iter = num(key, v)?,
            "kmeans_tol" => self.kmeans_tol = num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses the flat config format over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.w_gcn_z,
            self.w_gcn_a,
            self.w_ae,
            self.w_align,
            self.w_cluster,
            self.w_contrast,
        ];
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("loss weights must be non-negative");
        }
        if self.k_max < 2 {
            return bad("k_max must be at least 2");
        }
        if matches!(self.fixed_k, Some(k) if k < 2) {
            return bad("fixed_k must be at least 2");
        }
        if self.d == 0 || self.h1 == 0 || self.h2 == 0 {
            return bad("layer sizes must be positive");
        }
        if !(self.margin > 0.0) || !(self.tau > 0.0) {
            return bad("margin and tau must be positive");
        }
        if self.k_resample_every == 0 {
            return bad("k_resample_every must be at least 1");
        }
        Ok(())
    }

    /// Canonical text form; [`TrainConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |k| k.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("lr", format!("{:e}", self.lr));
        kv("epochs", self.epochs.to_string());
        kv("hops", self.hops.to_string());
        kv("d", self.d.to_string());
        kv("h1", self.h1.to_string());
        kv("h2", self.h2.to_string());
        kv("k_max", self.k_max.to_string());
        kv("fixed_k", opt(self.fixed_k));
        kv("margin", self.margin.to_string());
        kv("tau", self.tau.to_string());
        kv("n_neg", self.n_neg.to_string());
        kv("w_gcn_z", self.w_gcn_z.to_string());
        kv("w_gcn_a", self.w_gcn_a.to_string());
        kv("w_ae", self.w_ae.to_string());
        kv("w_align", self.w_align.to_string());
        kv("w_cluster", self.w_cluster.to_string());
        kv("w_contrast", self.w_contrast.to_string());
        kv("seed", self.seed.to_string());
        kv("k_resample_every", self.k_resample_every.to_string());
        kv(
            "optimizer",
            match self.optimizer {
                OptimizerKind::Gd => "gd",
                OptimizerKind::Adam => "adam",
            }
            .into(),
        );
        kv("nce_denominator", self.nce_denominator.to_string());
        kv(
            "dense_terms",
            match self.dense_terms {
                DenseTerms::Sampled => "sampled",
                DenseTerms::Exact => "exact",
            }
            .into(),
        );
        kv("graph_top_k", opt(self.graph_top_k));
        kv("kmeans_max_iter", self.kmeans_max_iter.to_string());
        kv("kmeans_tol", self.kmeans_tol.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.epochs, 200);
        assert_eq!(c.lr, 1e-5);
        assert_eq!(c.k_max, 128);
    }

    #[test]
    fn text_round_trip_and_unknown_keys() {
        let mut c = TrainConfig::default();
        c.set("fixed_k", "12").unwrap();
        c.set("optimizer", "adam").unwrap();
        c.set("dense_terms", "exact").unwrap();
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        assert!(TrainConfig::parse("epochz = 3").is_err());
        assert!(TrainConfig::parse("epochs = 0").is_err());
        let c = TrainConfig::parse("# comment\nepochs = 1  # one\n").unwrap();
        assert_eq!(c.epochs, 1);
    }
}
