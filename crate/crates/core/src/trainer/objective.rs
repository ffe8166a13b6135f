//! The full training objective: alignment, clustering and contrastive terms.

use ndarray::{Array2, ArrayView2};

use crate::cluster::{cluster_loss, cluster_loss_grad, soft_assign};
use crate::contrastive::{infonce_loss, triplet_loss, ContrastBatch, NceDenominator};
use crate::encoder::{align_backward, align_loss, encode, AlignInputs, AlignWeights, EncoderOutput, EntrySet, ModelParams};
use crate::error::Result;
use crate::graph::UserGraph;
use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub align: AlignWeights,
    pub cluster: f64,
    pub contrast: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            align: AlignWeights::default(),
            cluster: 1.0,
            contrast: 1.0,
        }
    }
}

impl LossWeights {
    /// All weights zero except the named term (`total` keeps `self`).
    pub fn only(&self, term: &str) -> LossWeights {
        if term == "total" {
            return *self;
        }
        let mut w = LossWeights {
            align: AlignWeights {
                gcn_z: 0.0,
                gcn_a: 0.0,
                ae: 0.0,
                align: 0.0,
            },
            cluster: 0.0,
            contrast: 0.0,
        };
        match term {
            "gcn_z" => w.align.gcn_z = 1.0,
            "gcn_a" => w.align.gcn_a = 1.0,
            "ae" => w.align.ae = 1.0,
            "align" => w.align.align = 1.0,
            "cluster" => w.cluster = 1.0,
            // triplet and InfoNCE share one weight; the split is done by `Objective::terms`
            "triplet" | "nce" => w.contrast = 1.0,
            other => panic!("unknown loss term {other}"),
        }
        w
    }
}

/// Weighted loss components; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub gcn_z: f64,
    pub gcn_a: f64,
    pub ae: f64,
    pub align: f64,
    pub cluster: f64,
    pub triplet: f64,
    pub nce: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.gcn_z + self.gcn_a + self.ae + self.align + self.cluster + self.triplet + self.nce
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

/// Everything the objective holds fixed during one evaluation: data, graph,
/// sampled entries, targets `P` and the contrastive batch.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub x: &'a Csr,
    pub graph: &'a UserGraph,
    pub hops: usize,
    pub a_entries: &'a EntrySet,
    pub x_entries: &'a EntrySet,
    pub targets: ArrayView2<'a, f64>,
    pub batch: &'a ContrastBatch,
    pub weights: LossWeights,
    pub margin: f64,
    pub tau: f64,
    pub nce_mode: NceDenominator,
    /// Which contrastive parts are active; both by default.
    pub use_triplet: bool,
    pub use_nce: bool,
}

impl<'a> Objective<'a> {
    fn align_inputs(&self) -> AlignInputs<'a> {
        AlignInputs {
            x: self.x,
            graph: self.graph,
            hops: self.hops,
            a_entries: self.a_entries,
            x_entries: self.x_entries,
            weights: self.weights.align,
        }
    }

    /// Restricts the objective to one named term with unit weight.
    pub fn restricted(&self, term: &str) -> Objective<'a> {
        let mut o = *self;
        o.weights = self.weights.only(term);
        match term {
            "triplet" => o.use_nce = false,
            "nce" => o.use_triplet = false,
            _ => {}
        }
        o
    }

    pub fn loss(&self, params: &ModelParams, mu: ArrayView2<f64>) -> Result<LossBreakdown> {
        let out = encode(self.graph, self.x, params, self.hops)?;
        let a = align_loss(&out, params, &self.align_inputs());
        let mut b = LossBreakdown {
            gcn_z: a.gcn_z,
            gcn_a: a.gcn_a,
            ae: a.ae,
            align: a.align,
            ..Default::default()
        };
        let z = out.z_final.view();
        if self.weights.cluster != 0.0 {
            let q = soft_assign(z, mu);
            b.cluster = self.weights.cluster * cluster_loss(self.targets, q.view());
        }
        if self.weights.contrast != 0.0 {
            if self.use_triplet {
                b.triplet = self.weights.contrast * triplet_loss(self.batch, z, mu, self.margin).0;
            }
            if self.use_nce {
                b.nce = self.weights.contrast * infonce_loss(self.batch, z, self.tau, self.nce_mode).0;
            }
        }
        Ok(b)
    }

    /// Loss, parameter gradients and centroid gradients.
    pub fn gradient(&self, params: &ModelParams, mu: ArrayView2<f64>) -> Result<(LossBreakdown, ModelParams, Array2<f64>)> {
        let out = encode(self.graph, self.x, params, self.hops)?;
        Ok(self.gradient_at(&out, params, mu))
    }

    /// As [`Objective::gradient`], reusing a forward pass of `params`.
    pub fn gradient_at(
        &self,
        out: &EncoderOutput,
        params: &ModelParams,
        mu: ArrayView2<f64>,
    ) -> (LossBreakdown, ModelParams, Array2<f64>) {
        let z = out.z_final.view();
        let mut b = LossBreakdown::default();
        let mut dz = Array2::<f64>::zeros(z.dim());
        let mut dmu = Array2::<f64>::zeros(mu.dim());
        if self.weights.cluster != 0.0 {
            let (l, gz, gmu) = cluster_loss_grad(z, mu, self.targets);
            b.cluster = self.weights.cluster * l;
            dz.scaled_add(self.weights.cluster, &gz);
            dmu.scaled_add(self.weights.cluster, &gmu);
        }
        if self.weights.contrast != 0.0 {
            let w = self.weights.contrast;
            if self.use_triplet {
                let (l, gz, gmu) = triplet_loss(self.batch, z, mu, self.margin);
                b.triplet = w * l;
                dz.scaled_add(w, &gz);
                dmu.scaled_add(w, &gmu);
            }
            if self.use_nce {
                let (l, gz) = infonce_loss(self.batch, z, self.tau, self.nce_mode);
                b.nce = w * l;
                dz.scaled_add(w, &gz);
            }
        }
        let (grads, a) = align_backward(out, params, &self.align_inputs(), Some(&dz));
        b.gcn_z = a.gcn_z;
        b.gcn_a = a.gcn_a;
        b.ae = a.ae;
        b.align = a.align;
        (b, grads, dmu)
    }

    /// Activity pattern of every triplet hinge, used to detect kinks.
    pub fn hinge_pattern(&self, params: &ModelParams, mu: ArrayView2<f64>) -> Result<Vec<bool>> {
        let out = encode(self.graph, self.x, params, self.hops)?;
        Ok(self
            .batch
            .triplets
            .iter()
            .map(|t| crate::contrastive::triplet_term(out.z_final.view(), mu, t, self.margin) > 0.0)
            .collect())
    }
}
