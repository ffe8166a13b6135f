//! Propagation-only graph encoder, rating autoencoder, and the alignment
//! objective with its hand-derived gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::UserGraph;
use crate::sparse::Csr;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, m: &mut Array2<f64>) {
        if self == Activation::Tanh {
            m.mapv_inplace(f64::tanh);
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, out: &Array2<f64>, upstream: &mut Array2<f64>) {
        if self == Activation::Tanh {
            Zip::from(upstream).and(out).for_each(|g, &y| *g *= 1.0 - y * y);
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Identity),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub n_users: usize,
    pub n_items: usize,
    pub d: usize,
    pub h1: usize,
    pub h2: usize,
}

impl std::fmt::Display for ModelShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(users={}, items={}, d={}, h1={}, h2={})",
            self.n_users, self.n_items, self.d, self.h1, self.h2
        )
    }
}

/// One affine layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Affine {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Affine {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

/// User embedding table plus the encoder (`|I| → h1 → h2 → d`) and the
/// mirrored decoder (`d → h2 → h1 → |I|`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub z: Array2<f64>,
    pub enc: [Affine; 3],
    pub dec: [Affine; 3],
    pub activation: Activation,
}

pub const TENSOR_NAMES: [&str; 13] = [
    "Z", "enc1.W", "enc1.b", "enc2.W", "enc2.b", "enc3.W", "enc3.b", "dec1.W", "dec1.b", "dec2.W",
    "dec2.b", "dec3.W", "dec3.b",
];

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let ModelShape {
            n_users,
            n_items,
            d,
            h1,
            h2,
        } = shape;
        ModelParams {
            z: Array2::zeros((n_users, d)),
            enc: [
                Affine::zeros(n_items, h1),
                Affine::zeros(h1, h2),
                Affine::zeros(h2, d),
            ],
            dec: [
                Affine::zeros(d, h2),
                Affine::zeros(h2, h1),
                Affine::zeros(h1, n_items),
            ],
            activation: Activation::Tanh,
        }
    }

    /// Embeddings uniform in `±0.1/√d`; weights uniform in `±1/√fan_in`;
    /// zero biases.
    pub fn init(shape: ModelShape, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(shape);
        let zb = 0.1 / (shape.d as f64).sqrt();
        p.z.mapv_inplace(|_| rng.random_range(-zb..=zb));
        for layer in p.enc.iter_mut().chain(p.dec.iter_mut()) {
            let b = 1.0 / (layer.w.nrows() as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.random_range(-b..=b));
        }
        p
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            n_users: self.z.nrows(),
            n_items: self.enc[0].w.nrows(),
            d: self.z.ncols(),
            h1: self.enc[0].w.ncols(),
            h2: self.enc[1].w.ncols(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.shape());
        z.activation = self.activation;
        z
    }

    /// Flat views in declaration order, named as in [`TENSOR_NAMES`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.z.as_slice().expect("standard layout")];
        for l in self.enc.iter().chain(&self.dec) {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.z.as_slice_mut().expect("standard layout")];
        for l in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Rounds every entry to the nearest `f32`, so that checkpoints store
    /// the parameters losslessly.
    pub fn snap_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

/// `(1/(L+1)) Σ_{l=0..L} Ã^l M`, computed as a running sum.
pub fn propagate(a_norm: &Csr, m: ArrayView2<f64>, hops: usize) -> Array2<f64> {
    let mut acc = m.to_owned();
    let mut cur = m.to_owned();
    for _ in 0..hops {
        cur = a_norm.mul_dense(cur.view()).expect("graph and embedding sizes agree");
        acc += &cur;
    }
    acc /= (hops + 1) as f64;
    acc
}

/// Forward and backward graph representations `(Z_gcn, Ẑ)`.
pub fn gcn_forward(a_norm: &Csr, z: ArrayView2<f64>, hops: usize) -> (Array2<f64>, Array2<f64>) {
    let z_gcn = propagate(a_norm, z, hops);
    let z_hat = propagate(a_norm, z_gcn.view(), hops);
    (z_gcn, z_hat)
}

/// Autoencoder activations. The reconstruction `X̂ = g2 · W6 + b6` is only
/// formed where the loss needs it.
#[derive(Debug, Clone)]
pub struct AeForward {
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub z_ae: Array2<f64>,
    pub g1: Array2<f64>,
    pub g2: Array2<f64>,
}

impl AeForward {
    pub fn x_hat_at(&self, params: &ModelParams, u: usize, i: usize) -> f64 {
        let out = &params.dec[2];
        self.g2.row(u).dot(&out.w.column(i)) + out.b[i]
    }

    pub fn x_hat_dense(&self, params: &ModelParams) -> Array2<f64> {
        params.dec[2].forward(self.g2.view())
    }
}

pub fn ae_forward(x: &Csr, params: &ModelParams) -> AeForward {
    let act = params.activation;
    let e = &params.enc;
    let mut h1 = x.mul_dense(e[0].w.view()).expect("item counts agree") + &e[0].b;
    act.apply(&mut h1);
    let mut h2 = e[1].forward(h1.view());
    act.apply(&mut h2);
    let z_ae = e[2].forward(h2.view());
    let dc = &params.dec;
    let mut g1 = dc[0].forward(z_ae.view());
    act.apply(&mut g1);
    let mut g2 = dc[1].forward(g1.view());
    act.apply(&mut g2);
    AeForward { h1, h2, z_ae, g1, g2 }
}

/// Everything the encoder produces for one parameter state.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub z_gcn: Array2<f64>,
    pub z_hat: Array2<f64>,
    pub ae: AeForward,
    /// `Z_gcn + Z_ae`.
    pub z_final: Array2<f64>,
}

pub fn encode(graph: &UserGraph, x: &Csr, params: &ModelParams, hops: usize) -> Result<EncoderOutput> {
    let shape = params.shape();
    if shape.n_users != x.n_rows() || shape.n_items != x.n_cols() || graph.n_users() != x.n_rows() {
        return Err(Error::Shape {
            expected: format!("{shape}"),
            found: format!(
                "(ratings {}×{}, graph {} users)",
                x.n_rows(),
                x.n_cols(),
                graph.n_users()
            ),
        });
    }
    let (z_gcn, z_hat) = gcn_forward(&graph.normalized, params.z.view(), hops);
    let ae = ae_forward(x, params);
    let z_final = &z_gcn + &ae.z_ae;
    Ok(EncoderOutput {
        z_gcn,
        z_hat,
        ae,
        z_final,
    })
}

/// Which entries of a dense residual the loss sums over.
#[derive(Debug, Clone, PartialEq)]
pub enum EntrySet {
    /// Every entry of the matrix.
    Exact,
    /// The listed `(row, col)` entries (repeats allowed).
    Sampled(Vec<(u32, u32)>),
}

impl EntrySet {
    /// Every stored entry of `pattern` plus an equal number of entries drawn
    /// uniformly among the zeros.
    pub fn sample(pattern: &Csr, rng: &mut Rng) -> Self {
        let (n, m) = (pattern.n_rows(), pattern.n_cols());
        let mut out: Vec<(u32, u32)> = Vec::with_capacity(2 * pattern.nnz());
        for r in 0..n {
            for &c in pattern.row(r).0 {
                out.push((r as u32, c));
            }
        }
        let zeros = n * m - pattern.nnz();
        let want = pattern.nnz().min(zeros);
        if want > 0 && zeros * 20 < n * m {
            let all: Vec<(u32, u32)> = (0..n)
                .flat_map(|r| (0..m).map(move |c| (r, c)))
                .filter(|&(r, c)| !pattern.contains(r, c))
                .map(|(r, c)| (r as u32, c as u32))
                .collect();
            for _ in 0..want {
                out.push(all[rng.random_range(0..all.len())]);
            }
        } else {
            let mut got = 0;
            while got < want {
                let (r, c) = (rng.random_range(0..n), rng.random_range(0..m));
                if !pattern.contains(r, c) {
                    out.push((r as u32, c as u32));
                    got += 1;
                }
            }
        }
        EntrySet::Sampled(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignWeights {
    pub gcn_z: f64,
    pub gcn_a: f64,
    pub ae: f64,
    pub align: f64,
}

impl Default for AlignWeights {
    fn default() -> Self {
        AlignWeights {
            gcn_z: 1.0,
            gcn_a: 1.0,
            ae: 1.0,
            align: 1.0,
        }
    }
}

/// Weighted values of the four alignment terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlignTerms {
    pub gcn_z: f64,
    pub gcn_a: f64,
    pub ae: f64,
    pub align: f64,
}

impl AlignTerms {
    pub fn total(&self) -> f64 {
        self.gcn_z + self.gcn_a + self.ae + self.align
    }
}

/// Fixed inputs of the alignment objective for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct AlignInputs<'a> {
    pub x: &'a Csr,
    pub graph: &'a UserGraph,
    pub hops: usize,
    pub a_entries: &'a EntrySet,
    pub x_entries: &'a EntrySet,
    pub weights: AlignWeights,
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn sq_frob(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
}

/// `w_gcn_z‖Ẑ−Z‖² + w_gcn_a‖σ(Z_gcn Z_gcnᵀ)−A‖² + w_ae‖X̂−X‖² + w_align‖Z_gcn−Z_ae‖²`,
/// with the two dense terms summed over their entry sets.
pub fn align_loss(out: &EncoderOutput, params: &ModelParams, inp: &AlignInputs) -> AlignTerms {
    let w = inp.weights;
    let mut t = AlignTerms::default();
    if w.gcn_z != 0.0 {
        t.gcn_z = w.gcn_z * sq_frob(&out.z_hat, &params.z);
    }
    if w.gcn_a != 0.0 {
        t.gcn_a = w.gcn_a * a_residuals(out, inp, |_, _, r| r * r);
    }
    if w.ae != 0.0 {
        t.ae = w.ae * x_residuals(out, params, inp, |_, _, r| r * r);
    }
    if w.align != 0.0 {
        t.align = w.align * sq_frob(&out.z_gcn, &out.ae.z_ae);
    }
    t
}

/// Sums `f(u, v, σ(g_u·g_v) − a_uv)` over the adjacency entry set.
fn a_residuals(out: &EncoderOutput, inp: &AlignInputs, mut f: impl FnMut(usize, usize, f64) -> f64) -> f64 {
    let g = &out.z_gcn;
    let a = &inp.graph.adjacency;
    let mut acc = 0.0;
    match inp.a_entries {
        EntrySet::Exact => {
            let gram = g.dot(&g.t());
            for u in 0..g.nrows() {
                for v in 0..g.nrows() {
                    acc += f(u, v, sigmoid(gram[[u, v]]) - a.get(u, v));
                }
            }
        }
        EntrySet::Sampled(list) => {
            for &(u, v) in list {
                let (u, v) = (u as usize, v as usize);
                acc += f(u, v, sigmoid(g.row(u).dot(&g.row(v))) - a.get(u, v));
            }
        }
    }
    acc
}

fn x_residuals(
    out: &EncoderOutput,
    params: &ModelParams,
    inp: &AlignInputs,
    mut f: impl FnMut(usize, usize, f64) -> f64,
) -> f64 {
    let x = inp.x;
    let mut acc = 0.0;
    match inp.x_entries {
        EntrySet::Exact => {
            let xh = out.ae.x_hat_dense(params);
            for u in 0..xh.nrows() {
                for i in 0..xh.ncols() {
                    acc += f(u, i, xh[[u, i]] - x.get(u, i));
                }
            }
        }
        EntrySet::Sampled(list) => {
            for &(u, i) in list {
                let (u, i) = (u as usize, i as usize);
                acc += f(u, i, out.ae.x_hat_at(params, u, i) - x.get(u, i));
            }
        }
    }
    acc
}

/// Gradients of the alignment objective plus an optional upstream gradient
/// arriving at `Z_final` (and, separately, at the centroids, which the
/// encoder does not touch). Returns the alignment terms alongside.
pub fn align_backward(
    out: &EncoderOutput,
    params: &ModelParams,
    inp: &AlignInputs,
    d_z_final: Option<&Array2<f64>>,
) -> (ModelParams, AlignTerms) {
    let w = inp.weights;
    let terms = align_loss(out, params, inp);
    let mut grads = params.zeros_like();
    let (n, d) = params.z.dim();

    // gradient w.r.t. Z_gcn and Z_ae before back-propagation
    let mut d_gcn = Array2::<f64>::zeros((n, d));
    let mut d_zae = Array2::<f64>::zeros((n, d));
    if let Some(up) = d_z_final {
        d_gcn += up;
        d_zae += up;
    }
    if w.align != 0.0 {
        let r = (&out.z_gcn - &out.ae.z_ae) * (2.0 * w.align);
        d_gcn += &r;
        d_zae -= &r;
    }
    if w.gcn_a != 0.0 {
        let g = &out.z_gcn;
        let a = &inp.graph.adjacency;
        match inp.a_entries {
            EntrySet::Exact => {
                let gram = g.dot(&g.t());
                let mut ds = Array2::<f64>::zeros((n, n));
                for u in 0..n {
                    for v in 0..n {
                        let s = sigmoid(gram[[u, v]]);
                        ds[[u, v]] = 2.0 * w.gcn_a * (s - a.get(u, v)) * s * (1.0 - s);
                    }
                }
                d_gcn += &ds.dot(g);
                d_gcn += &ds.t().dot(g);
            }
            EntrySet::Sampled(list) => {
                for &(u, v) in list {
                    let (u, v) = (u as usize, v as usize);
                    let s = sigmoid(g.row(u).dot(&g.row(v)));
                    let ds = 2.0 * w.gcn_a * (s - a.get(u, v)) * s * (1.0 - s);
                    let (gu, gv) = (g.row(u).to_owned(), g.row(v).to_owned());
                    d_gcn.row_mut(u).scaled_add(ds, &gv);
                    d_gcn.row_mut(v).scaled_add(ds, &gu);
                }
            }
        }
    }
    if w.gcn_z != 0.0 {
        let r = (&out.z_hat - &params.z) * (2.0 * w.gcn_z);
        grads.z -= &r;
        d_gcn += &propagate(&inp.graph.normalized, r.view(), inp.hops);
    }
    grads.z += &propagate(&inp.graph.normalized, d_gcn.view(), inp.hops);

    // decoder output layer
    let act = params.activation;
    let ae = &out.ae;
    let h1_dim = ae.g2.ncols();
    let mut d_g2 = Array2::<f64>::zeros((n, h1_dim));
    if w.ae != 0.0 {
        let out_layer = &params.dec[2];
        match inp.x_entries {
            EntrySet::Exact => {
                let xh = ae.x_hat_dense(params);
                let r = (xh - inp.x.to_dense()) * (2.0 * w.ae);
                grads.dec[2].w = ae.g2.t().dot(&r);
                grads.dec[2].b = r.sum_axis(Axis(0));
                d_g2 = r.dot(&out_layer.w.t());
            }
            EntrySet::Sampled(list) => {
                let gw = &mut grads.dec[2];
                for &(u, i) in list {
                    let (u, i) = (u as usize, i as usize);
                    let r = 2.0 * w.ae * (ae.x_hat_at(params, u, i) - inp.x.get(u, i));
                    gw.w.column_mut(i).scaled_add(r, &ae.g2.row(u));
                    gw.b[i] += r;
                    d_g2.row_mut(u).scaled_add(r, &out_layer.w.column(i));
                }
            }
        }
    }
    // decoder hidden layers
    act.grad_from_output(&ae.g2, &mut d_g2);
    grads.dec[1].w = ae.g1.t().dot(&d_g2);
    grads.dec[1].b = d_g2.sum_axis(Axis(0));
    let mut d_g1 = d_g2.dot(&params.dec[1].w.t());
    act.grad_from_output(&ae.g1, &mut d_g1);
    grads.dec[0].w = ae.z_ae.t().dot(&d_g1);
    grads.dec[0].b = d_g1.sum_axis(Axis(0));
    d_zae += &d_g1.dot(&params.dec[0].w.t());

    // encoder
    grads.enc[2].w = ae.h2.t().dot(&d_zae);
    grads.enc[2].b = d_zae.sum_axis(Axis(0));
    let mut d_h2 = d_zae.dot(&params.enc[2].w.t());
    act.grad_from_output(&ae.h2, &mut d_h2);
    grads.enc[1].w = ae.h1.t().dot(&d_h2);
    grads.enc[1].b = d_h2.sum_axis(Axis(0));
    let mut d_h1 = d_h2.dot(&params.enc[1].w.t());
    act.grad_from_output(&ae.h1, &mut d_h1);
    grads.enc[0].w = inp.x.tmul_dense(d_h1.view());
    grads.enc[0].b = d_h1.sum_axis(Axis(0));

    (grads, terms)
}
