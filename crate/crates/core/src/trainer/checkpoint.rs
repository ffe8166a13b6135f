//! DFCK checkpoint files.
//!
//! Layout (little-endian): magic `DFCK`, version `u16`, `n_users n_items d
//! h1 h2` as `u32`, activation `u8`, hops `u32`, graph top-k `u32` (0 = all),
//! then the 13 parameter tensors as `f32` in declaration order. A trailing
//! section, flagged by one `u8`, holds the resumable training state.

use std::path::Path;

use ndarray::Array2;

use super::config::{OptimizerKind, TrainConfig};
use super::optim::{Moments, OptimizerState};
use crate::binio::{read_file, write_atomic, LeReader, LeWriter};
use crate::encoder::{Activation, ModelParams, ModelShape};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DFCK";
const VERSION: u16 = 1;

/// Everything needed to continue training where a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub next_epoch: usize,
    pub lr: f64,
    pub centroids: Array2<f64>,
    pub hard_assign: Vec<usize>,
    pub optimizer: OptimizerState,
}

impl TrainState {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub hops: usize,
    pub graph_top_k: Option<usize>,
    pub state: Option<TrainState>,
}

fn write_params(w: &mut LeWriter, p: &ModelParams) {
    for t in p.tensors() {
        w.f32s(t.iter().copied());
    }
}

fn read_params(r: &mut LeReader, shape: ModelShape, activation: Activation) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(shape);
    p.activation = activation;
    for t in p.tensors_mut() {
        let vals = r.f32s(t.len())?;
        t.copy_from_slice(&vals);
    }
    Ok(p)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.params.shape();
        let mut w = LeWriter::default();
        w.magic(MAGIC);
        w.u16(VERSION);
        for v in [s.n_users, s.n_items, s.d, s.h1, s.h2] {
            w.u32(v as u32);
        }
        w.u8(self.params.activation.code());
        w.u32(self.hops as u32);
        w.u32(self.graph_top_k.unwrap_or(0) as u32);
        write_params(&mut w, &self.params);
        match &self.state {
            None => w.u8(0),
            Some(st) => {
                w.u8(1);
                w.str(&st.config.to_text());
                w.u32(st.next_epoch as u32);
                w.f64(st.lr);
                w.u32(st.k() as u32);
                w.f32s(st.centroids.iter().copied());
                for &a in &st.hard_assign {
                    w.u32(a as u32);
                }
                let opt = &st.optimizer;
                w.u8(match opt.kind {
                    OptimizerKind::Gd => 0,
                    OptimizerKind::Adam => 1,
                });
                w.u64(opt.step);
                if let Some((m, v)) = &opt.moments {
                    for mom in [m, v] {
                        write_params(&mut w, &mom.params);
                        w.f32s(mom.mu.iter().copied());
                    }
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = LeReader::new(data, "checkpoint");
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint: unsupported version {version}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let shape = ModelShape {
            n_users: dims[0],
            n_items: dims[1],
            d: dims[2],
            h1: dims[3],
            h2: dims[4],
        };
        let activation = Activation::from_code(r.u8()?)?;
        let hops = r.u32()? as usize;
        let graph_top_k = match r.u32()? {
            0 => None,
            k => Some(k as usize),
        };
        let params = read_params(&mut r, shape, activation)?;
        let state = match r.u8()? {
            0 => None,
            1 => {
                let config = TrainConfig::parse(&r.str()?)?;
                let next_epoch = r.u32()? as usize;
                let lr = r.f64()?;
                let k = r.u32()? as usize;
                let centroids = Array2::from_shape_vec((k, shape.d), r.f32s(k * shape.d)?)
                    .map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
                let mut hard_assign = Vec::with_capacity(shape.n_users);
                for _ in 0..shape.n_users {
                    let a = r.u32()? as usize;
                    if a >= k {
                        return Err(Error::Format(format!("checkpoint: label {a} out of range for K={k}")));
                    }
                    hard_assign.push(a);
                }
                let kind = match r.u8()? {
                    0 => OptimizerKind::Gd,
                    1 => OptimizerKind::Adam,
                    c => return Err(Error::Format(format!("checkpoint: unknown optimizer code {c}"))),
                };
                let step = r.u64()?;
                let moments = match kind {
                    OptimizerKind::Gd => None,
                    OptimizerKind::Adam => {
                        let mut read_moments = || -> Result<Moments> {
                            let params = read_params(&mut r, shape, activation)?;
                            let mu = Array2::from_shape_vec((k, shape.d), r.f32s(k * shape.d)?)
                                .map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
                            Ok(Moments { params, mu })
                        };
                        let m = read_moments()?;
                        let v = read_moments()?;
                        Some((m, v))
                    }
                };
                Some(TrainState {
                    config,
                    next_epoch,
                    lr,
                    centroids,
                    hard_assign,
                    optimizer: OptimizerState { kind, step, moments },
                })
            }
            f => return Err(Error::Format(format!("checkpoint: bad state flag {f}"))),
        };
        r.finish()?;
        Ok(Checkpoint {
            params,
            hops,
            graph_top_k,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(kind: OptimizerKind) -> Checkpoint {
        let shape = ModelShape {
            n_users: 5,
            n_items: 4,
            d: 3,
            h1: 4,
            h2: 2,
        };
        let mut params = ModelParams::init(shape, &mut crate::seeded_rng(9, 0));
        params.snap_to_f32();
        let centroids = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f32 as f64 * 0.25);
        let mut optimizer = OptimizerState::new(kind, &params, &centroids);
        if let Some((m, _)) = &mut optimizer.moments {
            m.mu.fill(0.5);
        }
        Checkpoint {
            params,
            hops: 3,
            graph_top_k: Some(50),
            state: Some(TrainState {
                config: TrainConfig::default(),
                next_epoch: 7,
                lr: 5e-6,
                centroids,
                hard_assign: vec![0, 1, 1, 0, 1],
                optimizer,
            }),
        }
    }

    #[test]
    fn round_trips_exactly() {
        for kind in [OptimizerKind::Gd, OptimizerKind::Adam] {
            let c = sample(kind);
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            assert_eq!(back, c);
        }
        let mut bare = sample(OptimizerKind::Gd);
        bare.state = None;
        bare.graph_top_k = None;
        assert_eq!(Checkpoint::from_bytes(&bare.to_bytes()).unwrap(), bare);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let bytes = sample(OptimizerKind::Adam).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
