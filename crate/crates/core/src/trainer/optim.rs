//! Parameter updates: gradient descent and Adam.

use ndarray::{Array2, Zip};

use super::config::OptimizerKind;
use crate::encoder::ModelParams;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First or second moment estimates for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub params: ModelParams,
    pub mu: Array2<f64>,
}

impl Moments {
    fn zeros(params: &ModelParams, mu: &Array2<f64>) -> Self {
        Moments {
            params: params.zeros_like(),
            mu: Array2::zeros(mu.dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    /// Adam moments `(m, v)`; absent for gradient descent.
    pub moments: Option<(Moments, Moments)>,
}

fn snap(a: &mut [f64]) {
    a.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ModelParams, mu: &Array2<f64>) -> Self {
        let moments = match kind {
            OptimizerKind::Gd => None,
            OptimizerKind::Adam => Some((Moments::zeros(params, mu), Moments::zeros(params, mu))),
        };
        OptimizerState { kind, step: 0, moments }
    }

    /// Zeroes the centroid moments after the centroids were replaced.
    pub fn reset_centroids(&mut self, mu: &Array2<f64>) {
        if let Some((m, v)) = &mut self.moments {
            m.mu = Array2::zeros(mu.dim());
            v.mu = Array2::zeros(mu.dim());
        }
    }

    /// One update of `params` and `mu`. Every stored value is rounded to
    /// `f32` afterwards so checkpoints capture the state exactly.
    pub fn apply(
        &mut self,
        params: &mut ModelParams,
        mu: &mut Array2<f64>,
        grads: &ModelParams,
        dmu: &Array2<f64>,
        lr: f64,
    ) {
        self.step += 1;
        match &mut self.moments {
            None => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
                }
                mu.scaled_add(-lr, dmu);
            }
            Some((m, v)) => {
                let t = self.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *m = *m as f32 as f64;
                    *v = *v as f32 as f64;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                };
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(m.params.tensors_mut())
                    .zip(v.params.tensors_mut());
                for (((p, g), m), v) in tensors {
                    for i in 0..p.len() {
                        update(&mut p[i], g[i], &mut m[i], &mut v[i]);
                    }
                }
                Zip::from(&mut *mu)
                    .and(dmu)
                    .and(&mut m.mu)
                    .and(&mut v.mu)
                    .for_each(|p, &g, m, v| update(p, g, m, v));
            }
        }
        params.snap_to_f32();
        snap(mu.as_slice_mut().expect("standard layout"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelShape;

    fn tiny() -> (ModelParams, Array2<f64>) {
        let shape = ModelShape {
            n_users: 3,
            n_items: 4,
            d: 2,
            h1: 3,
            h2: 2,
        };
        let p = ModelParams::init(shape, &mut crate::seeded_rng(1, 0));
        (p, Array2::from_elem((2, 2), 0.5))
    }

    #[test]
    fn gd_moves_against_gradient() {
        let (mut p, mut mu) = tiny();
        p.snap_to_f32();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.z.fill(1.0);
        let dmu = Array2::from_elem((2, 2), -1.0);
        let mut opt = OptimizerState::new(OptimizerKind::Gd, &p, &mu);
        opt.apply(&mut p, &mut mu, &g, &dmu, 0.25);
        assert!((p.z[[0, 0]] - (before.z[[0, 0]] - 0.25)).abs() < 1e-6);
        assert_eq!(p.enc[0].w, before.enc[0].w);
        assert_eq!(mu[[1, 1]], 0.75);
    }

    #[test]
    fn adam_first_step_has_unit_magnitude() {
        let (mut p, mut mu) = tiny();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.z.fill(3.0);
        let dmu = Array2::zeros((2, 2));
        let mut opt = OptimizerState::new(OptimizerKind::Adam, &p, &mu);
        opt.apply(&mut p, &mut mu, &g, &dmu, 0.01);
        let moved = before.z[[1, 1]] - p.z[[1, 1]];
        assert!((moved - 0.01).abs() < 1e-6, "{moved}");
        assert_eq!(mu, Array2::from_elem((2, 2), 0.5));
    }
}
