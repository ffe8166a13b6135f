//! Diagonal-covariance Gaussian mixture fitted by EM.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

const MAX_RESTARTS: u64 = 3;

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
    pub weights: Array1<f64>,
    /// Responsibilities of the final parameters, `n × k`.
    pub resp: Array2<f64>,
    pub assign: Vec<usize>,
    /// Log-likelihood before each M-step, plus the final value.
    pub log_likelihood: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// E-step: responsibilities and total log-likelihood.
fn e_step(
    data: ArrayView2<f64>,
    means: &Array2<f64>,
    vars: &Array2<f64>,
    weights: &Array1<f64>,
) -> (Array2<f64>, f64) {
    let (n, d) = data.dim();
    let k = means.nrows();
    let log_norm: Vec<f64> = (0..k)
        .map(|c| {
            weights[c].ln()
                - 0.5
                    * vars
                        .row(c)
                        .iter()
                        .map(|v| (2.0 * std::f64::consts::PI * v).ln())
                        .sum::<f64>()
        })
        .collect();
    let mut resp = Array2::zeros((n, k));
    let mut ll = 0.0;
    let mut row = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            let mut q = 0.0;
            for j in 0..d {
                let diff = data[[i, j]] - means[[c, j]];
                q += diff * diff / vars[[c, j]];
            }
            row[c] = log_norm[c] - 0.5 * q;
        }
        let lse = log_sum_exp(&row);
        ll += lse;
        for c in 0..k {
            resp[[i, c]] = (row[c] - lse).exp();
        }
    }
    (resp, ll)
}

fn fit_once(data: ArrayView2<f64>, k: usize, seed: u64, max_iter: usize, floor: f64) -> Result<GmmFit> {
    let (n, d) = data.dim();
    let mut rng = crate::seeded_rng(seed, 0x6e3);
    let mut means = crate::cluster::plus_plus_seeds(data, k, &mut rng);
    let global_var = data.var_axis(Axis(0), 0.0).mapv(|v| v.max(floor));
    let mut vars = Array2::from_shape_fn((k, d), |(_, j)| global_var[j]);
    let mut weights = Array1::from_elem(k, 1.0 / k as f64);
    let mut history = Vec::new();
    let (mut resp, mut ll) = e_step(data, &means, &vars, &weights);
    for _ in 0..max_iter {
        if !ll.is_finite() {
            return Err(Error::Numeric("non-finite GMM log-likelihood".into()));
        }
        history.push(ll);
        let nk = resp.sum_axis(Axis(0));
        for c in 0..k {
            if nk[c] <= 0.0 {
                weights[c] = 0.0;
                continue;
            }
            weights[c] = nk[c] / n as f64;
            let mut mu = Array1::<f64>::zeros(d);
            for i in 0..n {
                mu.scaled_add(resp[[i, c]], &data.row(i));
            }
            mu /= nk[c];
            let mut var = Array1::<f64>::zeros(d);
            for i in 0..n {
                let diff = &data.row(i) - &mu;
                var.scaled_add(resp[[i, c]], &(&diff * &diff));
            }
            var /= nk[c];
            means.row_mut(c).assign(&mu);
            vars.row_mut(c).assign(&var.mapv(|v| v.max(floor)));
        }
        let (r, new_ll) = e_step(data, &means, &vars, &weights);
        resp = r;
        let converged = (new_ll - ll).abs() <= 1e-10 * ll.abs().max(1.0);
        ll = new_ll;
        if converged {
            break;
        }
    }
    if !ll.is_finite() {
        return Err(Error::Numeric("non-finite GMM log-likelihood".into()));
    }
    history.push(ll);
    let assign = resp
        .outer_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (c, &v)| if v > b.1 { (c, v) } else { b })
                .0
        })
        .collect();
    Ok(GmmFit {
        means,
        variances: vars,
        weights,
        resp,
        assign,
        log_likelihood: history,
    })
}

/// k-means++ initialised EM with a variance floor; restarts with a fresh
/// seed when the likelihood stops being finite.
pub fn fit_diagonal_gmm(data: ArrayView2<f64>, k: usize, seed: u64, max_iter: usize, var_floor: f64) -> Result<GmmFit> {
    if k == 0 || k > data.nrows() {
        return Err(Error::Config(format!("K = {k} must lie in [1, {}]", data.nrows())));
    }
    let mut last = None;
    for attempt in 0..MAX_RESTARTS {
        match fit_once(data, k, seed.wrapping_add(attempt), max_iter, var_floor) {
            Ok(fit) => return Ok(fit),
            Err(e) => {
                log::warn!("GMM attempt {attempt} failed: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.unwrap())
}
