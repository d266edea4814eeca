//! E-step: scaled forward-backward recursions.

use crate::error::{Error, Result};
use crate::model::{stochastic_rows, ModelParameters, TimeSeriesDataset};

/// Smoothed posteriors and the observed-data log-likelihood.
///
/// `xi_hat[t - 1][j][k]` is the posterior probability of being in `j` at
/// `t - 1` and `k` at `t`, for `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub z_hat: Vec<[f64; 2]>,
    pub xi_hat: Vec<[[f64; 2]; 2]>,
    pub loglik: f64,
}

impl PosteriorSummary {
    pub fn len(&self) -> usize {
        self.z_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_hat.is_empty()
    }

    /// Marginal MAP state sequence.
    pub fn map_states(&self) -> Vec<usize> {
        self.z_hat
            .iter()
            .map(|z| if z[1] > z[0] { 1 } else { 0 })
            .collect()
    }

    /// Posterior with the regime labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            z_hat: self.z_hat.iter().map(|z| [z[1], z[0]]).collect(),
            xi_hat: self
                .xi_hat
                .iter()
                .map(|x| [[x[1][1], x[1][0]], [x[0][1], x[0][0]]])
                .collect(),
            loglik: self.loglik,
        }
    }
}

/// Log emission densities `log p(y_t | s_t = k)` for every `t`.
pub fn emission_table(data: &TimeSeriesDataset, params: &ModelParameters) -> Result<Vec<[f64; 2]>> {
    params.check_dataset(data)?;
    let dens = [params.emissions[0].density()?, params.emissions[1].density()?];
    let d = data.obs_dim();
    let y = data.y();
    let mut row = vec![0.0; d];
    let mut lag = vec![0.0; d];
    let mut out = Vec::with_capacity(data.len());
    for t in 0..data.len() {
        let tl = t.saturating_sub(1);
        for i in 0..d {
            row[i] = y[(t, i)];
            lag[i] = y[(tl, i)];
        }
        out.push([dens[0].log_density(&row, &lag), dens[1].log_density(&row, &lag)]);
    }
    Ok(out)
}

/// Transition matrices for the `T - 1` steps; entry `t - 1` governs `t - 1 → t`.
pub fn transition_table(data: &TimeSeriesDataset, params: &ModelParameters) -> Result<Vec<[[f64; 2]; 2]>> {
    params.check_dataset(data)?;
    let xs = data.transition_covariates();
    let [f0, f1] = &params.transitions;
    let e0 = f0.eval_rows(&xs)?;
    let e1 = f1.eval_rows(&xs)?;
    let (l0, l1) = (f0.link(), f1.link());
    Ok(e0
        .iter()
        .zip(e1.iter())
        .map(|(&a, &b)| stochastic_rows(l0.prob(a), l1.prob(b)))
        .collect())
}

struct Forward {
    alpha: Vec<[f64; 2]>,
    scale: Vec<f64>,
    /// Emission densities divided by their per-step maximum.
    emis: Vec<[f64; 2]>,
    loglik: f64,
}

fn forward(log_emis: &[[f64; 2]], trans: &[[[f64; 2]; 2]], pi: [f64; 2]) -> Result<Forward> {
    let n = log_emis.len();
    if n < 2 || trans.len() != n - 1 {
        return Err(Error::Domain(format!(
            "need T >= 2 emissions and T - 1 transitions, got {} and {}",
            n,
            trans.len()
        )));
    }
    let mut alpha = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    let mut emis = Vec::with_capacity(n);
    let mut loglik = 0.0;
    for t in 0..n {
        let [l0, l1] = log_emis[t];
        let m = l0.max(l1);
        if !m.is_finite() {
            return Err(Error::Underflow { t });
        }
        let e = [(l0 - m).exp(), (l1 - m).exp()];
        let a = if t == 0 {
            [pi[0] * e[0], pi[1] * e[1]]
        } else {
            let prev: &[f64; 2] = &alpha[t - 1];
            let p = &trans[t - 1];
            [
                e[0] * (prev[0] * p[0][0] + prev[1] * p[1][0]),
                e[1] * (prev[0] * p[0][1] + prev[1] * p[1][1]),
            ]
        };
        let c = a[0] + a[1];
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Underflow { t });
        }
        alpha.push([a[0] / c, a[1] / c]);
        scale.push(c);
        emis.push(e);
        loglik += c.ln() + m;
    }
    Ok(Forward {
        alpha,
        scale,
        emis,
        loglik,
    })
}

/// Forward-backward on precomputed log emission densities and transition
/// matrices.
pub fn forward_backward_tables(
    log_emis: &[[f64; 2]],
    trans: &[[[f64; 2]; 2]],
    pi: [f64; 2],
) -> Result<PosteriorSummary> {
    let fw = forward(log_emis, trans, pi)?;
    let n = log_emis.len();
    let mut beta = vec![[1.0, 1.0]; n];
    for t in (0..n - 1).rev() {
        let p = &trans[t];
        let e = fw.emis[t + 1];
        let b = beta[t + 1];
        let c = fw.scale[t + 1];
        beta[t] = [
            (p[0][0] * e[0] * b[0] + p[0][1] * e[1] * b[1]) / c,
            (p[1][0] * e[0] * b[0] + p[1][1] * e[1] * b[1]) / c,
        ];
    }
    let mut z_hat = Vec::with_capacity(n);
    for t in 0..n {
        let g = [fw.alpha[t][0] * beta[t][0], fw.alpha[t][1] * beta[t][1]];
        let s = g[0] + g[1];
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Underflow { t });
        }
        z_hat.push([g[0] / s, g[1] / s]);
    }
    let mut xi_hat = Vec::with_capacity(n - 1);
    for t in 1..n {
        let a = fw.alpha[t - 1];
        let p = &trans[t - 1];
        let e = fw.emis[t];
        let b = beta[t];
        let mut x = [[0.0; 2]; 2];
        let mut s = 0.0;
        for j in 0..2 {
            for k in 0..2 {
                x[j][k] = a[j] * p[j][k] * e[k] * b[k];
                s += x[j][k];
            }
        }
        if s < 1e-300 {
            let m = x.iter().flatten().cloned().fold(0.0f64, f64::max);
            if !(m > 0.0) {
                return Err(Error::Underflow { t });
            }
            x.iter_mut().flatten().for_each(|v| *v /= m);
            s = x.iter().flatten().sum();
        }
        x.iter_mut().flatten().for_each(|v| *v /= s);
        xi_hat.push(x);
    }
    Ok(PosteriorSummary {
        z_hat,
        xi_hat,
        loglik: fw.loglik,
    })
}

/// Observed-data log-likelihood from precomputed tables (forward pass only).
pub fn loglik_tables(log_emis: &[[f64; 2]], trans: &[[[f64; 2]; 2]], pi: [f64; 2]) -> Result<f64> {
    Ok(forward(log_emis, trans, pi)?.loglik)
}

/// Smoothed state and pair probabilities plus the log-likelihood.
pub fn forward_backward(data: &TimeSeriesDataset, params: &ModelParameters) -> Result<PosteriorSummary> {
    let emis = emission_table(data, params)?;
    let trans = transition_table(data, params)?;
    forward_backward_tables(&emis, &trans, params.pi)
}

/// `log p(Y)` under `params`; identical to `forward_backward(..).loglik`.
pub fn observed_loglik(data: &TimeSeriesDataset, params: &ModelParameters) -> Result<f64> {
    let emis = emission_table(data, params)?;
    let trans = transition_table(data, params)?;
    loglik_tables(&emis, &trans, params.pi)
}
