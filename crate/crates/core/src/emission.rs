//! Closed-form weighted updates of the regime VAR(1) parameters and the
//! initial distribution.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::PosteriorSummary;
use crate::model::{RegimeEmission, TimeSeriesDataset};

/// Weighted least-squares fit of `y_t` on `[1, y_{t-1}]` with the residual
/// covariance as `Sigma`. The first observation is its own lag, as in the
/// likelihood.
pub fn weighted_var_fit(data: &TimeSeriesDataset, weights: &[f64]) -> Result<RegimeEmission> {
    let n = data.len();
    let d = data.obs_dim();
    if weights.len() != n {
        return Err(Error::Domain(format!(
            "{} weights for {} observations",
            weights.len(),
            n
        )));
    }
    let total: f64 = weights.iter().sum();
    let y = data.y();
    let q = d + 1;
    let mut gram = DMatrix::<f64>::zeros(q, q);
    let mut cross = DMatrix::<f64>::zeros(q, d);
    let mut r = vec![0.0; q];
    for t in 0..n {
        let w = weights[t];
        if w == 0.0 {
            continue;
        }
        let tl = t.saturating_sub(1);
        r[0] = 1.0;
        for i in 0..d {
            r[i + 1] = y[(tl, i)];
        }
        for a in 0..q {
            let wa = w * r[a];
            for b in 0..q {
                gram[(a, b)] += wa * r[b];
            }
            for b in 0..d {
                cross[(a, b)] += wa * y[(t, b)];
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::Singular("all weights are zero".into()));
    }
    let coef = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&cross),
        // collinear regressors (e.g. a constant series): minimum-norm solution
        None => gram
            .svd(true, true)
            .solve(&cross, 1e-12 * total)
            .map_err(|e| Error::Singular(format!("weighted regressor Gram matrix: {e}")))?,
    };
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("weighted regressor Gram matrix".into()));
    }
    let mu = DVector::from_fn(d, |i, _| coef[(0, i)]);
    let a = DMatrix::from_fn(d, d, |i, j| coef[(j + 1, i)]);
    let sigma = residual_covariance(data, weights, &mu, &a);
    let sigma = ridge_repair(sigma);
    RegimeEmission::new(mu, a, sigma)
}

/// `Σ w_t e_t e_tᵀ / Σ w_t` with `e_t = y_t - mu - A y_{t-1}`.
pub fn residual_covariance(
    data: &TimeSeriesDataset,
    weights: &[f64],
    mu: &DVector<f64>,
    a: &DMatrix<f64>,
) -> DMatrix<f64> {
    let d = data.obs_dim();
    let y = data.y();
    let mut s = DMatrix::<f64>::zeros(d, d);
    let mut e = vec![0.0; d];
    let mut total = 0.0;
    for t in 0..data.len() {
        let w = weights[t];
        if w == 0.0 {
            continue;
        }
        total += w;
        let tl = t.saturating_sub(1);
        for i in 0..d {
            let mut m = mu[i];
            for j in 0..d {
                m += a[(i, j)] * y[(tl, j)];
            }
            e[i] = y[(t, i)] - m;
        }
        for i in 0..d {
            for j in 0..d {
                s[(i, j)] += w * e[i] * e[j];
            }
        }
    }
    s /= total;
    crate::linalg::symmetrize(&s)
}

/// Adds `1e-8 · max(trace / d, 1)` to the diagonal when the smallest
/// eigenvalue falls below that floor.
pub fn ridge_repair(sigma: DMatrix<f64>) -> DMatrix<f64> {
    let d = sigma.nrows();
    let floor = 1e-8 * (sigma.trace() / d as f64).max(1.0);
    let min_eig = sigma.clone().symmetric_eigen().eigenvalues.min();
    if min_eig < floor {
        let mut s = sigma;
        for i in 0..d {
            s[(i, i)] += floor;
        }
        s
    } else {
        sigma
    }
}

/// Minimum posterior mass a regime needs before its parameters are refit.
pub fn effective_sample_threshold(d: usize) -> f64 {
    (d + 2) as f64
}

/// Weighted updates for both regimes using `ẑ` as weights.
pub fn update_emissions(data: &TimeSeriesDataset, post: &PosteriorSummary) -> Result<[RegimeEmission; 2]> {
    let e0 = update_regime(data, post, 0)?;
    let e1 = update_regime(data, post, 1)?;
    Ok([e0, e1])
}

pub fn update_regime(data: &TimeSeriesDataset, post: &PosteriorSummary, k: usize) -> Result<RegimeEmission> {
    if post.len() != data.len() {
        return Err(Error::Domain(format!(
            "posterior covers {} steps, data has {}",
            post.len(),
            data.len()
        )));
    }
    let w: Vec<f64> = post.z_hat.iter().map(|z| z[k]).collect();
    let eff: f64 = w.iter().sum();
    let threshold = effective_sample_threshold(data.obs_dim());
    if eff < threshold {
        return Err(Error::DegenerateRegime {
            regime: k,
            effective: eff,
            threshold,
        });
    }
    weighted_var_fit(data, &w)
}

/// `π_k = ẑ_{1,k}`.
pub fn update_initial(post: &PosteriorSummary) -> [f64; 2] {
    let z = post.z_hat[0];
    let s = z[0] + z[1];
    [z[0] / s, 1.0 - z[0] / s]
}
