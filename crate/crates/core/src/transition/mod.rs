//! M-step for the transition functions: weighted pseudo-data built from the
//! smoothed pair probabilities, and penalized binary regression on it.

mod additive;
mod gcv;
mod irls;
mod objective;
mod parametric;

pub use additive::{backfit_additive, AdditiveFit};
pub use gcv::{lambda_grid, select_lambda_gcv, GcvSelection, Smoother};
pub use irls::{irls_kernel, irls_penalized, irls_probit, irls_rkhs, irls_spline, FitStatus, IrlsFit, IrlsOptions};
pub use objective::PenalizedObjective;
pub use parametric::{fit_parametric, ParametricFit};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::PosteriorSummary;
use crate::model::TimeSeriesDataset;

/// Rows below this weight get the neutral response 0.5.
pub const MIN_PSEUDO_WEIGHT: f64 = 1e-12;

/// Weighted binary-regression data for one origin regime `j`.
///
/// Row `i` describes the transition `i → i + 1`: weight
/// `n = ξ̂(j,0) + ξ̂(j,1)`, response `ξ̂(j,1) / n`, covariates `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoData {
    pub weights: DVector<f64>,
    pub responses: DVector<f64>,
    pub covariates: DMatrix<f64>,
}

impl PseudoData {
    pub fn new(weights: DVector<f64>, responses: DVector<f64>, covariates: DMatrix<f64>) -> Result<Self> {
        let n = weights.len();
        if responses.len() != n || covariates.nrows() != n {
            return Err(Error::Domain(format!(
                "pseudo-data lengths disagree: {} weights, {} responses, {} covariate rows",
                n,
                responses.len(),
                covariates.nrows()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("pseudo-data weights must be finite and >= 0".into()));
        }
        if responses.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::Domain("pseudo-data responses must lie in [0, 1]".into()));
        }
        Ok(Self {
            weights,
            responses,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Pseudo-data of a known state path (hard 0/1 weights).
    pub fn from_states(states: &[usize], data: &TimeSeriesDataset, j: usize) -> Result<Self> {
        if states.len() != data.len() {
            return Err(Error::Domain(format!(
                "{} states for {} observations",
                states.len(),
                data.len()
            )));
        }
        let n = data.len() - 1;
        let weights = DVector::from_fn(n, |i, _| if states[i] == j { 1.0 } else { 0.0 });
        let responses = DVector::from_fn(n, |i, _| {
            if states[i] != j {
                0.5
            } else if states[i + 1] == 1 {
                1.0
            } else {
                0.0
            }
        });
        Self::new(weights, responses, data.transition_covariates())
    }

    /// Weighted log-likelihood `Σ n [ỹ log q + (1 - ỹ) log(1 - q)]` of given
    /// success probabilities.
    pub fn loglik_of_probs(&self, probs: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(self.responses.iter())
            .zip(probs)
            .filter(|((n, _), _)| **n > 0.0)
            .map(|((n, y), q)| n * (y * q.ln() + (1.0 - y) * (1.0 - q).ln()))
            .sum()
    }
}

pub fn build_pseudo_data(post: &PosteriorSummary, data: &TimeSeriesDataset, j: usize) -> Result<PseudoData> {
    if j > 1 {
        return Err(Error::Domain(format!("regime index {j} out of range")));
    }
    if post.xi_hat.len() + 1 != data.len() {
        return Err(Error::Domain(format!(
            "posterior has {} transitions, data has {} steps",
            post.xi_hat.len(),
            data.len()
        )));
    }
    let n = post.xi_hat.len();
    let mut weights = DVector::zeros(n);
    let mut responses = DVector::zeros(n);
    for (i, xi) in post.xi_hat.iter().enumerate() {
        let w = xi[j][0] + xi[j][1];
        weights[i] = w;
        responses[i] = if w < MIN_PSEUDO_WEIGHT {
            0.5
        } else {
            (xi[j][1] / w).clamp(0.0, 1.0)
        };
    }
    PseudoData::new(weights, responses, data.transition_covariates())
}
