use nalgebra::{DMatrix, DVector};

use super::irls::{irls_penalized, irls_probit, FitStatus, IrlsOptions};
use super::PseudoData;
use crate::error::Result;
use crate::model::{design_for, Link, Representation};

/// Coefficient norm beyond which a fit is treated as separated.
const SEPARATION_NORM: f64 = 1e4;
/// Linear predictor magnitude at which both links are saturated in double
/// precision.
const SATURATED_ETA: f64 = 30.0;
const FALLBACK_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricFit {
    /// Intercept first, then one coefficient per covariate.
    pub gamma: DVector<f64>,
    pub status: FitStatus,
    pub objective: f64,
}

/// Unpenalized weighted logit or probit regression on `[1, x]`, started at
/// `init` (zeros when `None`). When the plain fit diverges, fails to converge
/// or is singular, a tiny ridge penalty is added instead.
pub fn fit_parametric(pd: &PseudoData, link: Link, init: Option<&DVector<f64>>) -> Result<ParametricFit> {
    let p = pd.covariates.ncols();
    let design = design_for(
        &Representation::Linear {
            link,
            n_covariates: p,
        },
        &pd.covariates,
    )?;
    let zeros = DVector::zeros(p + 1);
    let start = init.unwrap_or(&zeros);
    let none = DMatrix::zeros(p + 1, p + 1);
    let opts = IrlsOptions::default();
    let solve = |penalty: &DMatrix<f64>, lambda: f64, start: &DVector<f64>| match link {
        Link::Logistic => irls_penalized(pd, &design, penalty, lambda, None, start, &opts),
        Link::Probit => irls_probit(pd, &design, penalty, lambda, start, &opts),
    };
    match solve(&none, 0.0, start) {
        Ok(fit) if fit.status == FitStatus::Converged && !separated(pd, &design, &fit.coefficients) => {
            return Ok(ParametricFit {
                gamma: fit.coefficients,
                status: fit.status,
                objective: fit.objective,
            })
        }
        Ok(_) => {}
        Err(e) if e.is_numerical() => {}
        Err(e) => return Err(e),
    }
    let ridge = DMatrix::identity(p + 1, p + 1);
    let fit = solve(&ridge, FALLBACK_RIDGE, &zeros)?;
    Ok(ParametricFit {
        gamma: fit.coefficients,
        status: FitStatus::SeparationFallback,
        objective: fit.objective,
    })
}

fn separated(pd: &PseudoData, design: &DMatrix<f64>, gamma: &DVector<f64>) -> bool {
    if gamma.norm() > SEPARATION_NORM {
        return true;
    }
    let eta = design * gamma;
    eta.iter()
        .zip(pd.weights.iter())
        .any(|(e, w)| *w > 0.0 && e.abs() > SATURATED_ETA)
}
