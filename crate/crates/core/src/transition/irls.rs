use nalgebra::{DMatrix, DVector};

use super::objective::{inverse_mills, PenalizedObjective};
use super::PseudoData;
use crate::basis::{kernel_gram, KernelSpec, TensorSplineBasis, GRAM_JITTER};
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, solve_spd, weighted_gram};
use crate::model::{normal_pdf, Link, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    /// Stop when every coefficient moves less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    /// Iteration budget exhausted; the best iterate is returned.
    NotConverged,
    /// Unpenalized fit diverged and a small ridge was applied.
    SeparationFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsFit {
    pub coefficients: DVector<f64>,
    /// Penalized objective at `coefficients`.
    pub objective: f64,
    pub iterations: usize,
    pub status: FitStatus,
}

/// Working quantities of one Newton step: `rhs = (DᵀWD) c + Dᵀ n (ỹ - p)`.
fn logistic_step(
    design: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    lambda: f64,
    pd: &PseudoData,
    eta: &DVector<f64>,
    coef: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = pd.len();
    let mut w = DVector::zeros(n);
    let mut resid = DVector::zeros(n);
    for i in 0..n {
        let p = sigmoid(eta[i]).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        w[i] = pd.weights[i] * p * (1.0 - p);
        resid[i] = pd.weights[i] * (pd.responses[i] - p);
    }
    let a = weighted_gram(design, &w);
    let rhs = &a * coef + design.tr_mul(&resid);
    let system = if lambda != 0.0 { a + penalty * lambda } else { a };
    solve_spd(&system, &rhs)
}

/// Generic damped Newton loop: `propose` maps the current coefficients to a
/// full Newton target; steps are halved until the objective does not drop.
fn damped_newton<F, P>(
    init: &DVector<f64>,
    opts: &IrlsOptions,
    objective: F,
    mut propose: P,
) -> Result<IrlsFit>
where
    F: Fn(&DVector<f64>) -> f64,
    P: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut coef = init.clone();
    let mut obj = objective(&coef);
    if !obj.is_finite() {
        return Err(Error::Domain("objective is not finite at the initial point".into()));
    }
    for it in 1..=opts.max_iterations {
        let target = propose(&coef)?;
        let step = &target - &coef;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &coef + &step * scale;
            let val = objective(&cand);
            if val.is_finite() && val >= obj {
                accepted = Some((cand, val));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, val)) = accepted else {
            // no ascent direction left at working precision
            return Ok(IrlsFit {
                coefficients: coef,
                objective: obj,
                iterations: it,
                status: FitStatus::Converged,
            });
        };
        let moved = (&cand - &coef).amax();
        coef = cand;
        obj = val;
        if moved < opts.tolerance {
            return Ok(IrlsFit {
                coefficients: coef,
                objective: obj,
                iterations: it,
                status: FitStatus::Converged,
            });
        }
    }
    Ok(IrlsFit {
        coefficients: coef,
        objective: obj,
        iterations: opts.max_iterations,
        status: FitStatus::NotConverged,
    })
}

/// Penalized logistic IRLS on a fixed design:
/// `c ← (DᵀNVD + λP)⁻¹ DᵀNV z*` with step-halving.
pub fn irls_penalized(
    pd: &PseudoData,
    design: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    lambda: f64,
    offset: Option<&DVector<f64>>,
    init: &DVector<f64>,
    opts: &IrlsOptions,
) -> Result<IrlsFit> {
    check_problem(pd, design, penalty, lambda, init)?;
    let obj = PenalizedObjective {
        design,
        penalty,
        lambda,
        link: Link::Logistic,
        offset,
    };
    damped_newton(
        init,
        opts,
        |c| obj.value(pd, c),
        |c| {
            let eta = obj.linear_predictor(c);
            logistic_step(design, penalty, lambda, pd, &eta, c)
        },
    )
}

/// IRLS for the tensor-product spline representation.
pub fn irls_spline(
    pd: &PseudoData,
    basis: &TensorSplineBasis,
    lambda: f64,
    init: &DVector<f64>,
) -> Result<IrlsFit> {
    let design = basis.design(&pd.covariates)?;
    let penalty = basis.penalty();
    irls_penalized(pd, &design, &penalty, lambda, None, init, &IrlsOptions::default())
}

/// Penalized probit regression by Fisher scoring with step-halving.
pub fn irls_probit(
    pd: &PseudoData,
    design: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    lambda: f64,
    init: &DVector<f64>,
    opts: &IrlsOptions,
) -> Result<IrlsFit> {
    check_problem(pd, design, penalty, lambda, init)?;
    let obj = PenalizedObjective {
        design,
        penalty,
        lambda,
        link: Link::Probit,
        offset: None,
    };
    damped_newton(
        init,
        opts,
        |c| obj.value(pd, c),
        |c| {
            let eta = design * c;
            let n = pd.len();
            let mut w = DVector::zeros(n);
            let mut score = DVector::zeros(n);
            for i in 0..n {
                let e = eta[i].clamp(-30.0, 30.0);
                let m_pos = inverse_mills(e);
                let m_neg = inverse_mills(-e);
                let nw = pd.weights[i];
                let y = pd.responses[i];
                // φ² / (Φ (1 - Φ)) = φ · (φ/Φ + φ/(1 - Φ))
                w[i] = nw * normal_pdf(e) * (m_pos + m_neg);
                score[i] = nw * (y * m_pos - (1.0 - y) * m_neg);
            }
            let a = weighted_gram(design, &w);
            let rhs = &a * c + design.tr_mul(&score);
            let system = if lambda != 0.0 { a + penalty * lambda } else { a };
            solve_spd(&system, &rhs)
        },
    )
}

/// Kernel IRLS on a Gram matrix whose rows are the pseudo-data points:
/// `α ← (WK + λI)⁻¹ W z*`, the well-conditioned form of
/// `(KWK + λK)⁻¹ KW z*`.
pub fn irls_kernel(
    pd: &PseudoData,
    gram: &DMatrix<f64>,
    lambda: f64,
    init: &DVector<f64>,
    opts: &IrlsOptions,
) -> Result<IrlsFit> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("kernel IRLS needs lambda > 0, got {lambda}")));
    }
    check_problem(pd, gram, gram, lambda, init)?;
    let obj = PenalizedObjective {
        design: gram,
        penalty: gram,
        lambda,
        link: Link::Logistic,
        offset: None,
    };
    let n = pd.len();
    damped_newton(
        init,
        opts,
        |c| obj.value(pd, c),
        |alpha| {
            let eta = gram * alpha;
            let mut system = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for i in 0..n {
                let p = sigmoid(eta[i]).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                let w = pd.weights[i] * p * (1.0 - p);
                rhs[i] = w * eta[i] + pd.weights[i] * (pd.responses[i] - p);
                for j in 0..n {
                    system[(i, j)] = w * gram[(i, j)];
                }
                system[(i, i)] += lambda;
            }
            system
                .lu()
                .solve(&rhs)
                .filter(|v| v.iter().all(|x| x.is_finite()))
                .ok_or_else(|| Error::Singular("kernel Newton system".into()))
        },
    )
}

/// Kernel IRLS with the representer expansion anchored at the pseudo-data
/// covariates.
pub fn irls_rkhs(pd: &PseudoData, spec: &KernelSpec, lambda: f64, alpha_init: &DVector<f64>) -> Result<IrlsFit> {
    let mut gram = kernel_gram(spec, &pd.covariates, &pd.covariates)?;
    for i in 0..gram.nrows() {
        gram[(i, i)] += GRAM_JITTER;
    }
    irls_kernel(pd, &gram, lambda, alpha_init, &IrlsOptions::default())
}

fn check_problem(
    pd: &PseudoData,
    design: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    lambda: f64,
    init: &DVector<f64>,
) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if design.nrows() != pd.len() {
        return Err(Error::Domain(format!(
            "design has {} rows for {} pseudo-observations",
            design.nrows(),
            pd.len()
        )));
    }
    let m = design.ncols();
    if init.len() != m || penalty.shape() != (m, m) {
        return Err(Error::Domain(format!(
            "{m} design columns but {} initial coefficients and a {:?} penalty",
            init.len(),
            penalty.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_data(n: usize) -> PseudoData {
        PseudoData::new(
            DVector::from_element(n, 1.0),
            DVector::from_element(n, 0.5),
            DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64 - 0.5),
        )
        .unwrap()
    }

    #[test]
    fn intercept_only_flat_response_is_zero() {
        let pd = flat_data(20);
        let design = DMatrix::from_element(20, 1, 1.0);
        let pen = DMatrix::zeros(1, 1);
        let fit = irls_penalized(&pd, &design, &pen, 0.0, None, &DVector::from_element(1, 2.0), &IrlsOptions::default()).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-10);
        assert_eq!(fit.status, FitStatus::Converged);
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let n = 50;
        let pd = PseudoData::new(
            DVector::from_element(n, 1.0),
            DVector::from_fn(n, |i, _| if i % 3 == 0 { 1.0 } else { 0.0 }),
            DMatrix::from_fn(n, 2, |i, j| ((i * (j + 2)) % 7) as f64 - 3.0),
        )
        .unwrap();
        let design = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { pd.covariates[(i, j - 1)] });
        let fit = irls_penalized(&pd, &design, &DMatrix::identity(3, 3), 1e12, None, &DVector::zeros(3), &IrlsOptions::default()).unwrap();
        assert!(fit.coefficients.norm() <= 1e-4);
    }

    #[test]
    fn kernel_flat_response_gives_flat_function() {
        let pd = flat_data(15);
        let spec = KernelSpec::new(crate::basis::KernelFamily::SquaredExponential, 0.3).unwrap();
        let init = DVector::from_fn(15, |i, _| (i as f64).sin());
        let fit = irls_rkhs(&pd, &spec, 0.5, &init).unwrap();
        let gram = kernel_gram(&spec, &pd.covariates, &pd.covariates).unwrap();
        assert!((gram * &fit.coefficients).amax() < 1e-8);
        assert!(irls_rkhs(&pd, &spec, 0.0, &init).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let pd = flat_data(5);
        let design = DMatrix::zeros(4, 1);
        assert!(irls_penalized(&pd, &design, &DMatrix::zeros(1, 1), 0.0, None, &DVector::zeros(1), &IrlsOptions::default()).is_err());
    }
}
