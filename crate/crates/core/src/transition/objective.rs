use nalgebra::{DMatrix, DVector};

use super::PseudoData;
use crate::linalg::{log1pexp, sigmoid};
use crate::model::{normal_pdf, Link};

/// Penalized weighted binary log-likelihood
/// `Σ n [ỹ log q(η) + (1 - ỹ) log(1 - q(η))] - λ/2 cᵀPc`, `η = Dc + offset`.
pub struct PenalizedObjective<'a> {
    pub design: &'a DMatrix<f64>,
    pub penalty: &'a DMatrix<f64>,
    pub lambda: f64,
    pub link: Link,
    pub offset: Option<&'a DVector<f64>>,
}

/// `log Φ(u)` without cancellation in the lower tail.
pub(crate) fn log_normal_cdf(u: f64) -> f64 {
    (0.5 * statrs::function::erf::erfc(-u / std::f64::consts::SQRT_2)).ln()
}

/// `φ(u) / Φ(u)`, stable for large negative `u`.
pub(crate) fn inverse_mills(u: f64) -> f64 {
    if u < -30.0 {
        // asymptotic expansion of φ/Φ in the far tail
        let v = -u;
        return v + 1.0 / v - 2.0 / (v * v * v);
    }
    normal_pdf(u) / (0.5 * statrs::function::erf::erfc(-u / std::f64::consts::SQRT_2))
}

impl PenalizedObjective<'_> {
    pub fn linear_predictor(&self, coef: &DVector<f64>) -> DVector<f64> {
        let mut eta = self.design * coef;
        if let Some(off) = self.offset {
            eta += off;
        }
        eta
    }

    pub fn penalty_value(&self, coef: &DVector<f64>) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        0.5 * self.lambda * coef.dot(&(self.penalty * coef))
    }

    pub fn loglik_at(&self, pd: &PseudoData, eta: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..pd.len() {
            let n = pd.weights[i];
            if n == 0.0 {
                continue;
            }
            let y = pd.responses[i];
            let e = eta[i];
            s += n * match self.link {
                Link::Logistic => y * e - log1pexp(e),
                Link::Probit => y * log_normal_cdf(e) + (1.0 - y) * log_normal_cdf(-e),
            };
        }
        s
    }

    pub fn value(&self, pd: &PseudoData, coef: &DVector<f64>) -> f64 {
        let eta = self.linear_predictor(coef);
        self.loglik_at(pd, &eta) - self.penalty_value(coef)
    }

    pub fn gradient(&self, pd: &PseudoData, coef: &DVector<f64>) -> DVector<f64> {
        let eta = self.linear_predictor(coef);
        let mut score = DVector::zeros(pd.len());
        for i in 0..pd.len() {
            let n = pd.weights[i];
            if n == 0.0 {
                continue;
            }
            let y = pd.responses[i];
            let e = eta[i];
            score[i] = n * match self.link {
                Link::Logistic => y - sigmoid(e),
                Link::Probit => y * inverse_mills(e) - (1.0 - y) * inverse_mills(-e),
            };
        }
        let mut g = self.design.tr_mul(&score);
        if self.lambda != 0.0 {
            g -= (self.penalty * coef) * self.lambda;
        }
        g
    }
}
