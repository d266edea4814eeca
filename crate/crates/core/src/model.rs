//! Domain types of the two-regime switching VAR(1) and its primitive
//! quantities: links, emission densities and per-step transition matrices.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::basis::{kernel_gram, KernelSpec, SplineBasis, TensorSplineBasis};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, forward_substitute, max_asymmetry};

/// Transition probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observed series `y` (T x d) with covariates `x` (T x p).
///
/// Row `t` of `x` drives the transition from `t` into `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
}

impl TimeSeriesDataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.nrows() != x.nrows() {
            return Err(Error::Domain(format!(
                "y has {} rows but x has {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.nrows() < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 time points, got {}",
                y.nrows()
            )));
        }
        if y.ncols() == 0 || x.ncols() == 0 {
            return Err(Error::Domain("y and x need at least one column".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite entry in the data".into()));
        }
        Ok(Self { y, x })
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn cov_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y_row(&self, t: usize) -> DVector<f64> {
        self.y.row(t).transpose()
    }

    /// Lagged observation for the emission at `t`; the first step conditions
    /// on itself.
    pub fn y_lag(&self, t: usize) -> DVector<f64> {
        self.y_row(t.saturating_sub(1))
    }

    pub fn x_row(&self, t: usize) -> Vec<f64> {
        self.x.row(t).iter().copied().collect()
    }

    /// Covariates that drive the `T - 1` transitions (rows `0..T-1`).
    pub fn transition_covariates(&self) -> DMatrix<f64> {
        self.x.rows(0, self.len() - 1).into_owned()
    }

    /// Rows `start..end` as a new dataset.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.len() || start >= end {
            return Err(Error::Domain(format!(
                "window {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        Self::new(
            self.y.rows(start, end - start).into_owned(),
            self.x.rows(start, end - start).into_owned(),
        )
    }
}

/// Gaussian VAR(1) emission `y_t ~ N(mu + A y_{t-1}, Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeEmission {
    pub mu: DVector<f64>,
    pub a: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl RegimeEmission {
    pub fn new(mu: DVector<f64>, a: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if a.shape() != (d, d) || sigma.shape() != (d, d) {
            return Err(Error::Domain(format!(
                "emission shapes disagree: mu {d}, A {:?}, Sigma {:?}",
                a.shape(),
                sigma.shape()
            )));
        }
        if max_asymmetry(&sigma) > 1e-10 {
            return Err(Error::Domain("Sigma is not symmetric".into()));
        }
        cholesky_lower(&sigma)?;
        Ok(Self { mu, a, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Factorizes `Sigma` once for repeated density evaluation.
    pub fn density(&self) -> Result<EmissionDensity<'_>> {
        let chol = cholesky_lower(&self.sigma)?;
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(EmissionDensity {
            emission: self,
            chol,
            log_norm: -0.5 * (self.dim() as f64 * LN_2PI + log_det),
        })
    }
}

/// Emission with a cached Cholesky factor of its covariance.
#[derive(Debug, Clone)]
pub struct EmissionDensity<'a> {
    emission: &'a RegimeEmission,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl EmissionDensity<'_> {
    pub fn log_density(&self, y_t: &[f64], y_prev: &[f64]) -> f64 {
        let e = self.emission;
        let d = e.dim();
        let mut r = vec![0.0; d];
        for i in 0..d {
            let mut mean = e.mu[i];
            for j in 0..d {
                mean += e.a[(i, j)] * y_prev[j];
            }
            r[i] = y_t[i] - mean;
        }
        forward_substitute(&self.chol, &mut r);
        let q: f64 = r.iter().map(|v| v * v).sum();
        self.log_norm - 0.5 * q
    }
}

/// `log N(y_t; mu + A y_prev, Sigma)`.
pub fn emission_logdensity(e: &RegimeEmission, y_t: &[f64], y_prev: &[f64]) -> Result<f64> {
    if y_t.len() != e.dim() || y_prev.len() != e.dim() {
        return Err(Error::Domain(format!(
            "observation length {} / {} does not match emission dimension {}",
            y_t.len(),
            y_prev.len(),
            e.dim()
        )));
    }
    Ok(e.density()?.log_density(y_t, y_prev))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    Logistic,
    Probit,
}

impl Link {
    /// Inverse link, clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
    pub fn prob(self, u: f64) -> f64 {
        let p = match self {
            Link::Logistic => crate::linalg::sigmoid(u),
            Link::Probit => normal_cdf(u),
        };
        p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }
}

pub fn normal_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn link(kind: Link, u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::Domain(format!("link argument must be finite, got {u}")));
    }
    Ok(kind.prob(u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransitionKind {
    LinearLogit,
    LinearProbit,
    Spline,
    Rkhs,
    AdditiveSpline,
}

impl TransitionKind {
    pub const ALL: [TransitionKind; 5] = [
        TransitionKind::LinearLogit,
        TransitionKind::LinearProbit,
        TransitionKind::Spline,
        TransitionKind::Rkhs,
        TransitionKind::AdditiveSpline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransitionKind::LinearLogit => "ms-var-logit",
            TransitionKind::LinearProbit => "ms-var-probit",
            TransitionKind::Spline => "sp-spline",
            TransitionKind::Rkhs => "sp-rkhs",
            TransitionKind::AdditiveSpline => "sp-additive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!(
                    "unknown variant '{s}'; valid variants: {}",
                    names.join(", ")
                ))
            })
    }

    pub fn link(self) -> Link {
        match self {
            TransitionKind::LinearProbit => Link::Probit,
            _ => Link::Logistic,
        }
    }
}

/// How a transition log-odds function is represented.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    /// `γ₀ + γᵀx` (coefficients: intercept then one per covariate).
    Linear { link: Link, n_covariates: usize },
    /// Tensor-product B-spline `φ(x)ᵀw`.
    Spline(TensorSplineBasis),
    /// Kernel expansion `Σ α_i κ(x, anchor_i)`.
    Rkhs { kernel: KernelSpec, anchors: DMatrix<f64> },
    /// `c + Σ_ℓ g_ℓ(x_ℓ)`; coefficients are `c` then each margin's block.
    Additive(Vec<SplineBasis>),
}

/// A transition log-odds function `f_j` together with its penalty weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionFunction {
    repr: Representation,
    coefficients: DVector<f64>,
    lambda: f64,
}

impl TransitionFunction {
    pub fn new(repr: Representation, coefficients: DVector<f64>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        let expected = coefficient_count(&repr);
        if coefficients.len() != expected {
            return Err(Error::Domain(format!(
                "expected {expected} coefficients for this representation, got {}",
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite transition coefficient".into()));
        }
        Ok(Self {
            repr,
            coefficients,
            lambda,
        })
    }

    /// Linear logit/probit function with intercept `gamma[0]`.
    pub fn linear(link: Link, gamma: DVector<f64>) -> Result<Self> {
        let n_covariates = gamma.len().checked_sub(1).ok_or_else(|| {
            Error::Domain("linear transition needs an intercept coefficient".into())
        })?;
        Self::new(Representation::Linear { link, n_covariates }, gamma, 0.0)
    }

    /// `f ≡ value` for `p` covariates.
    pub fn constant(link: Link, p: usize, value: f64) -> Self {
        let mut gamma = DVector::zeros(p + 1);
        gamma[0] = value;
        Self::linear(link, gamma).expect("constant is a valid linear function")
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> TransitionKind {
        match &self.repr {
            Representation::Linear {
                link: Link::Logistic,
                ..
            } => TransitionKind::LinearLogit,
            Representation::Linear {
                link: Link::Probit, ..
            } => TransitionKind::LinearProbit,
            Representation::Spline(_) => TransitionKind::Spline,
            Representation::Rkhs { .. } => TransitionKind::Rkhs,
            Representation::Additive(_) => TransitionKind::AdditiveSpline,
        }
    }

    pub fn link(&self) -> Link {
        match &self.repr {
            Representation::Linear { link, .. } => *link,
            _ => Link::Logistic,
        }
    }

    pub fn n_covariates(&self) -> usize {
        match &self.repr {
            Representation::Linear { n_covariates, .. } => *n_covariates,
            Representation::Spline(b) => b.dim(),
            Representation::Rkhs { anchors, .. } => anchors.ncols(),
            Representation::Additive(bases) => bases.len(),
        }
    }

    /// Design matrix `D` such that the function values at the rows of `x`
    /// are `D · coefficients`.
    pub fn design(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        design_for(&self.repr, x)
    }

    /// Penalty matrix `P` of the roughness functional `cᵀPc`.
    pub fn penalty(&self) -> Result<DMatrix<f64>> {
        penalty_for(&self.repr)
    }

    /// `f(x)` at a single covariate vector.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_covariates() {
            return Err(Error::Domain(format!(
                "transition function takes {} covariates, got {}",
                self.n_covariates(),
                x.len()
            )));
        }
        let c = &self.coefficients;
        Ok(match &self.repr {
            Representation::Linear { .. } => {
                c[0] + x.iter().zip(c.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>()
            }
            Representation::Spline(basis) => {
                let mut row = vec![0.0; basis.n_basis()];
                basis.evaluate_into(x, &mut row);
                row.iter().zip(c.iter()).map(|(a, b)| a * b).sum()
            }
            Representation::Rkhs { kernel, anchors } => {
                let mut s = 0.0;
                let mut a = vec![0.0; anchors.ncols()];
                for i in 0..anchors.nrows() {
                    for (k, v) in a.iter_mut().enumerate() {
                        *v = anchors[(i, k)];
                    }
                    s += c[i] * kernel.eval(x, &a);
                }
                s
            }
            Representation::Additive(bases) => {
                let mut s = c[0];
                let mut offset = 1;
                for (basis, &xv) in bases.iter().zip(x) {
                    let row = basis.evaluate(xv);
                    s += row
                        .iter()
                        .zip(c.iter().skip(offset))
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                    offset += basis.n_basis();
                }
                s
            }
        })
    }

    /// Values at every row of `x`.
    pub fn eval_rows(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.design(x)? * &self.coefficients)
    }

    /// `-f`, used when regime labels are swapped.
    pub fn negated(&self) -> Self {
        Self {
            repr: self.repr.clone(),
            coefficients: -&self.coefficients,
            lambda: self.lambda,
        }
    }
}

pub fn coefficient_count(repr: &Representation) -> usize {
    match repr {
        Representation::Linear { n_covariates, .. } => n_covariates + 1,
        Representation::Spline(b) => b.n_basis(),
        Representation::Rkhs { anchors, .. } => anchors.nrows(),
        Representation::Additive(bases) => 1 + bases.iter().map(SplineBasis::n_basis).sum::<usize>(),
    }
}

pub fn design_for(repr: &Representation, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match repr {
        Representation::Linear { n_covariates, .. } => {
            if x.ncols() != *n_covariates {
                return Err(Error::Domain(format!(
                    "linear transition takes {n_covariates} covariates, got {}",
                    x.ncols()
                )));
            }
            let mut d = DMatrix::from_element(x.nrows(), n_covariates + 1, 1.0);
            d.columns_mut(1, *n_covariates).copy_from(x);
            Ok(d)
        }
        Representation::Spline(basis) => basis.design(x),
        Representation::Rkhs { kernel, anchors } => kernel_gram(kernel, x, anchors),
        Representation::Additive(bases) => {
            if x.ncols() != bases.len() {
                return Err(Error::Domain(format!(
                    "additive transition takes {} covariates, got {}",
                    bases.len(),
                    x.ncols()
                )));
            }
            let total = coefficient_count(repr);
            let mut d = DMatrix::zeros(x.nrows(), total);
            d.column_mut(0).fill(1.0);
            let mut offset = 1;
            for (l, basis) in bases.iter().enumerate() {
                let col: Vec<f64> = x.column(l).iter().copied().collect();
                let block = crate::basis::bspline_design(basis, &col);
                d.columns_mut(offset, basis.n_basis()).copy_from(&block);
                offset += basis.n_basis();
            }
            Ok(d)
        }
    }
}

pub fn penalty_for(repr: &Representation) -> Result<DMatrix<f64>> {
    let n = coefficient_count(repr);
    match repr {
        Representation::Linear { .. } => Ok(DMatrix::zeros(n, n)),
        Representation::Spline(basis) => Ok(basis.penalty()),
        Representation::Rkhs { kernel, anchors } => kernel_gram(kernel, anchors, anchors),
        Representation::Additive(bases) => {
            let mut p = DMatrix::zeros(n, n);
            let mut offset = 1;
            for basis in bases {
                let m = basis.n_basis();
                p.view_mut((offset, offset), (m, m)).copy_from(basis.penalty());
                offset += m;
            }
            Ok(p)
        }
    }
}

/// Emissions, initial distribution and the two transition functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub emissions: [RegimeEmission; 2],
    pub pi: [f64; 2],
    pub transitions: [TransitionFunction; 2],
}

impl ModelParameters {
    pub fn new(
        emissions: [RegimeEmission; 2],
        pi: [f64; 2],
        transitions: [TransitionFunction; 2],
    ) -> Result<Self> {
        if pi.iter().any(|p| !(0.0..=1.0).contains(p)) || (pi[0] + pi[1] - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "initial distribution {pi:?} is not a probability vector"
            )));
        }
        if emissions[0].dim() != emissions[1].dim() {
            return Err(Error::Domain("regimes disagree on the observation dimension".into()));
        }
        if transitions[0].n_covariates() != transitions[1].n_covariates() {
            return Err(Error::Domain(
                "transition functions disagree on the covariate dimension".into(),
            ));
        }
        Ok(Self {
            emissions,
            pi,
            transitions,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.emissions[0].dim()
    }

    pub fn cov_dim(&self) -> usize {
        self.transitions[0].n_covariates()
    }

    pub fn check_dataset(&self, data: &TimeSeriesDataset) -> Result<()> {
        if data.obs_dim() != self.obs_dim() || data.cov_dim() != self.cov_dim() {
            return Err(Error::Domain(format!(
                "data has d = {}, p = {} but the model expects d = {}, p = {}",
                data.obs_dim(),
                data.cov_dim(),
                self.obs_dim(),
                self.cov_dim()
            )));
        }
        Ok(())
    }
}

/// Row-stochastic matrix `[[1 - q0, q0], [1 - q1, q1]]` from two success
/// probabilities.
pub fn stochastic_rows(q0: f64, q1: f64) -> [[f64; 2]; 2] {
    [[1.0 - q0, q0], [1.0 - q1, q1]]
}

/// Transition matrix for the step driven by covariates `x_prev`.
pub fn transition_probs(
    f0: &TransitionFunction,
    f1: &TransitionFunction,
    x_prev: &[f64],
) -> Result<[[f64; 2]; 2]> {
    let q0 = f0.link().prob(f0.eval(x_prev)?);
    let q1 = f1.link().prob(f1.eval(x_prev)?);
    Ok(stochastic_rows(q0, q1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_emission(mu: f64, a: f64, s: f64) -> RegimeEmission {
        RegimeEmission::new(
            DVector::from_element(1, mu),
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, s),
        )
        .unwrap()
    }

    #[test]
    fn link_values() {
        assert_eq!(link(Link::Logistic, 0.0).unwrap(), 0.5);
        assert_eq!(link(Link::Probit, 0.0).unwrap(), 0.5);
        assert_abs_diff_eq!(link(Link::Logistic, 2.5).unwrap(), 0.924142, epsilon = 1e-6);
        assert!(link(Link::Logistic, f64::NAN).is_err());
        assert!(link(Link::Probit, f64::INFINITY).is_err());
        assert_eq!(link(Link::Logistic, 1e6).unwrap(), 1.0 - PROB_FLOOR);
        assert_eq!(link(Link::Probit, -1e6).unwrap(), PROB_FLOOR);
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let e = scalar_emission(0.0, 0.0, 1.0);
        assert_abs_diff_eq!(emission_logdensity(&e, &[0.0], &[0.0]).unwrap(), -0.918939, epsilon = 1e-6);
        let e = scalar_emission(0.0, 0.5, 1.0);
        assert_abs_diff_eq!(emission_logdensity(&e, &[0.5], &[1.0]).unwrap(), -0.918939, epsilon = 1e-6);
    }

    #[test]
    fn density_rejects_indefinite_covariance() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = RegimeEmission::new(DVector::zeros(2), DMatrix::zeros(2, 2), sigma).unwrap_err();
        assert_eq!(err, Error::NotPositiveDefinite { pivot: 1 });
    }

    #[test]
    fn density_integrates_to_one() {
        let e = scalar_emission(0.3, 0.4, 0.7);
        let h = 1e-3;
        let total: f64 = (-10_000..10_000)
            .map(|i| {
                let y = i as f64 * h;
                emission_logdensity(&e, &[y], &[0.5]).unwrap().exp() * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn flat_functions_give_uniform_rows() {
        let f = TransitionFunction::constant(Link::Logistic, 2, 0.0);
        let m = transition_probs(&f, &f, &[0.4, -1.0]).unwrap();
        assert_eq!(m, [[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn linear_logit_transition() {
        let f0 = TransitionFunction::linear(Link::Logistic, DVector::from_vec(vec![0.0, 1.0, 0.0])).unwrap();
        let f1 = TransitionFunction::constant(Link::Logistic, 2, 0.0);
        let m = transition_probs(&f0, &f1, &[2.5, 7.0]).unwrap();
        assert_abs_diff_eq!(m[0][1], 0.924142, epsilon = 1e-6);
        assert_abs_diff_eq!(m[0][0] + m[0][1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn coefficient_length_is_checked() {
        let err = TransitionFunction::new(
            Representation::Linear {
                link: Link::Logistic,
                n_covariates: 2,
            },
            DVector::zeros(2),
            0.0,
        );
        assert!(err.is_err());
        let neg = TransitionFunction::new(
            Representation::Linear {
                link: Link::Logistic,
                n_covariates: 1,
            },
            DVector::zeros(2),
            -1.0,
        );
        assert!(matches!(neg, Err(Error::Config(_))));
    }

    #[test]
    fn dataset_validation() {
        let y = DMatrix::zeros(1, 2);
        let x = DMatrix::zeros(1, 1);
        assert!(TimeSeriesDataset::new(y, x).is_err());
        let y = DMatrix::zeros(3, 2);
        let x = DMatrix::zeros(4, 1);
        assert!(TimeSeriesDataset::new(y, x).is_err());
        let mut y = DMatrix::zeros(3, 2);
        y[(1, 1)] = f64::NAN;
        assert!(TimeSeriesDataset::new(y, DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn pi_must_sum_to_one() {
        let e = scalar_emission(0.0, 0.0, 1.0);
        let f = TransitionFunction::constant(Link::Logistic, 1, 0.0);
        let bad = ModelParameters::new([e.clone(), e.clone()], [0.6, 0.5], [f.clone(), f.clone()]);
        assert!(bad.is_err());
        assert!(ModelParameters::new([e.clone(), e], [0.25, 0.75], [f.clone(), f]).is_ok());
    }
}
