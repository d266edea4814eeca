//! Per-variant transition M-step with a fixed design built once per fit.

use nalgebra::{DMatrix, DVector};

use super::{EmConfig, LambdaChoice};
use crate::basis::{
    median_pairwise_distance, nystrom_factor, KernelFeatures, KernelSpec, SplineBasis,
    TensorSplineBasis,
};
use crate::error::{Error, Result};
use crate::model::{design_for, penalty_for, Link, Representation, TransitionFunction, TransitionKind};
use crate::transition::{
    backfit_additive, fit_parametric, irls_penalized, lambda_grid, select_lambda_gcv, FitStatus, IrlsOptions,
    PseudoData, Smoother,
};

#[derive(Debug, Clone)]
enum Form {
    Linear(Link),
    Spline(TensorSplineBasis),
    Rkhs(KernelFeatures),
    Additive(Vec<SplineBasis>),
}

/// Coefficients of one transition function in the learner's own
/// parameterization (feature-space weights for the kernel variant).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LearnerState {
    pub coef: DVector<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct TransitionLearner {
    form: Form,
    design: DMatrix<f64>,
    penalty: DMatrix<f64>,
    grid: Vec<f64>,
    fixed_lambda: Option<f64>,
}

impl TransitionLearner {
    /// Builds the design on the training transition covariates.
    pub fn new(x: &DMatrix<f64>, config: &EmConfig) -> Result<Self> {
        let form = match config.variant {
            TransitionKind::LinearLogit => Form::Linear(Link::Logistic),
            TransitionKind::LinearProbit => Form::Linear(Link::Probit),
            TransitionKind::Spline => Form::Spline(TensorSplineBasis::from_covariates(
                x,
                config.spline_basis_size,
                config.spline_degree,
            )?),
            TransitionKind::AdditiveSpline => {
                let per = config.spline_basis_size.max(config.spline_degree + 1).max(3);
                Form::Additive(
                    (0..x.ncols())
                        .map(|c| {
                            let col: Vec<f64> = x.column(c).iter().copied().collect();
                            SplineBasis::from_quantiles(&col, per, config.spline_degree)
                        })
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            TransitionKind::Rkhs => {
                let bandwidth = config
                    .kernel
                    .bandwidth
                    .unwrap_or_else(|| median_pairwise_distance(x));
                Form::Rkhs(kernel_features(x, bandwidth, config)?)
            }
        };
        Self::from_form(form, x, config)
    }

    /// Kernel learners for each bandwidth candidate.
    pub fn kernel_candidates(x: &DMatrix<f64>, config: &EmConfig) -> Result<Vec<(f64, Self)>> {
        let base = config
            .kernel
            .bandwidth
            .unwrap_or_else(|| median_pairwise_distance(x));
        config
            .kernel
            .bandwidth_multipliers
            .iter()
            .map(|m| {
                let bw = base * m;
                let form = Form::Rkhs(kernel_features(x, bw, config)?);
                Ok((bw, Self::from_form(form, x, config)?))
            })
            .collect()
    }

    fn from_form(form: Form, x: &DMatrix<f64>, config: &EmConfig) -> Result<Self> {
        let (design, penalty) = match &form {
            Form::Linear(link) => {
                let repr = Representation::Linear {
                    link: *link,
                    n_covariates: x.ncols(),
                };
                (design_for(&repr, x)?, penalty_for(&repr)?)
            }
            Form::Spline(b) => (b.design(x)?, b.penalty()),
            Form::Rkhs(f) => (f.features.clone(), DMatrix::identity(f.rank(), f.rank())),
            Form::Additive(bases) => {
                let repr = Representation::Additive(bases.clone());
                (design_for(&repr, x)?, penalty_for(&repr)?)
            }
        };
        let (grid, fixed_lambda) = match &config.lambda {
            LambdaChoice::Fixed(l) => (vec![*l], Some(*l)),
            LambdaChoice::Grid(g) => (g.clone(), None),
            LambdaChoice::Auto { size, lo, hi } => {
                // λP and DᵀWD on a comparable footing
                let scale = design.iter().map(|v| v * v).sum::<f64>() / penalty.trace().max(1.0);
                (lambda_grid(scale, *size, *lo, *hi), None)
            }
        };
        Ok(Self {
            form,
            design,
            penalty,
            grid,
            fixed_lambda,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    fn smooth(&self) -> bool {
        !matches!(self.form, Form::Linear(_))
    }

    /// Least-squares coefficients whose fitted values on the training rows
    /// are closest to `eta`.
    pub fn project(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        let gram = self.design.tr_mul(&self.design);
        let scale = (gram.trace() / gram.nrows().max(1) as f64).max(1.0);
        let ridge = DMatrix::identity(gram.nrows(), gram.ncols()) * (1e-10 * scale);
        crate::linalg::solve_spd(&(gram + ridge), &self.design.tr_mul(eta))
    }

    /// GCV choice of `λ` at the linear predictor `eta` (the fixed value when
    /// configured), together with the best score.
    pub fn choose_lambda(&self, pd: &PseudoData, eta: &DVector<f64>) -> Result<(f64, f64)> {
        if let Some(l) = self.fixed_lambda {
            return Ok((l, f64::NAN));
        }
        let sel = select_lambda_gcv(
            pd,
            Smoother::Penalized {
                design: &self.design,
                penalty: &self.penalty,
            },
            eta,
            &self.grid,
        )?;
        Ok((sel.lambda, sel.scores[sel.index]))
    }

    /// One transition M-step for a single origin regime, warm-started at
    /// `state`.
    pub fn fit(&self, pd: &PseudoData, state: &LearnerState) -> Result<(LearnerState, FitStatus)> {
        match &self.form {
            Form::Linear(link) => {
                let fit = fit_parametric(pd, *link, Some(&state.coef))?;
                Ok((
                    LearnerState {
                        coef: fit.gamma,
                        lambda: 0.0,
                    },
                    fit.status,
                ))
            }
            Form::Spline(_) | Form::Rkhs(_) => {
                let eta = &self.design * &state.coef;
                let (lambda, _) = self.choose_lambda(pd, &eta)?;
                let fit = irls_penalized(
                    pd,
                    &self.design,
                    &self.penalty,
                    lambda,
                    None,
                    &state.coef,
                    &IrlsOptions::default(),
                )?;
                Ok((
                    LearnerState {
                        coef: fit.coefficients,
                        lambda,
                    },
                    fit.status,
                ))
            }
            Form::Additive(bases) => {
                let eta = &self.design * &state.coef;
                let (lambda, _) = self.choose_lambda(pd, &eta)?;
                let lambdas = vec![lambda; bases.len()];
                let fit = backfit_additive(pd, bases, &lambdas, Some(&state.coef))?;
                Ok((
                    LearnerState {
                        coef: fit.coefficients,
                        lambda,
                    },
                    fit.status,
                ))
            }
        }
    }

    /// Initial state matching a linear predictor on the training rows.
    pub fn initial_state(&self, eta: &DVector<f64>) -> Result<LearnerState> {
        let coef = self.project(eta)?;
        let lambda = if self.smooth() {
            self.grid[self.grid.len() / 2]
        } else {
            0.0
        };
        Ok(LearnerState { coef, lambda })
    }

    pub fn to_function(&self, state: &LearnerState) -> Result<TransitionFunction> {
        match &self.form {
            Form::Linear(link) => TransitionFunction::linear(*link, state.coef.clone()),
            Form::Spline(b) => {
                TransitionFunction::new(Representation::Spline(b.clone()), state.coef.clone(), state.lambda)
            }
            Form::Rkhs(f) => TransitionFunction::new(
                Representation::Rkhs {
                    kernel: f.spec,
                    anchors: f.anchors.clone(),
                },
                f.representer_weights(&state.coef),
                state.lambda,
            ),
            Form::Additive(bases) => TransitionFunction::new(
                Representation::Additive(bases.clone()),
                state.coef.clone(),
                state.lambda,
            ),
        }
    }
}

fn kernel_features(x: &DMatrix<f64>, bandwidth: f64, config: &EmConfig) -> Result<KernelFeatures> {
    let spec = KernelSpec::new(config.kernel.family, bandwidth)?;
    match config.kernel.nystrom_rank {
        Some(m) => {
            if m > x.nrows() {
                return Err(Error::Config(format!(
                    "Nystrom rank {m} exceeds the {} training transitions",
                    x.nrows()
                )));
            }
            nystrom_factor(&spec, x, m, config.seed)
        }
        None => KernelFeatures::exact(spec, x.clone(), config.kernel.rank_tolerance),
    }
}
