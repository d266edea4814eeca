//! Generalized EM: k-means initialization, E/M alternation with rollback of
//! likelihood-decreasing block updates, and label alignment.

mod init;
mod learner;

pub use init::{kmeans2, KMeans};

use nalgebra::DVector;

use crate::basis::KernelFamily;
use crate::emission::{update_initial, update_regime};
use crate::error::{Error, Result};
use crate::inference::{forward_backward, PosteriorSummary};
use crate::model::{ModelParameters, RegimeEmission, TimeSeriesDataset, TransitionFunction, TransitionKind};
use crate::transition::{build_pseudo_data, fit_parametric, PseudoData};
use learner::{LearnerState, TransitionLearner};

/// Slack below which a likelihood decrease is treated as round-off.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaChoice {
    /// `size` log-spaced points from `lo` to `hi`, times `tr(DᵀD) / tr(P)`
    /// of the variant's design and penalty.
    Auto { size: usize, lo: f64, hi: f64 },
    Grid(Vec<f64>),
    Fixed(f64),
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Auto {
            size: 25,
            lo: 1e-4,
            hi: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// Base bandwidth; the median pairwise covariate distance when `None`.
    pub bandwidth: Option<f64>,
    /// Candidate multipliers of the base bandwidth, scored by GCV on the
    /// initial hard assignment. A single entry skips the search.
    pub bandwidth_multipliers: Vec<f64>,
    /// Eigenvalues of the anchor Gram matrix below this fraction of the
    /// largest are dropped from the feature map.
    pub rank_tolerance: f64,
    /// Use a rank-`m` Nyström feature map instead of the exact one.
    pub nystrom_rank: Option<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            bandwidth: None,
            bandwidth_multipliers: vec![1.0],
            rank_tolerance: 1e-8,
            nystrom_rank: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub variant: TransitionKind,
    /// Stop when `|Δ loglik| / (|loglik| + 1)` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub lambda: LambdaChoice,
    /// Total number of tensor-product spline functions, or functions per
    /// covariate for the additive variant.
    pub spline_basis_size: usize,
    pub spline_degree: usize,
    pub kernel: KernelConfig,
    pub kmeans_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            variant: TransitionKind::Rkhs,
            tolerance: 1e-6,
            max_iterations: 500,
            seed: 0,
            lambda: LambdaChoice::default(),
            spline_basis_size: 15,
            spline_degree: 3,
            kernel: KernelConfig::default(),
            kmeans_restarts: 10,
        }
    }
}

impl EmConfig {
    pub fn for_variant(variant: TransitionKind) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::Config(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        match &self.lambda {
            LambdaChoice::Auto { size, lo, hi } => {
                if *size == 0 || !(*lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
                    return Err(Error::Config(format!(
                        "bad automatic lambda grid: {size} points over [{lo}, {hi}]"
                    )));
                }
            }
            LambdaChoice::Grid(g) => {
                if g.is_empty() || g.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
                    return Err(Error::Config("lambda grid must be non-empty with positive values".into()));
                }
            }
            LambdaChoice::Fixed(l) => {
                if !(*l >= 0.0) || !l.is_finite() || (*l == 0.0 && self.variant == TransitionKind::Rkhs) {
                    return Err(Error::Config(format!("invalid fixed lambda {l}")));
                }
            }
        }
        if self.spline_degree == 0 && matches!(self.variant, TransitionKind::Spline | TransitionKind::AdditiveSpline) {
            return Err(Error::Config("spline degree must be >= 1".into()));
        }
        if let Some(b) = self.kernel.bandwidth {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::Config(format!("kernel bandwidth must be positive, got {b}")));
            }
        }
        if self.kernel.bandwidth_multipliers.is_empty()
            || self.kernel.bandwidth_multipliers.iter().any(|m| !(*m > 0.0) || !m.is_finite())
        {
            return Err(Error::Config("bandwidth multipliers must be positive".into()));
        }
        if !(self.kernel.rank_tolerance > 0.0 && self.kernel.rank_tolerance < 1.0) {
            return Err(Error::Config("kernel rank tolerance must lie in (0, 1)".into()));
        }
        if self.kernel.nystrom_rank == Some(0) {
            return Err(Error::Config("Nystrom rank must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParameters,
    /// Posterior under `params`.
    pub posterior: PosteriorSummary,
    /// Log-likelihood of the initial model followed by one entry per EM
    /// iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Iterations in which a block update was undone because it lowered
    /// the likelihood.
    pub rollbacks: usize,
    /// Emission updates skipped because a regime had too little mass.
    pub frozen_updates: usize,
    /// Kernel bandwidth used by the kernel variant.
    pub bandwidth: Option<f64>,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace holds the initial value")
    }

    /// Marginal MAP states.
    pub fn states(&self) -> Vec<usize> {
        self.posterior.map_states()
    }

    /// The same fit with regime labels exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            params: swap_params(&self.params),
            posterior: self.posterior.swapped(),
            ..self.clone()
        }
    }
}

/// Exchanges the regime labels: emissions and `π` swap, and
/// `f₀' = -f₁`, `f₁' = -f₀` so that every transition probability is
/// preserved.
pub fn swap_params(p: &ModelParameters) -> ModelParameters {
    ModelParameters {
        emissions: [p.emissions[1].clone(), p.emissions[0].clone()],
        pi: [p.pi[1], p.pi[0]],
        transitions: [p.transitions[1].negated(), p.transitions[0].negated()],
    }
}

struct Start {
    params: ModelParameters,
    learner: TransitionLearner,
    states: [LearnerState; 2],
    bandwidth: Option<f64>,
}

fn hard_posterior(labels: &[usize]) -> PosteriorSummary {
    let z_hat = labels
        .iter()
        .map(|&l| if l == 1 { [0.0, 1.0] } else { [1.0, 0.0] })
        .collect();
    let xi_hat = labels
        .windows(2)
        .map(|w| {
            let mut x = [[0.0; 2]; 2];
            x[w[0]][w[1]] = 1.0;
            x
        })
        .collect();
    PosteriorSummary {
        z_hat,
        xi_hat,
        loglik: f64::NAN,
    }
}

fn start(data: &TimeSeriesDataset, config: &EmConfig) -> Result<Start> {
    config.validate()?;
    let d = data.obs_dim();
    if data.len() < 2 * d {
        return Err(Error::Initialization(format!(
            "need T >= 2d = {} observations, got {}",
            2 * d,
            data.len()
        )));
    }
    let km = kmeans2(data.y(), config.kmeans_restarts, config.seed)?;
    let post = hard_posterior(&km.labels);
    let mut emissions = Vec::with_capacity(2);
    for k in 0..2 {
        let e = update_regime(data, &post, k).map_err(|e| match e {
            Error::DegenerateRegime { regime, effective, .. } => Error::Initialization(format!(
                "cluster {regime} has only {effective} members"
            )),
            other => other,
        })?;
        emissions.push(e);
    }
    let n1 = km.labels.iter().filter(|&&l| l == 1).count() as f64 / km.labels.len() as f64;
    let pi = [1.0 - n1, n1];

    let x = data.transition_covariates();
    let link = config.variant.link();
    let mut linear_eta = Vec::with_capacity(2);
    let mut pds = Vec::with_capacity(2);
    for j in 0..2 {
        let pd = PseudoData::from_states(&km.labels, data, j)?;
        let fit = fit_parametric(&pd, link, None)?;
        let gamma = fit.gamma;
        let eta = DVector::from_fn(x.nrows(), |i, _| {
            gamma[0] + (0..x.ncols()).map(|c| gamma[c + 1] * x[(i, c)]).sum::<f64>()
        });
        linear_eta.push(eta);
        pds.push(pd);
    }

    let (learner, bandwidth) = if config.variant == TransitionKind::Rkhs {
        let candidates = TransitionLearner::kernel_candidates(&x, config)?;
        let mut best: Option<(f64, f64, TransitionLearner)> = None;
        let single = candidates.len() == 1;
        for (bw, cand) in candidates {
            let score = if single {
                0.0
            } else {
                let mut s = 0.0;
                for j in 0..2 {
                    let init = cand.initial_state(&linear_eta[j])?;
                    let (fitted, _) = cand.fit(&pds[j], &init)?;
                    let eta = cand.design() * &fitted.coef;
                    s += cand.choose_lambda(&pds[j], &eta)?.1;
                }
                s
            };
            if best.as_ref().map_or(true, |b| score < b.0) {
                best = Some((score, bw, cand));
            }
        }
        let (_, bw, l) = best.expect("at least one bandwidth candidate");
        (l, Some(bw))
    } else {
        (TransitionLearner::new(&x, config)?, None)
    };
    let s0 = learner.initial_state(&linear_eta[0])?;
    let s1 = learner.initial_state(&linear_eta[1])?;
    let transitions = [learner.to_function(&s0)?, learner.to_function(&s1)?];
    let [e0, e1]: [RegimeEmission; 2] = emissions.try_into().expect("two regimes");
    let params = ModelParameters::new([e0, e1], pi, transitions)?;
    Ok(Start {
        params,
        learner,
        states: [s0, s1],
        bandwidth,
    })
}

/// Starting parameters: 2-means on the observations, emissions fit on the
/// hard clusters, `π` from cluster frequencies, and transition functions
/// matched to a parametric fit of the hard transition indicators.
pub fn initialize(data: &TimeSeriesDataset, config: &EmConfig) -> Result<ModelParameters> {
    Ok(start(data, config)?.params)
}

/// Runs generalized EM to convergence.
pub fn run_em(data: &TimeSeriesDataset, config: &EmConfig) -> Result<FitResult> {
    let Start {
        mut params,
        learner,
        states: mut learn_states,
        bandwidth,
    } = start(data, config).map_err(|e| e.at_iteration(0))?;
    let mut post = forward_backward(data, &params).map_err(|e| e.at_iteration(0))?;
    let mut trace = vec![post.loglik];
    let mut converged = false;
    let mut rollbacks = 0;
    let mut frozen_updates = 0;
    let mut iterations = 0;
    for it in 1..=config.max_iterations {
        iterations = it;
        let err = |e: Error| e.at_iteration(it);
        let prev_ll = post.loglik;

        let mut emissions = params.emissions.clone();
        for (k, slot) in emissions.iter_mut().enumerate() {
            match update_regime(data, &post, k) {
                Ok(e) => *slot = e,
                Err(Error::DegenerateRegime { .. }) => frozen_updates += 1,
                Err(e) => return Err(err(e)),
            }
        }
        let emission_step = ModelParameters {
            emissions,
            pi: update_initial(&post),
            transitions: params.transitions.clone(),
        };

        let mut new_states = learn_states.clone();
        let mut transitions: Vec<TransitionFunction> = Vec::with_capacity(2);
        for j in 0..2 {
            let pd = build_pseudo_data(&post, data, j).map_err(err)?;
            let (state, _) = learner.fit(&pd, &learn_states[j]).map_err(err)?;
            transitions.push(learner.to_function(&state).map_err(err)?);
            new_states[j] = state;
        }
        let [t0, t1]: [TransitionFunction; 2] = transitions.try_into().expect("two regimes");
        let full_step = ModelParameters {
            transitions: [t0, t1],
            ..emission_step.clone()
        };

        let full_post = forward_backward(data, &full_step).map_err(err)?;
        if full_post.loglik >= prev_ll - MONOTONE_SLACK {
            params = full_step;
            post = full_post;
            learn_states = new_states;
        } else {
            rollbacks += 1;
            let e_post = forward_backward(data, &emission_step).map_err(err)?;
            if e_post.loglik >= prev_ll - MONOTONE_SLACK {
                params = emission_step;
                post = e_post;
            }
        }
        trace.push(post.loglik);
        let rel = (post.loglik - prev_ll).abs() / (post.loglik.abs() + 1.0);
        if rel < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        params,
        posterior: post,
        loglik_trace: trace,
        converged,
        iterations,
        rollbacks,
        frozen_updates,
        bandwidth,
    })
}

/// What a fit's labels are aligned against.
#[derive(Debug, Clone, Copy)]
pub enum AlignReference<'a> {
    /// A state path; the labeling with more agreeing time points wins.
    States(&'a [usize]),
    /// Reference parameters; the labeling with the smaller total distance
    /// between regime intercepts wins.
    Params(&'a ModelParameters),
}

/// Relabels `fit` to best match `reference`; ties keep the current labels.
pub fn align_labels(fit: &FitResult, reference: AlignReference<'_>) -> Result<FitResult> {
    let swap = match reference {
        AlignReference::States(states) => {
            let map = fit.states();
            if map.len() != states.len() {
                return Err(Error::Domain(format!(
                    "{} reference states for a fit of length {}",
                    states.len(),
                    map.len()
                )));
            }
            let agree = map.iter().zip(states).filter(|(a, b)| a == b).count();
            agree * 2 < map.len()
        }
        AlignReference::Params(p) => {
            if p.obs_dim() != fit.params.obs_dim() {
                return Err(Error::Domain("reference parameters have a different dimension".into()));
            }
            let m = |a: usize, b: usize| (&fit.params.emissions[a].mu - &p.emissions[b].mu).norm();
            m(0, 1) + m(1, 0) < m(0, 0) + m(1, 1)
        }
    };
    Ok(if swap { fit.swapped() } else { fit.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn config_validation() {
        assert!(EmConfig::default().validate().is_ok());
        let bad = EmConfig {
            tolerance: 0.0,
            ..EmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EmConfig {
            max_iterations: 0,
            ..EmConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn initialization_rejects_identical_rows() {
        let data = TimeSeriesDataset::new(
            DMatrix::from_element(30, 2, 1.0),
            DMatrix::from_fn(30, 1, |i, _| i as f64),
        )
        .unwrap();
        let err = initialize(&data, &EmConfig::for_variant(TransitionKind::LinearLogit)).unwrap_err();
        assert!(matches!(err, Error::Initialization(_)));
    }

    #[test]
    fn hard_posterior_is_consistent() {
        let p = hard_posterior(&[0, 1, 1, 0]);
        assert_eq!(p.xi_hat[0], [[0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(p.xi_hat[2], [[0.0, 0.0], [1.0, 0.0]]);
    }
}
