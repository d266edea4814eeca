//! Synthetic switching-VAR data with known transition functions, and the
//! evaluation metrics used against the known regimes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::inference::{emission_table, loglik_tables, observed_loglik};
use crate::linalg::{cholesky_lower, sigmoid};
use crate::model::{
    stochastic_rows, Link, ModelParameters, RegimeEmission, TimeSeriesDataset, TransitionFunction, PROB_FLOOR,
};

/// Default matching window for transition onsets, in time steps.
pub const ONSET_WINDOW: usize = 12;

/// True transition log-odds used by the generator.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueTransition {
    /// `f₀ = 2 sin(π x₁) - 1.5 x₂² + 0.5`, `f₁ = -2 cos(π x₁) + x₁ x₂`.
    Benchmark,
    /// `f_j = b_j[0] + Σ_i b_j[i + 1] x_i`.
    Linear { f0: Vec<f64>, f1: Vec<f64> },
    /// `f_j ≡ c_j`.
    Constant { f0: f64, f1: f64 },
}

impl TrueTransition {
    /// Linear truth used for the control experiment.
    pub fn linear_control() -> Self {
        TrueTransition::Linear {
            f0: vec![-0.5, 1.5, -1.0],
            f1: vec![0.5, 1.0, 1.5],
        }
    }

    pub fn n_covariates(&self) -> Option<usize> {
        match self {
            TrueTransition::Benchmark => Some(2),
            TrueTransition::Linear { f0, .. } => Some(f0.len() - 1),
            TrueTransition::Constant { .. } => None,
        }
    }

    /// `(f₀(x), f₁(x))`.
    pub fn log_odds(&self, x: &[f64]) -> (f64, f64) {
        match self {
            TrueTransition::Benchmark => {
                let (x1, x2) = (x[0], x[1]);
                (
                    2.0 * (PI * x1).sin() - 1.5 * x2 * x2 + 0.5,
                    -2.0 * (PI * x1).cos() + x1 * x2,
                )
            }
            TrueTransition::Linear { f0, f1 } => {
                let lin = |b: &[f64]| b[0] + b[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
                (lin(f0), lin(f1))
            }
            TrueTransition::Constant { f0, f1 } => (*f0, *f1),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrueTransition::Benchmark => "benchmark",
            TrueTransition::Linear { .. } => "linear",
            TrueTransition::Constant { .. } => "constant",
        }
    }
}

/// Everything needed to generate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratingSpec {
    pub emissions: [RegimeEmission; 2],
    pub pi: [f64; 2],
    pub transition: TrueTransition,
    pub n_covariates: usize,
}

impl GeneratingSpec {
    /// Regime 0: `μ = (-1, 0, 0.5)`, `A = 0.3 I`, `Σ = I`; regime 1:
    /// `μ = (1, -0.5, 0)`, `A = 0.2 I`, `Σ = diag(1.2, 0.8, 1.0)`;
    /// `π = (0.5, 0.5)`; two standard-normal covariates.
    pub fn benchmark() -> Self {
        Self::with_transition(TrueTransition::Benchmark)
    }

    pub fn with_transition(transition: TrueTransition) -> Self {
        let e0 = RegimeEmission::new(
            DVector::from_vec(vec![-1.0, 0.0, 0.5]),
            DMatrix::identity(3, 3) * 0.3,
            DMatrix::identity(3, 3),
        )
        .expect("valid regime 0");
        let e1 = RegimeEmission::new(
            DVector::from_vec(vec![1.0, -0.5, 0.0]),
            DMatrix::identity(3, 3) * 0.2,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.2, 0.8, 1.0])),
        )
        .expect("valid regime 1");
        let n_covariates = transition.n_covariates().unwrap_or(2);
        Self {
            emissions: [e0, e1],
            pi: [0.5, 0.5],
            transition,
            n_covariates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.emissions[0].dim() != self.emissions[1].dim() {
            return Err(Error::Config("regimes disagree on the observation dimension".into()));
        }
        if self.pi.iter().any(|p| !(0.0..=1.0).contains(p)) || (self.pi[0] + self.pi[1] - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("initial distribution {:?} is invalid", self.pi)));
        }
        match self.transition.n_covariates() {
            Some(p) if p != self.n_covariates => Err(Error::Config(format!(
                "transition takes {p} covariates but the spec draws {}",
                self.n_covariates
            ))),
            _ if self.n_covariates == 0 => Err(Error::Config("need at least one covariate".into())),
            _ => Ok(()),
        }
    }

    /// Relabeled spec: emissions and `π` swap and `f₀' = -f₁`, `f₁' = -f₀`.
    pub fn swapped(&self) -> Result<Self> {
        let transition = match &self.transition {
            TrueTransition::Linear { f0, f1 } => TrueTransition::Linear {
                f0: f1.iter().map(|v| -v).collect(),
                f1: f0.iter().map(|v| -v).collect(),
            },
            TrueTransition::Constant { f0, f1 } => TrueTransition::Constant { f0: -f1, f1: -f0 },
            TrueTransition::Benchmark => {
                return Err(Error::Config("the benchmark truth has no closed-form relabeling".into()))
            }
        };
        Ok(Self {
            emissions: [self.emissions[1].clone(), self.emissions[0].clone()],
            pi: [self.pi[1], self.pi[0]],
            transition,
            n_covariates: self.n_covariates,
        })
    }

    /// Per-step transition matrices along the covariate rows `0..T-1`.
    pub fn transition_table(&self, data: &TimeSeriesDataset) -> Vec<[[f64; 2]; 2]> {
        (0..data.len() - 1)
            .map(|t| {
                let (a, b) = self.transition.log_odds(&data.x_row(t));
                stochastic_rows(clamp_prob(sigmoid(a)), clamp_prob(sigmoid(b)))
            })
            .collect()
    }

    /// Observed-data log-likelihood of `data` under the generating model.
    pub fn loglik(&self, data: &TimeSeriesDataset) -> Result<f64> {
        if data.cov_dim() != self.n_covariates || data.obs_dim() != self.emissions[0].dim() {
            return Err(Error::Domain("data dimensions do not match the generating spec".into()));
        }
        // only the emissions of this shell are used
        let flat = TransitionFunction::constant(Link::Logistic, self.n_covariates, 0.0);
        let shell = ModelParameters {
            emissions: self.emissions.clone(),
            pi: self.pi,
            transitions: [flat.clone(), flat],
        };
        let emis = emission_table(data, &shell)?;
        loglik_tables(&emis, &self.transition_table(data), self.pi)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Known regime path of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub states: Vec<usize>,
    /// Sorted `t` with `s_t ≠ s_{t-1}`.
    pub transition_onsets: Vec<usize>,
    pub spec: GeneratingSpec,
}

/// Time indices where the state differs from the previous one.
pub fn onsets(states: &[usize]) -> Vec<usize> {
    (1..states.len()).filter(|&t| states[t] != states[t - 1]).collect()
}

/// Simulates `t_len` steps on stream 0 of `seed`.
pub fn simulate_dataset(t_len: usize, seed: u64, spec: &GeneratingSpec) -> Result<(TimeSeriesDataset, GroundTruth)> {
    simulate_stream(t_len, seed, 0, spec)
}

/// Simulates `t_len` steps from ChaCha8 seeded with `seed` on stream
/// `stream`; replications use their index as the stream.
///
/// Per step the generator draws the covariates, then the state (one
/// uniform; the chain stays iff it falls below the stay probability), then
/// the emission noise. The first emission uses `y₋₁ = 0`.
pub fn simulate_stream(
    t_len: usize,
    seed: u64,
    stream: u64,
    spec: &GeneratingSpec,
) -> Result<(TimeSeriesDataset, GroundTruth)> {
    if t_len < 2 {
        return Err(Error::Config(format!("need T >= 2, got {t_len}")));
    }
    spec.validate()?;
    let d = spec.emissions[0].dim();
    let p = spec.n_covariates;
    let chol = [
        cholesky_lower(&spec.emissions[0].sigma)?,
        cholesky_lower(&spec.emissions[1].sigma)?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut y = DMatrix::zeros(t_len, d);
    let mut x = DMatrix::zeros(t_len, p);
    let mut states = Vec::with_capacity(t_len);
    let mut prev_y = DVector::zeros(d);
    let mut eps = DVector::zeros(d);
    let mut xrow = vec![0.0; p];
    for t in 0..t_len {
        for v in xrow.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let u: f64 = rng.gen();
        let s = if t == 0 {
            usize::from(u >= spec.pi[0])
        } else {
            let prev = states[t - 1];
            let (f0, f1) = spec.transition.log_odds(&x.row(t - 1).iter().copied().collect::<Vec<_>>());
            let q = clamp_prob(sigmoid(if prev == 0 { f0 } else { f1 }));
            let stay = if prev == 0 { 1.0 - q } else { q };
            if u < stay {
                prev
            } else {
                1 - prev
            }
        };
        for v in eps.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let e = &spec.emissions[s];
        let yt = &e.mu + &e.a * &prev_y + &chol[s] * &eps;
        y.set_row(t, &yt.transpose());
        for (c, v) in xrow.iter().enumerate() {
            x[(t, c)] = *v;
        }
        states.push(s);
        prev_y = yt;
    }
    let data = TimeSeriesDataset::new(y, x)?;
    let transition_onsets = onsets(&states);
    Ok((
        data,
        GroundTruth {
            states,
            transition_onsets,
            spec: spec.clone(),
        },
    ))
}

/// Fraction of matching labels, maximized over the two labelings.
pub fn classification_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::Domain(format!(
            "predicted has {} states, truth has {}",
            predicted.len(),
            truth.len()
        )));
    }
    let agree = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    let n = truth.len();
    Ok(agree.max(n - agree) as f64 / n as f64)
}

/// Mean absolute transition error between onset lists.
///
/// Candidate pairs within `window` steps are matched greedily in order of
/// increasing distance (ties broken by the earlier onset). Matched pairs
/// cost their distance; unmatched true and predicted onsets cost `window`
/// each. The total is divided by the number of true onsets, or by the
/// number of predicted onsets when the truth has none.
pub fn mate_onsets(predicted: &[usize], truth: &[usize], window: usize) -> f64 {
    if truth.is_empty() {
        return if predicted.is_empty() { 0.0 } else { window as f64 };
    }
    let mut pairs: Vec<(usize, usize, usize, usize, usize)> = Vec::new();
    for (i, &a) in truth.iter().enumerate() {
        for (j, &b) in predicted.iter().enumerate() {
            let gap = a.abs_diff(b);
            if gap <= window {
                pairs.push((gap, a.min(b), a.max(b), i, j));
            }
        }
    }
    pairs.sort_unstable();
    let mut used_true = vec![false; truth.len()];
    let mut used_pred = vec![false; predicted.len()];
    let mut total = 0.0;
    let mut matched = 0;
    for (gap, _, _, i, j) in pairs {
        if !used_true[i] && !used_pred[j] {
            used_true[i] = true;
            used_pred[j] = true;
            total += gap as f64;
            matched += 1;
        }
    }
    let unmatched = (truth.len() - matched) + (predicted.len() - matched);
    (total + (unmatched * window) as f64) / truth.len() as f64
}

/// MATE of predicted states against true states; invariant to relabeling.
pub fn mean_abs_transition_error(predicted: &[usize], truth: &[usize], window: usize) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Domain(format!(
            "predicted has {} states, truth has {}",
            predicted.len(),
            truth.len()
        )));
    }
    Ok(mate_onsets(&onsets(predicted), &onsets(truth), window))
}

/// Log-likelihood of a held-out window, filtering from the model's `π`.
pub fn heldout_loglik(params: &ModelParameters, holdout: &TimeSeriesDataset) -> Result<f64> {
    observed_loglik(holdout, params)
}
