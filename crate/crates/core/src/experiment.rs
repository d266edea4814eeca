//! Monte Carlo comparison of transition variants on simulated data.

use rayon::prelude::*;

use crate::em::{align_labels, run_em, AlignReference, EmConfig, MONOTONE_SLACK};
use crate::error::{Error, Result};
use crate::linalg::quantile;
use crate::model::TransitionKind;
use crate::simulate::{
    classification_accuracy, heldout_loglik, mean_abs_transition_error, simulate_stream, GeneratingSpec,
    ONSET_WINDOW,
};

/// The four variants of the standard comparison.
pub const BENCHMARK_VARIANTS: [TransitionKind; 4] = [
    TransitionKind::LinearLogit,
    TransitionKind::LinearProbit,
    TransitionKind::Spline,
    TransitionKind::Rkhs,
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub replications: usize,
    pub seed: u64,
    pub train_len: usize,
    pub holdout_len: usize,
    pub variants: Vec<TransitionKind>,
    /// Template for every fit; `variant` and `seed` are set per run.
    pub em: EmConfig,
    pub spec: GeneratingSpec,
    pub workers: usize,
    pub onset_window: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            replications: 20,
            seed: 1,
            train_len: 1000,
            holdout_len: 200,
            variants: BENCHMARK_VARIANTS.to_vec(),
            em: EmConfig::default(),
            spec: GeneratingSpec::benchmark(),
            workers: 1,
            onset_window: ONSET_WINDOW,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.train_len < 2 || self.holdout_len < 2 {
            return Err(Error::Config("train and holdout windows need at least 2 steps each".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no variants to compare".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.spec.validate()?;
        self.em.validate()
    }
}

/// EM seed of replication `rep`: SplitMix64 of the base seed offset by the
/// replication index. The data of replication `rep` come from stream `rep`
/// of the base seed.
pub fn replication_seed(base: u64, rep: u64) -> u64 {
    let mut z = base.wrapping_add(rep.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantMetrics {
    pub accuracy: f64,
    pub mate: f64,
    pub heldout_loglik: f64,
    pub train_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rollbacks: usize,
    pub loglik_trace: Vec<f64>,
}

impl VariantMetrics {
    /// Every step of the trace is non-decreasing within the EM slack.
    pub fn monotone(&self) -> bool {
        self.loglik_trace
            .windows(2)
            .all(|w| w[1] >= w[0] - MONOTONE_SLACK)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRecord {
    pub variant: TransitionKind,
    pub outcome: std::result::Result<VariantMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub em_seed: u64,
    /// Held-out log-likelihood of the generating model.
    pub truth_heldout_loglik: f64,
    pub variants: Vec<VariantRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        Some(Self {
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: TransitionKind,
    pub successes: usize,
    pub failures: usize,
    pub heldout_loglik: Option<Quartiles>,
    pub accuracy: Option<Quartiles>,
    pub mate: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub replications: Vec<ReplicationRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn row(&self, variant: TransitionKind) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.variant == variant)
    }

    /// Successful metrics of one variant, in replication order.
    pub fn metrics(&self, variant: TransitionKind) -> Vec<&VariantMetrics> {
        self.replications
            .iter()
            .flat_map(|r| r.variants.iter())
            .filter(|v| v.variant == variant)
            .filter_map(|v| v.outcome.as_ref().ok())
            .collect()
    }

    pub fn failure_count(&self) -> usize {
        self.summary.iter().map(|r| r.failures).sum()
    }
}

/// Simulates, fits and scores one replication.
pub fn run_replication(config: &BenchmarkConfig, rep: usize) -> Result<ReplicationRecord> {
    let total = config.train_len + config.holdout_len;
    let (data, truth) = simulate_stream(total, config.seed, rep as u64, &config.spec)?;
    let train = data.window(0, config.train_len)?;
    let holdout = data.window(config.train_len, total)?;
    let states = &truth.states[..config.train_len];
    let em_seed = replication_seed(config.seed, rep as u64);
    let truth_heldout_loglik = config.spec.loglik(&holdout)?;
    let variants = config
        .variants
        .iter()
        .map(|&variant| {
            let em = EmConfig {
                variant,
                seed: em_seed,
                ..config.em.clone()
            };
            let outcome = run_em(&train, &em)
                .and_then(|fit| {
                    let fit = align_labels(&fit, AlignReference::States(states))?;
                    let predicted = fit.states();
                    Ok(VariantMetrics {
                        accuracy: classification_accuracy(&predicted, states)?,
                        mate: mean_abs_transition_error(&predicted, states, config.onset_window)?,
                        heldout_loglik: heldout_loglik(&fit.params, &holdout)?,
                        train_loglik: fit.loglik(),
                        iterations: fit.iterations,
                        converged: fit.converged,
                        rollbacks: fit.rollbacks,
                        loglik_trace: fit.loglik_trace,
                    })
                })
                .map_err(|e| e.to_string());
            VariantRecord { variant, outcome }
        })
        .collect();
    Ok(ReplicationRecord {
        replication: rep,
        em_seed,
        truth_heldout_loglik,
        variants,
    })
}

fn summarize(config: &BenchmarkConfig, reps: &[ReplicationRecord]) -> Vec<SummaryRow> {
    config
        .variants
        .iter()
        .map(|&variant| {
            let ok: Vec<&VariantMetrics> = reps
                .iter()
                .flat_map(|r| r.variants.iter())
                .filter(|v| v.variant == variant)
                .filter_map(|v| v.outcome.as_ref().ok())
                .collect();
            let col = |f: fn(&VariantMetrics) -> f64| Quartiles::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            SummaryRow {
                variant,
                successes: ok.len(),
                failures: reps.len() - ok.len(),
                heldout_loglik: col(|m| m.heldout_loglik),
                accuracy: col(|m| m.accuracy),
                mate: col(|m| m.mate),
            }
        })
        .collect()
}

/// Runs every replication on a pool of `config.workers` threads. Results
/// are collected in replication order, so the report does not depend on
/// the worker count.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let replications = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| run_replication(config, rep))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(config, &replications);
    Ok(ExperimentReport {
        replications,
        summary,
    })
}
