use std::fmt;
use std::path::PathBuf;

use clap::Args;
use spms_core::simulate::{classification_accuracy, heldout_loglik, mean_abs_transition_error, ONSET_WINDOW};
use spms_core::{align_labels, run_em, AlignReference, FitResult, TimeSeriesDataset, TransitionKind};

use crate::em_args::EmArgs;
use crate::error::{CliError, CliResult};
use crate::model_file::{CovariateSummary, SavedModel, Scaling};
use crate::table::{read_dataset, read_states, write_posterior};

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Dataset CSV with columns t,y1..yd,x1..xp.
    #[arg(long)]
    pub data: PathBuf,
    /// One of ms-var-logit, ms-var-probit, sp-spline, sp-rkhs, sp-additive.
    #[arg(long, default_value = "sp-rkhs")]
    pub variant: String,
    /// Seed for the k-means initialization and any randomized features.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub em: EmArgs,
    /// Z-score every column using the training window.
    #[arg(long)]
    pub standardize: bool,
    /// Hold out this many final rows and report their log-likelihood.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    /// Ground-truth CSV with a `state` column; enables accuracy and MATE.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = ONSET_WINDOW)]
    pub onset_window: usize,
    /// Where to write the fitted model.
    #[arg(long, default_value = "model.txt")]
    pub model: PathBuf,
    /// Where to write the per-step posterior table.
    #[arg(long, default_value = "posterior.csv")]
    pub posterior: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub variant: TransitionKind,
    pub iterations: usize,
    pub converged: bool,
    pub rollbacks: usize,
    pub initial_loglik: f64,
    pub final_loglik: f64,
    pub heldout_loglik: Option<f64>,
    pub accuracy: Option<f64>,
    pub mate: Option<f64>,
}

impl fmt::Display for FitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant {}", self.variant.name())?;
        writeln!(
            f,
            "iterations {} ({})",
            self.iterations,
            if self.converged { "converged" } else { "not converged" }
        )?;
        writeln!(
            f,
            "loglik initial {:.4} final {:.4} rollbacks {}",
            self.initial_loglik, self.final_loglik, self.rollbacks
        )?;
        if let Some(h) = self.heldout_loglik {
            writeln!(f, "heldout_loglik {h:.4}")?;
        }
        if let (Some(a), Some(m)) = (self.accuracy, self.mate) {
            writeln!(f, "accuracy {a:.4}")?;
            writeln!(f, "mate {m:.4}")?;
        }
        Ok(())
    }
}

/// Fitted probabilities of regime 1 at `t+1` given regime 0 and 1 at `t`.
pub fn fitted_probabilities(fit: &FitResult, data: &TimeSeriesDataset) -> CliResult<Vec<[f64; 2]>> {
    let [f0, f1] = &fit.params.transitions;
    let (e0, e1) = (f0.eval_rows(data.x())?, f1.eval_rows(data.x())?);
    Ok(e0
        .iter()
        .zip(e1.iter())
        .map(|(&a, &b)| [f0.link().prob(a), f1.link().prob(b)])
        .collect())
}

pub fn run(args: &FitArgs) -> CliResult<FitSummary> {
    let variant = TransitionKind::parse(&args.variant)?;
    let config = args.em.config(variant, args.seed)?;
    let raw = read_dataset(&args.data)?;
    let n = raw.len();
    if args.holdout > 0 && (args.holdout < 2 || args.holdout + 2 > n) {
        return Err(CliError::Usage(format!(
            "--holdout {} must be 0, or at least 2 and leave at least 2 training rows of {n}",
            args.holdout
        )));
    }
    let train_len = n - args.holdout;
    let raw_train = raw.window(0, train_len)?;
    let scaling = if args.standardize {
        Some(Scaling::fit(&raw_train)?)
    } else {
        None
    };
    let scale = |d: TimeSeriesDataset| match &scaling {
        Some(s) => s.apply(&d),
        None => Ok(d),
    };
    let train = scale(raw_train.clone())?;
    let truth = match &args.truth {
        Some(path) => {
            let states = read_states(path)?;
            if states.len() != n && states.len() != train_len {
                return Err(CliError::Usage(format!(
                    "{}: {} states, expected {n} or {train_len}",
                    path.display(),
                    states.len()
                )));
            }
            Some(states[..train_len].to_vec())
        }
        None => None,
    };

    let mut fit = run_em(&train, &config)?;
    if let Some(states) = &truth {
        fit = align_labels(&fit, AlignReference::States(states))?;
    }
    let heldout = if args.holdout > 0 {
        let holdout = scale(raw.window(train_len, n)?)?;
        Some(heldout_loglik(&fit.params, &holdout)?)
    } else {
        None
    };
    let (accuracy, mate) = match &truth {
        Some(states) => {
            let predicted = fit.states();
            (
                Some(classification_accuracy(&predicted, states)?),
                Some(mean_abs_transition_error(&predicted, states, args.onset_window)?),
            )
        }
        None => (None, None),
    };

    let saved = SavedModel {
        variant,
        params: fit.params.clone(),
        loglik: fit.loglik(),
        iterations: fit.iterations,
        converged: fit.converged,
        covariates: CovariateSummary::of(&raw_train),
        scaling,
    };
    saved.save(&args.model)?;
    write_posterior(&args.posterior, &fit.posterior, &fitted_probabilities(&fit, &train)?)?;

    Ok(FitSummary {
        variant,
        iterations: fit.iterations,
        converged: fit.converged,
        rollbacks: fit.rollbacks,
        initial_loglik: fit.loglik_trace[0],
        final_loglik: fit.loglik(),
        heldout_loglik: heldout,
        accuracy,
        mate,
    })
}
