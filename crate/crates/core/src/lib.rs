//! Two-regime Markov-switching VAR(1) models whose transition probabilities
//! are smooth functions of covariates, fitted by generalized EM.

pub mod basis;
pub mod em;
pub mod emission;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod transition;

pub use basis::{KernelFamily, KernelSpec, SplineBasis, TensorSplineBasis};
pub use em::{align_labels, initialize, run_em, AlignReference, EmConfig, FitResult, KernelConfig, LambdaChoice};
pub use error::{Error, Result};
pub use experiment::{run_benchmark, BenchmarkConfig, ExperimentReport};
pub use inference::{forward_backward, observed_loglik, PosteriorSummary};
pub use model::{Link, ModelParameters, RegimeEmission, TimeSeriesDataset, TransitionFunction, TransitionKind};
pub use simulate::{simulate_dataset, GeneratingSpec, GroundTruth, TrueTransition};
