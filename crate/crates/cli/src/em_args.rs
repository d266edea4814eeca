use clap::Args;
use spms_core::{EmConfig, KernelConfig, KernelFamily, LambdaChoice, TransitionKind};

use crate::error::{CliError, CliResult};

/// EM and smoothing settings shared by `fit` and `benchmark`.
#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    /// Stop when the relative log-likelihood change falls below this.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    /// Fixed penalty weight (skips GCV).
    #[arg(long, conflicts_with = "lambda_grid")]
    pub lambda: Option<f64>,
    /// Comma-separated penalty weights searched by GCV.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Tensor spline size, or functions per covariate for sp-additive.
    #[arg(long, default_value_t = 15)]
    pub basis_size: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    #[arg(long, default_value = "squared-exponential")]
    pub kernel: String,
    /// Kernel bandwidth; defaults to the median pairwise covariate distance.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Comma-separated multipliers of the bandwidth to choose from.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub bandwidth_multipliers: Vec<f64>,
    /// Use a Nyström feature map of this rank for sp-rkhs.
    #[arg(long)]
    pub nystrom_rank: Option<usize>,
    /// k-means restarts for the initial partition.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
}

impl EmArgs {
    pub fn config(&self, variant: TransitionKind, seed: u64) -> CliResult<EmConfig> {
        if self.restarts == 0 {
            return Err(CliError::Usage("--restarts must be >= 1".into()));
        }
        let lambda = match (&self.lambda, &self.lambda_grid) {
            (Some(l), _) => LambdaChoice::Fixed(*l),
            (None, Some(g)) => LambdaChoice::Grid(g.clone()),
            (None, None) => LambdaChoice::default(),
        };
        let config = EmConfig {
            variant,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            seed,
            lambda,
            spline_basis_size: self.basis_size,
            spline_degree: self.degree,
            kernel: KernelConfig {
                family: KernelFamily::parse(&self.kernel)?,
                bandwidth: self.bandwidth,
                bandwidth_multipliers: self.bandwidth_multipliers.clone(),
                nystrom_rank: self.nystrom_rank,
                ..KernelConfig::default()
            },
            kmeans_restarts: self.restarts,
        };
        config.validate()?;
        Ok(config)
    }
}
