//! Command-line front end: simulate datasets, fit models to CSV data, run
//! the variant comparison and export fitted transition surfaces.

pub mod benchmark;
pub mod config;
pub mod em_args;
pub mod error;
pub mod fit;
pub mod model_file;
pub mod simulate;
pub mod surface;
pub mod table;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "spms", version, about = "Markov-switching VAR with covariate-driven transitions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate datasets with known regimes.
    #[command(args_override_self = true)]
    Simulate(simulate::SimulateArgs),
    /// Fit a model to a dataset CSV.
    #[command(args_override_self = true)]
    Fit(fit::FitArgs),
    /// Compare transition variants over simulated replications.
    #[command(args_override_self = true)]
    Benchmark(benchmark::BenchmarkArgs),
    /// Evaluate fitted transition functions on a covariate grid.
    #[command(args_override_self = true)]
    Surface(surface::SurfaceArgs),
}

/// Parses `args` (program name first) and runs the chosen command. Every
/// subcommand also accepts `--config <file>` with `key = value` lines.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = config::expand_config(args.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Fit(a) => {
            print!("{}", fit::run(a)?);
            Ok(())
        }
        Command::Benchmark(a) => benchmark::run(a).map(|_| ()),
        Command::Surface(a) => surface::run(a).map(|_| ()),
    }
}
