use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use spms_core::experiment::replication_seed;
use spms_core::simulate::simulate_stream;
use spms_core::{GeneratingSpec, TrueTransition};

use crate::error::{CliError, CliResult};
use crate::table::{write_dataset, write_truth};

/// Which true transition functions drive the simulated chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Truth {
    /// Nonlinear benchmark surfaces.
    Benchmark,
    /// Linear log-odds (control experiment).
    Linear,
}

impl Truth {
    pub fn spec(self) -> GeneratingSpec {
        match self {
            Truth::Benchmark => GeneratingSpec::benchmark(),
            Truth::Linear => GeneratingSpec::with_transition(TrueTransition::linear_control()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Truth::Benchmark => "benchmark",
            Truth::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Series length per replication.
    #[arg(long, default_value_t = 1000)]
    pub length: usize,
    #[arg(long, default_value_t = 1)]
    pub replications: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Truth::Benchmark)]
    pub truth: Truth,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn data_file(rep: usize) -> String {
    format!("data_{rep:03}.csv")
}

pub fn truth_file(rep: usize) -> String {
    format!("truth_{rep:03}.csv")
}

fn floats(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!(" {x:.16e}")).collect()
}

fn manifest(args: &SimulateArgs, spec: &GeneratingSpec) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "spms-simulation 1");
    let _ = writeln!(m, "seed {}", args.seed);
    let _ = writeln!(m, "length {}", args.length);
    let _ = writeln!(m, "replications {}", args.replications);
    let _ = writeln!(m, "truth {}", args.truth.name());
    let _ = writeln!(m, "pi{}", floats(spec.pi));
    for (k, e) in spec.emissions.iter().enumerate() {
        let _ = writeln!(m, "emission {k}");
        let _ = writeln!(m, "mu{}", floats(e.mu.iter().copied()));
        let _ = writeln!(m, "a{}", floats(e.a.transpose().iter().copied()));
        let _ = writeln!(m, "sigma{}", floats(e.sigma.transpose().iter().copied()));
    }
    // replication r uses data stream r; em_seed is the seed a benchmark run
    // with the same base seed passes to EM for that replication
    for r in 0..args.replications {
        let _ = writeln!(
            m,
            "replication {r} stream {r} em_seed {} data {} truth {}",
            replication_seed(args.seed, r as u64),
            data_file(r),
            truth_file(r)
        );
    }
    m
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    if args.replications == 0 {
        return Err(CliError::Usage("--replications must be >= 1".into()));
    }
    if args.length < 2 {
        return Err(CliError::Usage("--length must be >= 2".into()));
    }
    let spec = args.truth.spec();
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    for r in 0..args.replications {
        let (data, truth) = simulate_stream(args.length, args.seed, r as u64, &spec)?;
        write_dataset(&args.out.join(data_file(r)), &data)?;
        write_truth(&args.out.join(truth_file(r)), &truth)?;
    }
    let path: &Path = &args.out.join("manifest.txt");
    std::fs::write(path, manifest(args, &spec)).map_err(|e| CliError::io(path, e))?;
    println!(
        "wrote {} replication(s) of length {} to {}",
        args.replications,
        args.length,
        args.out.display()
    );
    Ok(())
}
