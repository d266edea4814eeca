use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use spms_core::experiment::{Quartiles, BENCHMARK_VARIANTS};
use spms_core::simulate::ONSET_WINDOW;
use spms_core::{run_benchmark, BenchmarkConfig, ExperimentReport, TransitionKind};

use crate::em_args::EmArgs;
use crate::error::{CliError, CliResult};
use crate::simulate::Truth;
use crate::table::{fmt, write_records};

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[arg(long, default_value_t = 20)]
    pub replications: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub train_len: usize,
    #[arg(long, default_value_t = 200)]
    pub holdout_len: usize,
    /// Comma-separated variants to compare.
    #[arg(long, value_delimiter = ',', default_values_t = BENCHMARK_VARIANTS.map(|v| v.name().to_string()))]
    pub variants: Vec<String>,
    #[arg(long, value_enum, default_value_t = Truth::Benchmark)]
    pub truth: Truth,
    /// Replications run concurrently.
    #[arg(long, env = "SPMS_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = ONSET_WINDOW)]
    pub onset_window: usize,
    #[command(flatten)]
    pub em: EmArgs,
    /// Per-replication, per-variant metrics.
    #[arg(long, default_value = "report.csv")]
    pub report: PathBuf,
    /// Median [IQR] table.
    #[arg(long, default_value = "summary.txt")]
    pub summary: PathBuf,
}

impl BenchmarkArgs {
    pub fn config(&self) -> CliResult<BenchmarkConfig> {
        let variants = self
            .variants
            .iter()
            .map(|v| TransitionKind::parse(v.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        let config = BenchmarkConfig {
            replications: self.replications,
            seed: self.seed,
            train_len: self.train_len,
            holdout_len: self.holdout_len,
            variants: variants.clone(),
            em: self.em.config(variants.first().copied().unwrap_or(TransitionKind::Rkhs), 0)?,
            spec: self.truth.spec(),
            workers: self.workers,
            onset_window: self.onset_window,
        };
        config.validate()?;
        Ok(config)
    }
}

pub const REPORT_HEADER: [&str; 14] = [
    "replication",
    "em_seed",
    "variant",
    "status",
    "accuracy",
    "mate",
    "heldout_loglik",
    "train_loglik",
    "truth_heldout_loglik",
    "iterations",
    "converged",
    "rollbacks",
    "monotone",
    "error",
];

pub fn report_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for rep in &report.replications {
        for v in &rep.variants {
            let mut row = vec![
                rep.replication.to_string(),
                rep.em_seed.to_string(),
                v.variant.name().to_string(),
            ];
            match &v.outcome {
                Ok(m) => row.extend([
                    "ok".to_string(),
                    fmt(m.accuracy),
                    fmt(m.mate),
                    fmt(m.heldout_loglik),
                    fmt(m.train_loglik),
                    fmt(rep.truth_heldout_loglik),
                    m.iterations.to_string(),
                    m.converged.to_string(),
                    m.rollbacks.to_string(),
                    m.monotone().to_string(),
                    String::new(),
                ]),
                Err(e) => {
                    row.push("failed".to_string());
                    row.extend(std::iter::repeat(String::new()).take(4));
                    row.push(fmt(rep.truth_heldout_loglik));
                    row.extend(std::iter::repeat(String::new()).take(4));
                    row.push(e.clone());
                }
            }
            rows.push(row);
        }
    }
    rows
}

fn cell(q: Option<Quartiles>, digits: usize) -> String {
    match q {
        Some(q) => format!("{:.*} [{:.*}]", digits, q.median, digits, q.iqr()),
        None => "n/a".to_string(),
    }
}

/// Median [IQR] of each metric, one row per variant.
pub fn summary_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<15} {:>22} {:>18} {:>16}",
        "model", "held-out loglik", "accuracy", "MATE"
    );
    for row in &report.summary {
        let _ = writeln!(
            out,
            "{:<15} {:>22} {:>18} {:>16}",
            row.variant.name(),
            cell(row.heldout_loglik, 2),
            cell(row.accuracy, 3),
            cell(row.mate, 2)
        );
    }
    let fits: usize = report.summary.iter().map(|r| r.successes + r.failures).sum();
    let _ = writeln!(out, "failed fits: {} of {fits}", report.failure_count());
    out
}

pub fn write_report(path: &Path, report: &ExperimentReport) -> CliResult<()> {
    write_records(path, &REPORT_HEADER, &report_rows(report))
}

/// Runs the comparison and writes the report and summary files.
pub fn execute(args: &BenchmarkArgs) -> CliResult<ExperimentReport> {
    let config = args.config()?;
    let report = run_benchmark(&config)?;
    write_report(&args.report, &report)?;
    std::fs::write(&args.summary, summary_table(&report)).map_err(|e| CliError::io(&args.summary, e))?;
    Ok(report)
}

pub fn run(args: &BenchmarkArgs) -> CliResult<ExperimentReport> {
    let report = execute(args)?;
    print!("{}", summary_table(&report));
    Ok(report)
}
