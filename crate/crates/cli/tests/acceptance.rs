//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::Instant;

use clap::Parser;
use spms_cli::{benchmark, Cli, Command};
use spms_core::experiment::VariantMetrics;
use spms_core::{forward_backward, ExperimentReport, TransitionKind};

use common::{enumerate_paths, random_dataset, random_model, rng};

const PARAMETRIC: [TransitionKind; 2] = [TransitionKind::LinearLogit, TransitionKind::LinearProbit];
const SEMIPARAMETRIC: [TransitionKind; 2] = [TransitionKind::Spline, TransitionKind::Rkhs];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct OracleCheck {
    loglik_err: f64,
    z_err: f64,
    xi_err: f64,
    identity_err: f64,
    seconds: f64,
}

fn oracle_check() -> OracleCheck {
    let start = Instant::now();
    let mut r = rng(11);
    let mut out = OracleCheck {
        loglik_err: 0.0,
        z_err: 0.0,
        xi_err: 0.0,
        identity_err: 0.0,
        seconds: 0.0,
    };
    for case in 0..50 {
        let t = 2 + case % 9;
        let d = 1 + case % 2;
        let p = 1 + case % 3;
        let params = random_model(&mut r, d, p);
        let data = random_dataset(&mut r, t, d, p);
        let post = forward_backward(&data, &params).expect("forward-backward");
        let oracle = enumerate_paths(&data, &params);
        out.loglik_err = out.loglik_err.max((post.loglik - oracle.loglik).abs());
        for s in 0..t {
            for k in 0..2 {
                out.z_err = out.z_err.max((post.z_hat[s][k] - oracle.z[s][k]).abs());
            }
            out.identity_err = out.identity_err.max((post.z_hat[s][0] + post.z_hat[s][1] - 1.0).abs());
        }
        for s in 0..t - 1 {
            let xi = &post.xi_hat[s];
            for j in 0..2 {
                for k in 0..2 {
                    out.xi_err = out.xi_err.max((xi[j][k] - oracle.xi[s][j][k]).abs());
                }
                out.identity_err = out
                    .identity_err
                    .max((xi[j][0] + xi[j][1] - post.z_hat[s][j]).abs())
                    .max((xi[0][j] + xi[1][j] - post.z_hat[s + 1][j]).abs());
            }
        }
    }
    out.seconds = start.elapsed().as_secs_f64();
    out
}

fn criterion_1(o: &OracleCheck) -> Outcome {
    outcome(
        o.loglik_err < 1e-10 && o.seconds < 10.0,
        format!("max |loglik - enumeration| = {:.2e}, {:.2} s", o.loglik_err, o.seconds),
    )
}

fn criterion_2(o: &OracleCheck) -> Outcome {
    outcome(
        o.z_err < 1e-9 && o.xi_err < 1e-9 && o.identity_err < 1e-9,
        format!(
            "max z error {:.2e}, max xi error {:.2e}, marginal identities {:.2e}",
            o.z_err, o.xi_err, o.identity_err
        ),
    )
}

fn criterion_3(report: &ExperimentReport) -> Outcome {
    let mut runs = 0;
    let mut monotone = 0;
    let mut converged = 0;
    let mut rollbacks = 0;
    let mut iterations = 0;
    for kind in [TransitionKind::Rkhs, TransitionKind::Spline] {
        for m in report.metrics(kind) {
            runs += 1;
            monotone += usize::from(m.monotone());
            converged += usize::from(m.converged);
            rollbacks += m.rollbacks;
            iterations += m.iterations;
        }
    }
    let rate = rollbacks as f64 / iterations.max(1) as f64;
    outcome(
        runs == 40 && monotone == runs && rate < 0.05,
        format!(
            "{monotone}/{runs} traces monotone, rollbacks {rollbacks}/{iterations} = {:.2}%, {converged}/{runs} converged",
            100.0 * rate
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for kind in TransitionKind::ALL {
        let e = common::gradient_check_error(kind, 3, 10);
        worst = worst.max(e);
        parts.push(format!("{} {e:.1e}", kind.name()));
    }
    outcome(worst < 1e-5, format!("relative error: {}", parts.join(", ")))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn metric_median(report: &ExperimentReport, kind: TransitionKind, f: fn(&VariantMetrics) -> f64) -> f64 {
    median(report.metrics(kind).into_iter().map(f).collect())
}

fn criterion_5(report: &ExperimentReport) -> Outcome {
    let acc = |k| metric_median(report, k, |m| m.accuracy);
    let mate = |k| metric_median(report, k, |m| m.mate);
    let held = |k| metric_median(report, k, |m| m.heldout_loglik);
    let rkhs = acc(TransitionKind::Rkhs);
    let logit = acc(TransitionKind::LinearLogit);
    let worst_param_mate = PARAMETRIC.map(mate).into_iter().fold(f64::INFINITY, f64::min);
    let worst_sp_mate = SEMIPARAMETRIC.map(mate).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let best_param_held = PARAMETRIC.map(held).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let worst_sp_held = SEMIPARAMETRIC.map(held).into_iter().fold(f64::INFINITY, f64::min);
    let pass = rkhs >= 0.78 && rkhs - logit >= 0.04 && worst_sp_mate < worst_param_mate && worst_sp_held > best_param_held;
    outcome(
        pass,
        format!(
            "sp-rkhs accuracy {rkhs:.3} vs ms-var-logit {logit:.3} (gap {:.3}); MATE sp max {worst_sp_mate:.2} < parametric min {worst_param_mate:.2}; held-out sp min {worst_sp_held:.2} > parametric max {best_param_held:.2}",
            rkhs - logit
        ),
    )
}

/// Median over replications of the paired accuracy difference.
fn paired_gap(report: &ExperimentReport, a: TransitionKind, b: TransitionKind) -> f64 {
    let gaps = report
        .replications
        .iter()
        .filter_map(|rep| {
            let get = |k| {
                rep.variants
                    .iter()
                    .find(|v| v.variant == k)
                    .and_then(|v| v.outcome.as_ref().ok())
                    .map(|m| m.accuracy)
            };
            Some(get(a)? - get(b)?)
        })
        .collect();
    median(gaps)
}

fn criterion_6(report: &ExperimentReport) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for sp in SEMIPARAMETRIC {
        for par in PARAMETRIC {
            let g = paired_gap(report, sp, par);
            pass &= (-0.03..=0.03).contains(&g);
            parts.push(format!("{}-{} {g:+.3}", sp.name(), par.name()));
        }
    }
    outcome(pass, format!("median accuracy gaps: {}", parts.join(", ")))
}

fn criterion_7() -> Outcome {
    let worst = (0..20).map(common::newton_oracle_gap).fold(0.0, f64::max);
    outcome(worst < 1e-6, format!("max linear-predictor gap over 20 datasets {worst:.2e}"))
}

fn criterion_8() -> Outcome {
    let mut worst_increase = 0.0f64;
    let mut worst_zero = 0.0f64;
    for seed in 0..10 {
        let (traces, zero_gap) = common::gcv_traces(seed);
        for w in traces.windows(2) {
            worst_increase = worst_increase.max(w[1] - w[0]);
        }
        worst_zero = worst_zero.max(zero_gap.abs());
    }
    outcome(
        worst_increase <= 1e-9 && worst_zero < 1e-6,
        format!("largest trace increase {worst_increase:.2e}, |tr H(0) - M| {worst_zero:.2e}"),
    )
}

fn criterion_9() -> Outcome {
    let mut pass = true;
    let mut full = 0.0f64;
    for seed in 0..5 {
        let [e10, e2, e1] = common::nystrom_errors(seed);
        pass &= e1 <= 1e-6 && e2 <= e10 + 1e-12 && e1 <= e2 + 1e-12;
        full = full.max(e1);
    }
    outcome(pass, format!("max error at m = T {full:.2e}, ordering held on all 5 datasets: {pass}"))
}

fn benchmark_args(extra: &[&str], dir: &Path, tag: &str) -> benchmark::BenchmarkArgs {
    let report = dir.join(format!("report_{tag}.csv"));
    let summary = dir.join(format!("summary_{tag}.txt"));
    let mut args = vec![
        "spms".to_string(),
        "benchmark".to_string(),
        format!("--report={}", report.display()),
        format!("--summary={}", summary.display()),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    match Cli::try_parse_from(args).expect("benchmark flags").command {
        Command::Benchmark(a) => a,
        _ => unreachable!(),
    }
}

fn criterion_10(dir: &Path) -> Outcome {
    let small = [
        "--replications=3",
        "--train-len=200",
        "--holdout-len=60",
        "--max-iterations=25",
    ];
    let mut files = Vec::new();
    for (tag, workers) in [("w1a", "1"), ("w1b", "1"), ("w2", "2")] {
        let mut flags = small.to_vec();
        let w = format!("--workers={workers}");
        flags.push(&w);
        let args = benchmark_args(&flags, dir, tag);
        benchmark::execute(&args).expect("small benchmark");
        files.push(std::fs::read(&args.report).expect("report"));
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same,
        format!("3 runs (workers 1, 1, 2), report sizes {:?} bytes, identical: {same}", files.iter().map(Vec::len).collect::<Vec<_>>()),
    )
}

fn record(failed: &mut Vec<usize>, id: usize, name: &str, start: Instant, o: Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let seconds = start.elapsed().as_secs_f64();
    println!("criterion {id:>2} {tag} {name} ({seconds:.1} s): {}", o.detail);
    if !o.pass {
        failed.push(id);
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut failed = Vec::new();

    let t = Instant::now();
    let oracle = oracle_check();
    record(&mut failed, 1, "likelihood vs path enumeration", t, criterion_1(&oracle));
    record(&mut failed, 2, "posteriors vs path enumeration", t, criterion_2(&oracle));
    let t = Instant::now();
    record(&mut failed, 4, "gradient checks", t, criterion_4());
    let t = Instant::now();
    record(&mut failed, 7, "IRLS vs Newton oracle", t, criterion_7());
    let t = Instant::now();
    record(&mut failed, 8, "GCV trace sanity", t, criterion_8());
    let t = Instant::now();
    record(&mut failed, 9, "Nystrom error", t, criterion_9());
    let t = Instant::now();
    record(&mut failed, 10, "benchmark determinism", t, criterion_10(dir.path()));

    let t = Instant::now();
    let table1 = benchmark::run(&benchmark_args(&[], dir.path(), "table1")).expect("benchmark run");
    record(&mut failed, 5, "desk-scale benchmark", t, criterion_5(&table1));
    // the monotonicity criterion reuses the sp-rkhs and sp-spline fits above
    let t = Instant::now();
    record(&mut failed, 3, "EM monotonicity", t, criterion_3(&table1));

    let t = Instant::now();
    let control = benchmark::execute(&benchmark_args(&["--truth=linear"], dir.path(), "control")).expect("control run");
    record(&mut failed, 6, "linear-truth control", t, criterion_6(&control));

    failed.sort_unstable();
    if failed.is_empty() {
        println!("all 10 criteria passed");
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
