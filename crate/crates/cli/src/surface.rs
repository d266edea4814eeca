use std::path::PathBuf;

use clap::Args;

use crate::error::{CliError, CliResult};
use crate::model_file::SavedModel;
use crate::table::{fmt, write_records};

#[derive(Debug, Clone, Args)]
pub struct SurfaceArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// The two covariates on the grid axes, 1-based (x1 is 1).
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub dims: Vec<usize>,
    /// Grid points per axis.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    /// Values of every covariate, comma-separated; entries on the grid
    /// axes are ignored. Defaults to the training means.
    #[arg(long, value_delimiter = ',')]
    pub fixed: Option<Vec<f64>>,
    #[arg(long, default_value = "surface.csv")]
    pub out: PathBuf,
}

/// `n` evenly spaced points over the training range widened by 10% on
/// each side.
pub fn axis(min: f64, max: f64, n: usize) -> Vec<f64> {
    let pad = 0.1 * (max - min);
    let (lo, hi) = (min - pad, max + pad);
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Grid rows `(x_a, x_b, f₀, P₀, f₁, P₁)`, with `P_j` the probability of
/// regime 1 at the next step given regime `j` now.
pub fn surface(model: &SavedModel, dims: [usize; 2], grid: usize, fixed: &[f64]) -> CliResult<Vec<[f64; 6]>> {
    let p = model.cov_dim();
    if dims[0] == dims[1] || dims.iter().any(|&d| d >= p) {
        return Err(CliError::Usage(format!(
            "surface dimensions must be two distinct covariates among x1..x{p}"
        )));
    }
    if fixed.len() != p {
        return Err(CliError::Usage(format!("need {p} fixed covariate values, got {}", fixed.len())));
    }
    if grid == 0 {
        return Err(CliError::Usage("--grid must be >= 1".into()));
    }
    let c = &model.covariates;
    let xa = axis(c.min[dims[0]], c.max[dims[0]], grid);
    let xb = axis(c.min[dims[1]], c.max[dims[1]], grid);
    let links = [model.params.transitions[0].link(), model.params.transitions[1].link()];
    let mut point = fixed.to_vec();
    let mut rows = Vec::with_capacity(grid * grid);
    for &a in &xa {
        for &b in &xb {
            point[dims[0]] = a;
            point[dims[1]] = b;
            let [f0, f1] = model.log_odds(&point)?;
            rows.push([a, b, f0, links[0].prob(f0), f1, links[1].prob(f1)]);
        }
    }
    Ok(rows)
}

pub fn run(args: &SurfaceArgs) -> CliResult<usize> {
    let model = SavedModel::load(&args.model)?;
    let p = model.cov_dim();
    if args.dims.len() != 2 || args.dims.iter().any(|&d| d == 0 || d > p) {
        return Err(CliError::Usage(format!(
            "--dims needs two covariate indices in 1..={p}, got {:?}",
            args.dims
        )));
    }
    let dims = [args.dims[0] - 1, args.dims[1] - 1];
    let fixed = args.fixed.clone().unwrap_or_else(|| model.covariates.mean.clone());
    let rows = surface(&model, dims, args.grid, &fixed)?;
    let xa = format!("x{}", dims[0] + 1);
    let xb = format!("x{}", dims[1] + 1);
    let header = [xa.as_str(), xb.as_str(), "f0", "prob0", "f1", "prob1"];
    let records: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|&v| fmt(v)).collect()).collect();
    write_records(&args.out, &header, &records)?;
    println!("wrote {} grid points to {}", rows.len(), args.out.display());
    Ok(rows.len())
}
