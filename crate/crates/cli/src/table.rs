//! CSV files: datasets, ground truth and posteriors.
//!
//! A dataset has a header `t,y1..yd,x1..xp`; the first column is an
//! integer time index.

use std::path::Path;

use nalgebra::DMatrix;
use spms_core::simulate::GroundTruth;
use spms_core::{PosteriorSummary, TimeSeriesDataset};

use crate::error::{CliError, CliResult};

fn writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_row<I, S>(w: &mut csv::Writer<std::fs::File>, path: &Path, row: I) -> CliResult<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| CliError::io(path, e))
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_dataset(path: &Path, data: &TimeSeriesDataset) -> CliResult<()> {
    let mut w = writer(path)?;
    let header = std::iter::once("t".to_string())
        .chain((1..=data.obs_dim()).map(|i| format!("y{i}")))
        .chain((1..=data.cov_dim()).map(|i| format!("x{i}")));
    write_row(&mut w, path, header)?;
    for t in 0..data.len() {
        let mut row = vec![t.to_string()];
        row.extend(data.y().row(t).iter().map(|&v| fmt(v)));
        row.extend(data.x().row(t).iter().map(|&v| fmt(v)));
        write_row(&mut w, path, row)?;
    }
    finish(w, path)
}

/// Column counts `(d, p)` implied by a dataset header.
fn parse_header(header: &csv::StringRecord, path: &Path) -> CliResult<(usize, usize)> {
    let bad = |msg: String| CliError::Usage(format!("{}: header: {msg}", path.display()));
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.first() != Some(&"t") {
        return Err(bad("first column must be 't'".into()));
    }
    let d = names[1..].iter().take_while(|n| n.starts_with('y')).count();
    let p = names.len() - 1 - d;
    for (i, name) in names[1..].iter().enumerate() {
        let expected = if i < d {
            format!("y{}", i + 1)
        } else {
            format!("x{}", i - d + 1)
        };
        if *name != expected {
            return Err(bad(format!("column {} is '{name}', expected '{expected}'", i + 2)));
        }
    }
    if d == 0 || p == 0 {
        return Err(bad(format!("need at least one y and one x column, found {d} and {p}")));
    }
    Ok((d, p))
}

pub fn read_dataset(path: &Path) -> CliResult<TimeSeriesDataset> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    let (d, p) = parse_header(&header, path)?;
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: row {row}: {e}", path.display())))?;
        if rec.len() != d + p + 1 {
            return Err(CliError::Usage(format!(
                "{}: row {row}: expected {} columns, found {}",
                path.display(),
                d + p + 1,
                rec.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let field = field.trim();
            let column = &header[c];
            if c == 0 {
                field.parse::<i64>().map_err(|_| {
                    CliError::Usage(format!("{}: row {row}, column t: '{field}' is not an integer", path.display()))
                })?;
                continue;
            }
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "{}: row {row}, column {column}: '{field}' is not a finite number",
                        path.display()
                    ))
                })?;
            if c <= d {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    let n = y.len() / d;
    let data = TimeSeriesDataset::new(DMatrix::from_row_slice(n, d, &y), DMatrix::from_row_slice(n, p, &x))
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(data)
}

/// Ground truth: `t,state,onset` where `onset` is 1 when the state
/// differs from the previous one.
pub fn write_truth(path: &Path, truth: &GroundTruth) -> CliResult<()> {
    let mut w = writer(path)?;
    write_row(&mut w, path, ["t", "state", "onset"])?;
    let mut onsets = truth.transition_onsets.iter().peekable();
    for (t, s) in truth.states.iter().enumerate() {
        let onset = if onsets.peek() == Some(&&t) {
            onsets.next();
            "1"
        } else {
            "0"
        };
        write_row(&mut w, path, [t.to_string(), s.to_string(), onset.to_string()])?;
    }
    finish(w, path)
}

pub fn read_states(path: &Path) -> CliResult<Vec<usize>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    let col = header.iter().position(|h| h.trim() == "state").ok_or_else(|| {
        CliError::Usage(format!("{}: no 'state' column", path.display()))
    })?;
    let mut states = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let field = rec.get(col).unwrap_or("").trim();
        match field {
            "0" => states.push(0),
            "1" => states.push(1),
            _ => {
                return Err(CliError::Usage(format!(
                    "{}: row {}, column state: '{field}' is not 0 or 1",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(states)
}

/// Posterior table: smoothed probabilities, MAP state and the fitted
/// probabilities `p01`, `p11` of being in regime 1 at `t+1` given regime
/// 0 or 1 at `t`.
pub fn write_posterior(path: &Path, post: &PosteriorSummary, probs: &[[f64; 2]]) -> CliResult<()> {
    let mut w = writer(path)?;
    write_row(&mut w, path, ["t", "z0", "z1", "s_hat", "p01", "p11"])?;
    let states = post.map_states();
    for (t, z) in post.z_hat.iter().enumerate() {
        write_row(
            &mut w,
            path,
            [
                t.to_string(),
                fmt(z[0]),
                fmt(z[1]),
                states[t].to_string(),
                fmt(probs[t][0]),
                fmt(probs[t][1]),
            ],
        )?;
    }
    finish(w, path)
}

pub fn write_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = writer(path)?;
    write_row(&mut w, path, header)?;
    for row in rows {
        write_row(&mut w, path, row)?;
    }
    finish(w, path)
}
