//! Versioned plain-text model files.
//!
//! One record per line: a keyword followed by whitespace-separated
//! values. Floats are written with 17 significant digits, which is enough
//! to reproduce every `f64` exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use spms_core::model::Representation;
use spms_core::{
    KernelFamily, KernelSpec, Link, ModelParameters, RegimeEmission, SplineBasis, TensorSplineBasis, TimeSeriesDataset,
    TransitionFunction, TransitionKind,
};

use crate::error::{CliError, CliResult};

pub const HEADER: &str = "spms-model 1";

/// Column-wise z-scoring applied to the data before fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub y_mean: Vec<f64>,
    pub y_sd: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
}

fn column_stats(m: &DMatrix<f64>, what: char) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let n = m.nrows() as f64;
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for (c, col) in m.column_iter().enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(CliError::Usage(format!("cannot standardize constant column {what}{}", c + 1)));
        }
        means.push(mean);
        sds.push(var.sqrt());
    }
    Ok((means, sds))
}

impl Scaling {
    pub fn fit(data: &TimeSeriesDataset) -> CliResult<Self> {
        let (y_mean, y_sd) = column_stats(data.y(), 'y')?;
        let (x_mean, x_sd) = column_stats(data.x(), 'x')?;
        Ok(Self {
            y_mean,
            y_sd,
            x_mean,
            x_sd,
        })
    }

    pub fn apply(&self, data: &TimeSeriesDataset) -> CliResult<TimeSeriesDataset> {
        if data.obs_dim() != self.y_mean.len() || data.cov_dim() != self.x_mean.len() {
            return Err(CliError::Usage("data dimensions do not match the model's scaling".into()));
        }
        let y = DMatrix::from_fn(data.len(), data.obs_dim(), |t, c| {
            (data.y()[(t, c)] - self.y_mean[c]) / self.y_sd[c]
        });
        let x = DMatrix::from_fn(data.len(), data.cov_dim(), |t, c| self.scale_x(c, data.x()[(t, c)]));
        Ok(TimeSeriesDataset::new(y, x)?)
    }

    pub fn scale_x(&self, c: usize, v: f64) -> f64 {
        (v - self.x_mean[c]) / self.x_sd[c]
    }
}

/// Per-covariate summary of the training data, on the original scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSummary {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

impl CovariateSummary {
    pub fn of(data: &TimeSeriesDataset) -> Self {
        let x = data.x();
        let cols = || x.column_iter();
        Self {
            min: cols().map(|c| c.min()).collect(),
            max: cols().map(|c| c.max()).collect(),
            mean: cols().map(|c| c.sum() / c.len() as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub variant: TransitionKind,
    pub params: ModelParameters,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub covariates: CovariateSummary,
    pub scaling: Option<Scaling>,
}

impl SavedModel {
    pub fn obs_dim(&self) -> usize {
        self.params.emissions[0].dim()
    }

    pub fn cov_dim(&self) -> usize {
        self.covariates.min.len()
    }

    /// The data as the model sees it (standardized when the fit was).
    pub fn prepare(&self, data: &TimeSeriesDataset) -> CliResult<TimeSeriesDataset> {
        if data.obs_dim() != self.obs_dim() || data.cov_dim() != self.cov_dim() {
            return Err(CliError::Usage(format!(
                "data has d={}, p={} but the model expects d={}, p={}",
                data.obs_dim(),
                data.cov_dim(),
                self.obs_dim(),
                self.cov_dim()
            )));
        }
        match &self.scaling {
            Some(s) => s.apply(data),
            None => Ok(data.clone()),
        }
    }

    /// `(f₀(x), f₁(x))` at a covariate vector on the original scale.
    pub fn log_odds(&self, x: &[f64]) -> CliResult<[f64; 2]> {
        let x: Vec<f64> = match &self.scaling {
            Some(s) => x.iter().enumerate().map(|(c, &v)| s.scale_x(c, v)).collect(),
            None => x.to_vec(),
        };
        Ok([
            self.params.transitions[0].eval(&x)?,
            self.params.transitions[1].eval(&x)?,
        ])
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::default();
        w.line("spms-model", &["1".to_string()]);
        w.line("variant", &[self.variant.name().to_string()]);
        w.line("obs_dim", &[self.obs_dim().to_string()]);
        w.line("cov_dim", &[self.cov_dim().to_string()]);
        w.floats("loglik", &[self.loglik]);
        w.line("iterations", &[self.iterations.to_string()]);
        w.line("converged", &[self.converged.to_string()]);
        w.floats("pi", &self.params.pi);
        for (k, e) in self.params.emissions.iter().enumerate() {
            w.line("emission", &[k.to_string()]);
            w.floats("mu", e.mu.as_slice());
            w.floats("a", &row_major(&e.a));
            w.floats("sigma", &row_major(&e.sigma));
        }
        w.floats("covariate_min", &self.covariates.min);
        w.floats("covariate_max", &self.covariates.max);
        w.floats("covariate_mean", &self.covariates.mean);
        match &self.scaling {
            None => w.line("scaling", &["none".to_string()]),
            Some(s) => {
                w.line("scaling", &["z".to_string()]);
                w.floats("y_mean", &s.y_mean);
                w.floats("y_sd", &s.y_sd);
                w.floats("x_mean", &s.x_mean);
                w.floats("x_sd", &s.x_sd);
            }
        }
        for (j, f) in self.params.transitions.iter().enumerate() {
            w.line("transition", &[j.to_string()]);
            write_transition(&mut w, f);
        }
        w.line("end", &[]);
        w.out
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut r = Reader::new(text);
        let header = r.next_line()?;
        if header.1.trim() != HEADER {
            return Err(r.error(header.0, format!("expected header '{HEADER}'")));
        }
        let variant = TransitionKind::parse(&r.word("variant")?).map_err(|e| CliError::Usage(e.to_string()))?;
        let d = r.usize("obs_dim")?;
        let p = r.usize("cov_dim")?;
        let loglik = r.floats("loglik", Some(1))?[0];
        let iterations = r.usize("iterations")?;
        let converged = match r.word("converged")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(r.error(r.line, format!("bad converged flag '{other}'"))),
        };
        let pi = r.floats("pi", Some(2))?;
        let mut emissions = Vec::new();
        for k in 0..2 {
            r.expect_index("emission", k)?;
            let mu = DVector::from_vec(r.floats("mu", Some(d))?);
            let a = DMatrix::from_row_slice(d, d, &r.floats("a", Some(d * d))?);
            let sigma = DMatrix::from_row_slice(d, d, &r.floats("sigma", Some(d * d))?);
            let line = r.line;
            emissions.push(RegimeEmission::new(mu, a, sigma).map_err(|e| r.error(line, e.to_string()))?);
        }
        let covariates = CovariateSummary {
            min: r.floats("covariate_min", Some(p))?,
            max: r.floats("covariate_max", Some(p))?,
            mean: r.floats("covariate_mean", Some(p))?,
        };
        let scaling = match r.word("scaling")?.as_str() {
            "none" => None,
            "z" => Some(Scaling {
                y_mean: r.floats("y_mean", Some(d))?,
                y_sd: r.floats("y_sd", Some(d))?,
                x_mean: r.floats("x_mean", Some(p))?,
                x_sd: r.floats("x_sd", Some(p))?,
            }),
            other => return Err(r.error(r.line, format!("unknown scaling '{other}'"))),
        };
        let mut transitions = Vec::new();
        for j in 0..2 {
            r.expect_index("transition", j)?;
            let f = read_transition(&mut r)?;
            if f.n_covariates() != p {
                return Err(r.error(r.line, format!("transition {j} takes {} covariates, expected {p}", f.n_covariates())));
            }
            transitions.push(f);
        }
        r.fields("end", Some(0))?;
        let [e0, e1]: [RegimeEmission; 2] = emissions.try_into().expect("two emissions");
        let [t0, t1]: [TransitionFunction; 2] = transitions.try_into().expect("two transitions");
        let params = ModelParameters::new([e0, e1], [pi[0], pi[1]], [t0, t1])?;
        Ok(Self {
            variant,
            params,
            loglik,
            iterations,
            converged,
            covariates,
            scaling,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn link_name(link: Link) -> &'static str {
    match link {
        Link::Logistic => "logistic",
        Link::Probit => "probit",
    }
}

fn write_margins(w: &mut Writer, margins: &[SplineBasis]) {
    for m in margins {
        let mut vals = vec![m.degree().to_string()];
        vals.extend(m.breakpoints().iter().map(|&b| float(b)));
        w.line("margin", &vals);
    }
}

fn write_transition(w: &mut Writer, f: &TransitionFunction) {
    match f.representation() {
        Representation::Linear { link, n_covariates } => {
            w.line("repr", &["linear".into(), link_name(*link).into(), n_covariates.to_string()]);
        }
        Representation::Spline(basis) => {
            w.line("repr", &["spline".into(), basis.margins().len().to_string()]);
            write_margins(w, basis.margins());
        }
        Representation::Additive(bases) => {
            w.line("repr", &["additive".into(), bases.len().to_string()]);
            write_margins(w, bases);
        }
        Representation::Rkhs { kernel, anchors } => {
            w.line("repr", &["rkhs".into()]);
            w.line("kernel", &[kernel.family.name().into(), float(kernel.bandwidth)]);
            w.line("anchors", &[anchors.nrows().to_string(), anchors.ncols().to_string()]);
            for row in anchors.row_iter() {
                w.floats("row", &row.iter().copied().collect::<Vec<_>>());
            }
        }
    }
    w.floats("lambda", &[f.lambda()]);
    w.floats("coefficients", f.coefficients().as_slice());
}

fn read_margins(r: &mut Reader, count: usize) -> CliResult<Vec<SplineBasis>> {
    (0..count)
        .map(|_| {
            let fields = r.fields("margin", None)?;
            let line = r.line;
            let degree: usize = fields
                .first()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| r.error(line, "margin needs a degree".into()))?;
            let breaks = fields[1..]
                .iter()
                .map(|s| r.parse_float(s))
                .collect::<CliResult<Vec<f64>>>()?;
            SplineBasis::new(breaks, degree).map_err(|e| r.error(line, e.to_string()))
        })
        .collect()
}

fn read_transition(r: &mut Reader) -> CliResult<TransitionFunction> {
    let fields = r.fields("repr", None)?;
    let line = r.line;
    let count = |i: usize| -> CliResult<usize> {
        fields
            .get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Usage(format!("line {line}: bad repr record")))
    };
    let repr = match fields.first().map(String::as_str) {
        Some("linear") => {
            let link = match fields.get(1).map(String::as_str) {
                Some("logistic") => Link::Logistic,
                Some("probit") => Link::Probit,
                _ => return Err(r.error(line, "unknown link".into())),
            };
            Representation::Linear {
                link,
                n_covariates: count(2)?,
            }
        }
        Some("spline") => {
            let m = count(1)?;
            let margins = read_margins(r, m)?;
            Representation::Spline(TensorSplineBasis::new(margins).map_err(|e| r.error(line, e.to_string()))?)
        }
        Some("additive") => {
            let m = count(1)?;
            Representation::Additive(read_margins(r, m)?)
        }
        Some("rkhs") => {
            let k = r.fields("kernel", Some(2))?;
            let kline = r.line;
            let family = KernelFamily::parse(&k[0]).map_err(|e| r.error(kline, e.to_string()))?;
            let bandwidth = r.parse_float(&k[1])?;
            let kernel = KernelSpec::new(family, bandwidth).map_err(|e| r.error(kline, e.to_string()))?;
            let dims = r.fields("anchors", Some(2))?;
            let aline = r.line;
            let parse_dim =
                |s: &str| -> CliResult<usize> { s.parse().map_err(|_| CliError::Usage(format!("line {aline}: bad anchor count"))) };
            let (rows, cols) = (parse_dim(&dims[0])?, parse_dim(&dims[1])?);
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                values.extend(r.floats("row", Some(cols))?);
            }
            Representation::Rkhs {
                kernel,
                anchors: DMatrix::from_row_slice(rows, cols, &values),
            }
        }
        _ => return Err(r.error(line, "unknown representation".into())),
    };
    let lambda = r.floats("lambda", Some(1))?[0];
    let coefficients = DVector::from_vec(r.floats("coefficients", None)?);
    let line = r.line;
    TransitionFunction::new(repr, coefficients, lambda).map_err(|e| r.error(line, e.to_string()))
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Default)]
struct Writer {
    out: String,
}

impl Writer {
    fn line(&mut self, key: &str, values: &[String]) {
        self.out.push_str(key);
        for v in values {
            self.out.push(' ');
            self.out.push_str(v);
        }
        self.out.push('\n');
    }

    fn floats(&mut self, key: &str, values: &[f64]) {
        let v: Vec<String> = values.iter().map(|&x| float(x)).collect();
        self.line(key, &v);
    }
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            line: 0,
        }
    }

    fn error(&self, line: usize, msg: String) -> CliError {
        CliError::Usage(format!("model file line {line}: {msg}"))
    }

    fn next_line(&mut self) -> CliResult<(usize, &'a str)> {
        for (i, l) in self.lines.by_ref() {
            if !l.trim().is_empty() {
                self.line = i + 1;
                return Ok((i + 1, l));
            }
        }
        Err(CliError::Usage("model file ends early".into()))
    }

    /// Values of the next record, which must start with `key`.
    fn fields(&mut self, key: &str, count: Option<usize>) -> CliResult<Vec<String>> {
        let (n, l) = self.next_line()?;
        let mut it = l.split_whitespace();
        let found = it.next().unwrap_or("");
        if found != key {
            return Err(self.error(n, format!("expected '{key}', found '{found}'")));
        }
        let values: Vec<String> = it.map(str::to_string).collect();
        if let Some(c) = count {
            if values.len() != c {
                return Err(self.error(n, format!("'{key}' needs {c} values, found {}", values.len())));
            }
        }
        Ok(values)
    }

    fn word(&mut self, key: &str) -> CliResult<String> {
        Ok(self.fields(key, Some(1))?.remove(0))
    }

    fn usize(&mut self, key: &str) -> CliResult<usize> {
        let w = self.word(key)?;
        w.parse().map_err(|_| self.error(self.line, format!("'{key}' is not a count: '{w}'")))
    }

    fn expect_index(&mut self, key: &str, index: usize) -> CliResult<()> {
        let found = self.usize(key)?;
        if found != index {
            return Err(self.error(self.line, format!("expected {key} {index}, found {found}")));
        }
        Ok(())
    }

    fn parse_float(&self, s: &str) -> CliResult<f64> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.error(self.line, format!("'{s}' is not a finite number")))
    }

    fn floats(&mut self, key: &str, count: Option<usize>) -> CliResult<Vec<f64>> {
        let fields = self.fields(key, count)?;
        fields.iter().map(|s| self.parse_float(s)).collect()
    }
}
