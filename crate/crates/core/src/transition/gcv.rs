use nalgebra::{DMatrix, DVector};

use super::PseudoData;
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, spd_cholesky, weighted_gram};
use crate::model::PROB_FLOOR;

/// The linear smoother whose hat matrix GCV scores.
#[derive(Debug, Clone, Copy)]
pub enum Smoother<'a> {
    /// `H = D (DᵀWD + λP)⁻¹ DᵀW`.
    Penalized {
        design: &'a DMatrix<f64>,
        penalty: &'a DMatrix<f64>,
    },
    /// `H = K (WK + λI)⁻¹ W`, the hat matrix of the kernel IRLS step.
    Kernel { gram: &'a DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcvSelection {
    pub lambda: f64,
    pub index: usize,
    pub scores: Vec<f64>,
    /// `tr(H(λ))` for each grid point.
    pub traces: Vec<f64>,
}

/// `n` log-spaced values from `lo · scale` to `hi · scale`.
pub fn lambda_grid(scale: f64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    if n == 1 {
        return vec![(lo * hi).sqrt() * scale];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp() * scale)
        .collect()
}

/// IRLS weights `W = n p (1 - p)` and working response
/// `z* = η + (ỹ - p) / (p (1 - p))` at linear predictor `eta`.
pub(crate) fn working_response(pd: &PseudoData, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = pd.len();
    let mut w = DVector::zeros(n);
    let mut z = DVector::zeros(n);
    for i in 0..n {
        let p = sigmoid(eta[i]).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let v = p * (1.0 - p);
        w[i] = pd.weights[i] * v;
        z[i] = eta[i] + (pd.responses[i] - p) / v;
    }
    (w, z)
}

fn score(w: &DVector<f64>, z: &DVector<f64>, fitted: &DVector<f64>, trace: f64, n: usize) -> f64 {
    let denom = 1.0 - trace / n as f64;
    if !(denom > 0.0) {
        return f64::INFINITY;
    }
    let rss: f64 = (0..n).map(|i| w[i] * (z[i] - fitted[i]).powi(2)).sum();
    rss / (denom * denom)
}

/// Scores every `λ` in `grid` by generalized cross-validation at the IRLS
/// weights implied by `eta`, and returns the minimizer (first one on ties).
///
/// The trace is divided by the number of pseudo-observations.
pub fn select_lambda_gcv(
    pd: &PseudoData,
    smoother: Smoother<'_>,
    eta: &DVector<f64>,
    grid: &[f64],
) -> Result<GcvSelection> {
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::Config("lambda grid values must be finite and >= 0".into()));
    }
    let n = pd.len();
    if eta.len() != n {
        return Err(Error::Domain(format!("{} linear predictors for {n} rows", eta.len())));
    }
    let (w, z) = working_response(pd, eta);
    let (scores, traces) = match smoother {
        Smoother::Penalized { design, penalty } => penalized_scores(design, penalty, &w, &z, grid)?,
        Smoother::Kernel { gram } => kernel_scores(gram, &w, &z, grid)?,
    };
    let mut best = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_finite() && best.map_or(true, |b: usize| *s < scores[b]) {
            best = Some(i);
        }
    }
    let index = best.ok_or_else(|| Error::Singular("every lambda on the grid has an infinite GCV score".into()))?;
    Ok(GcvSelection {
        lambda: grid[index],
        index,
        scores,
        traces,
    })
}

fn is_identity(p: &DMatrix<f64>) -> bool {
    p.is_square()
        && p
            .iter()
            .enumerate()
            .all(|(k, v)| if k % p.nrows() == k / p.nrows() { *v == 1.0 } else { *v == 0.0 })
}

fn penalized_scores(
    design: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
    grid: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = design.nrows();
    if z.len() != n || penalty.shape() != (design.ncols(), design.ncols()) {
        return Err(Error::Domain("GCV smoother dimensions disagree".into()));
    }
    let a = weighted_gram(design, w);
    let wz = w.component_mul(z);
    let b = design.tr_mul(&wz);
    let mut scores = Vec::with_capacity(grid.len());
    let mut traces = Vec::with_capacity(grid.len());
    if is_identity(penalty) {
        // one eigendecomposition serves the whole grid
        let eig = a.symmetric_eigen();
        let vb = eig.eigenvectors.tr_mul(&b);
        for &lambda in grid {
            let mut coef_rot = vb.clone();
            let mut trace = 0.0;
            for k in 0..coef_rot.len() {
                let mu = eig.eigenvalues[k].max(0.0);
                let denom = mu + lambda;
                if denom <= 0.0 {
                    coef_rot[k] = 0.0;
                    continue;
                }
                coef_rot[k] /= denom;
                trace += mu / denom;
            }
            let fitted = design * (&eig.eigenvectors * coef_rot);
            traces.push(trace);
            scores.push(score(w, z, &fitted, trace, n));
        }
        return Ok((scores, traces));
    }
    for &lambda in grid {
        let system = &a + penalty * lambda;
        let chol = spd_cholesky(&system)?;
        let coef = chol.solve(&b);
        let trace = chol.solve(&a).trace();
        let fitted = design * coef;
        traces.push(trace);
        scores.push(score(w, z, &fitted, trace, n));
    }
    Ok((scores, traces))
}

fn kernel_scores(
    gram: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
    grid: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = gram.nrows();
    if gram.ncols() != n || z.len() != n {
        return Err(Error::Domain("GCV smoother dimensions disagree".into()));
    }
    let mut wk = gram.clone();
    for (i, mut row) in wk.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let wz = w.component_mul(z);
    let mut scores = Vec::with_capacity(grid.len());
    let mut traces = Vec::with_capacity(grid.len());
    for &lambda in grid {
        if !(lambda > 0.0) {
            return Err(Error::Config("kernel GCV needs lambda > 0".into()));
        }
        let mut system = wk.clone();
        for i in 0..n {
            system[(i, i)] += lambda;
        }
        let lu = system.lu();
        let alpha = lu
            .solve(&wz)
            .ok_or_else(|| Error::Singular("kernel GCV system".into()))?;
        let fitted = gram * alpha;
        // tr(K (WK + λI)⁻¹ W) = tr((WK + λI)⁻¹ WK)
        let trace = lu
            .solve(&wk)
            .ok_or_else(|| Error::Singular("kernel GCV system".into()))?
            .trace();
        traces.push(trace);
        scores.push(score(w, z, &fitted, trace, n));
    }
    Ok((scores, traces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_log_spaced() {
        let g = lambda_grid(2.0, 25, 1e-4, 1e4);
        assert_eq!(g.len(), 25);
        assert!((g[0] - 2e-4).abs() < 1e-16);
        assert!((g[24] - 2e4).abs() < 1e-8);
        assert!((g[12] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn trace_at_zero_and_infinity() {
        let n = 40;
        let pd = PseudoData::new(
            DVector::from_element(n, 1.0),
            DVector::from_fn(n, |i, _| (i % 2) as f64),
            DMatrix::from_fn(n, 1, |i, _| i as f64),
        )
        .unwrap();
        let design = DMatrix::from_fn(n, 3, |i, j| (i as f64 / n as f64).powi(j as i32));
        let eta = DVector::zeros(n);
        let eye = DMatrix::identity(3, 3);
        let sel = select_lambda_gcv(&pd, Smoother::Penalized { design: &design, penalty: &eye }, &eta, &[0.0, 1e12]).unwrap();
        assert!((sel.traces[0] - 3.0).abs() < 1e-8);
        assert!(sel.traces[1] < 1e-8);
        let pen = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let sel2 = select_lambda_gcv(&pd, Smoother::Penalized { design: &design, penalty: &pen }, &eta, &[0.0, 1e12]).unwrap();
        assert!((sel2.traces[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn kernel_and_feature_smoothers_agree() {
        let n = 12;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.3);
        let spec = crate::basis::KernelSpec::new(crate::basis::KernelFamily::SquaredExponential, 1.0).unwrap();
        let feats = crate::basis::KernelFeatures::exact(spec, x.clone(), 1e-14).unwrap();
        let gram = &feats.features * feats.features.transpose();
        let pd = PseudoData::new(
            DVector::from_fn(n, |i, _| 0.5 + (i % 3) as f64),
            DVector::from_fn(n, |i, _| ((i * 7) % 5) as f64 / 4.0),
            x,
        )
        .unwrap();
        let eta = DVector::from_fn(n, |i, _| (i as f64).sin());
        let grid = [0.01, 0.1, 1.0];
        let k = select_lambda_gcv(&pd, Smoother::Kernel { gram: &gram }, &eta, &grid).unwrap();
        let eye = DMatrix::identity(feats.rank(), feats.rank());
        let f = select_lambda_gcv(&pd, Smoother::Penalized { design: &feats.features, penalty: &eye }, &eta, &grid).unwrap();
        for i in 0..3 {
            assert!((k.traces[i] - f.traces[i]).abs() < 1e-6);
            assert!((k.scores[i] - f.scores[i]).abs() < 1e-6 * k.scores[i].abs().max(1.0));
        }
    }
}
