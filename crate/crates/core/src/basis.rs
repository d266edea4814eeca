//! Design matrices, roughness penalties and kernel Gram matrices for the
//! non-parametric transition representations.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Diagonal jitter added to every Gram matrix before it is factorized.
pub const GRAM_JITTER: f64 = 1e-8;

/// Univariate B-spline basis on a fixed set of breakpoints.
///
/// The augmented knot vector repeats each boundary `degree + 1` times, so the
/// basis has `interior + degree + 1` functions. Outside the boundary
/// breakpoints every basis function is continued linearly from its value and
/// slope at the nearest boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    breakpoints: Vec<f64>,
    degree: usize,
    knots: Vec<f64>,
    penalty: DMatrix<f64>,
}

impl SplineBasis {
    pub fn new(breakpoints: Vec<f64>, degree: usize) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 breakpoints (augmented knot vector of length >= degree + 2), got {}",
                breakpoints.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("non-finite breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("breakpoints must be strictly increasing".into()));
        }
        let lo = breakpoints[0];
        let hi = *breakpoints.last().unwrap();
        let mut knots = vec![lo; degree + 1];
        knots.extend_from_slice(&breakpoints[1..breakpoints.len() - 1]);
        knots.extend(std::iter::repeat(hi).take(degree + 1));
        let n_basis = knots.len() - degree - 1;
        let penalty = second_diff_penalty(n_basis)?;
        Ok(Self {
            breakpoints,
            degree,
            knots,
            penalty,
        })
    }

    /// Places breakpoints at equally spaced sample quantiles of `values`
    /// (including the minimum and maximum) so that the basis has `n_basis`
    /// functions.
    pub fn from_quantiles(values: &[f64], n_basis: usize, degree: usize) -> Result<Self> {
        if n_basis < degree + 1 {
            return Err(Error::Config(format!(
                "a degree-{degree} basis needs at least {} functions, asked for {n_basis}",
                degree + 1
            )));
        }
        let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if sorted.len() < 2 {
            return Err(Error::Config("need at least two finite covariate values".into()));
        }
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n_breaks = n_basis - degree + 1;
        let lo = sorted[0];
        let hi = *sorted.last().unwrap();
        if hi <= lo {
            return Err(Error::Config("covariate has zero range".into()));
        }
        let mut breaks: Vec<f64> = (0..n_breaks)
            .map(|i| crate::linalg::quantile(&sorted, i as f64 / (n_breaks - 1) as f64))
            .collect();
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            // heavily tied data: fall back to an even grid
            breaks = (0..n_breaks)
                .map(|i| lo + (hi - lo) * i as f64 / (n_breaks - 1) as f64)
                .collect();
        }
        Self::new(breaks, degree)
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Second-difference penalty `D₂ᵀD₂` on the coefficients.
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn lower(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn upper(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let m = self.n_basis();
        if x >= self.knots[m] {
            return m - 1;
        }
        // largest i in [p, m-1] with knots[i] <= x
        let mut lo = p;
        let mut hi = m;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Non-zero basis values of the given degree on knot span `i`
    /// (de Boor's triangular scheme). Entry `r` belongs to function `i - deg + r`.
    fn local_values(&self, i: usize, x: f64, deg: usize) -> Vec<f64> {
        let u = &self.knots;
        let mut n = vec![0.0; deg + 1];
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        n[0] = 1.0;
        for j in 1..=deg {
            left[j] = x - u[i + 1 - j];
            right[j] = u[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Writes all `n_basis` values at `x` into `out`.
    pub fn evaluate_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_basis());
        out.iter_mut().for_each(|v| *v = 0.0);
        let (anchor, offset) = if x < self.lower() {
            (self.lower(), x - self.lower())
        } else if x > self.upper() {
            (self.upper(), x - self.upper())
        } else {
            (x, 0.0)
        };
        let p = self.degree;
        let i = self.span(anchor);
        let vals = self.local_values(i, anchor, p);
        for (r, v) in vals.iter().enumerate() {
            out[i - p + r] = *v;
        }
        if offset != 0.0 && p > 0 {
            let lower = self.local_values(i, anchor, p - 1);
            // lower[r] is N_{i-p+1+r, p-1}
            let u = &self.knots;
            let n_lower = |k: usize| -> f64 {
                if k + p >= i + 1 && k <= i {
                    lower[k + p - 1 - i]
                } else {
                    0.0
                }
            };
            for k in (i - p)..=i {
                let mut d = 0.0;
                let den1 = u[k + p] - u[k];
                if den1 > 0.0 {
                    d += n_lower(k) / den1;
                }
                let den2 = u[k + p + 1] - u[k + 1];
                if den2 > 0.0 && k + 1 <= i {
                    d -= n_lower(k + 1) / den2;
                }
                out[k] += p as f64 * d * offset;
            }
        }
    }

    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        self.evaluate_into(x, &mut out);
        out
    }
}

/// Design matrix of a univariate basis: row `i` holds the basis at `x[i]`.
pub fn bspline_design(basis: &SplineBasis, x: &[f64]) -> DMatrix<f64> {
    let m = basis.n_basis();
    let mut design = DMatrix::zeros(x.len(), m);
    let mut row = vec![0.0; m];
    for (i, &xi) in x.iter().enumerate() {
        basis.evaluate_into(xi, &mut row);
        for j in 0..m {
            design[(i, j)] = row[j];
        }
    }
    design
}

/// `(M-2) x M` second-difference penalty `D₂ᵀD₂`.
pub fn second_diff_penalty(m: usize) -> Result<DMatrix<f64>> {
    if m < 3 {
        return Err(Error::Config(format!(
            "second-difference penalty needs at least 3 coefficients, got {m}"
        )));
    }
    let mut d = DMatrix::zeros(m - 2, m);
    for r in 0..m - 2 {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    Ok(d.tr_mul(&d))
}

/// Tensor product of univariate B-spline bases, one per covariate.
///
/// Coefficients are ordered with the first margin varying slowest. The
/// penalty sums the second-difference penalty of each margin along its own
/// axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSplineBasis {
    margins: Vec<SplineBasis>,
}

impl TensorSplineBasis {
    pub fn new(margins: Vec<SplineBasis>) -> Result<Self> {
        if margins.is_empty() {
            return Err(Error::Config("tensor basis needs at least one margin".into()));
        }
        Ok(Self { margins })
    }

    /// Quantile-knotted cubic margins on the columns of `x`, with the
    /// per-margin size chosen so that the product is close to `total`.
    pub fn from_covariates(x: &DMatrix<f64>, total: usize, degree: usize) -> Result<Self> {
        let p = x.ncols();
        if p == 0 {
            return Err(Error::Config("no covariates".into()));
        }
        let per = (total as f64).powf(1.0 / p as f64).round() as usize;
        let per = per.max(degree + 1).max(3);
        let margins = (0..p)
            .map(|c| {
                let col: Vec<f64> = x.column(c).iter().copied().collect();
                SplineBasis::from_quantiles(&col, per, degree)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(margins)
    }

    pub fn margins(&self) -> &[SplineBasis] {
        &self.margins
    }

    pub fn n_basis(&self) -> usize {
        self.margins.iter().map(SplineBasis::n_basis).product()
    }

    pub fn dim(&self) -> usize {
        self.margins.len()
    }

    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        out[0] = 1.0;
        let mut len = 1;
        for (margin, &xv) in self.margins.iter().zip(x) {
            let vals = margin.evaluate(xv);
            let m = vals.len();
            // expand in place, back to front
            for a in (0..len).rev() {
                let base = out[a];
                for b in (0..m).rev() {
                    out[a * m + b] = base * vals[b];
                }
            }
            len *= m;
        }
    }

    pub fn design(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Domain(format!(
                "tensor basis over {} covariates applied to {} columns",
                self.dim(),
                x.ncols()
            )));
        }
        let m = self.n_basis();
        let mut design = DMatrix::zeros(x.nrows(), m);
        let mut row = vec![0.0; m];
        let mut xrow = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            for c in 0..x.ncols() {
                xrow[c] = x[(i, c)];
            }
            self.evaluate_into(&xrow, &mut row);
            for j in 0..m {
                design[(i, j)] = row[j];
            }
        }
        Ok(design)
    }

    pub fn penalty(&self) -> DMatrix<f64> {
        let sizes: Vec<usize> = self.margins.iter().map(SplineBasis::n_basis).collect();
        let total: usize = sizes.iter().product();
        let mut out = DMatrix::zeros(total, total);
        for (axis, margin) in self.margins.iter().enumerate() {
            let inner: usize = sizes[axis + 1..].iter().product();
            let outer: usize = sizes[..axis].iter().product();
            let m = sizes[axis];
            let pm = margin.penalty();
            for o in 0..outer {
                for a in 0..m {
                    for b in 0..m {
                        let v = pm[(a, b)];
                        if v == 0.0 {
                            continue;
                        }
                        for i in 0..inner {
                            let r = (o * m + a) * inner + i;
                            let c = (o * m + b) * inner + i;
                            out[(r, c)] += v;
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    SquaredExponential,
    Matern32,
    Matern52,
    /// Dot-product kernel `xᵀx'`; the bandwidth is ignored.
    Linear,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "squared-exponential",
            KernelFamily::Matern32 => "matern-3/2",
            KernelFamily::Matern52 => "matern-5/2",
            KernelFamily::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "squared-exponential" | "se" | "rbf" => Ok(KernelFamily::SquaredExponential),
            "matern-3/2" | "matern32" => Ok(KernelFamily::Matern32),
            "matern-5/2" | "matern52" => Ok(KernelFamily::Matern52),
            "linear" => Ok(KernelFamily::Linear),
            other => Err(Error::Config(format!(
                "unknown kernel family '{other}' (expected squared-exponential, matern-3/2, matern-5/2 or linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Config(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self { family, bandwidth })
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.family == KernelFamily::Linear {
            return a.iter().zip(b).map(|(u, v)| u * v).sum();
        }
        let r2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        let l = self.bandwidth;
        match self.family {
            KernelFamily::SquaredExponential => (-0.5 * r2 / (l * l)).exp(),
            KernelFamily::Matern32 => {
                let s = 3f64.sqrt() * r2.sqrt() / l;
                (1.0 + s) * (-s).exp()
            }
            KernelFamily::Matern52 => {
                let s = 5f64.sqrt() * r2.sqrt() / l;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
            KernelFamily::Linear => unreachable!(),
        }
    }
}

pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

/// `K[i, j] = κ(x1_i, x2_j)`.
pub fn kernel_gram(spec: &KernelSpec, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    KernelSpec::new(spec.family, spec.bandwidth)?;
    if x1.ncols() != x2.ncols() {
        return Err(Error::Domain(format!(
            "kernel inputs have {} and {} columns",
            x1.ncols(),
            x2.ncols()
        )));
    }
    let r1 = rows_of(x1);
    let r2 = rows_of(x2);
    Ok(DMatrix::from_fn(r1.len(), r2.len(), |i, j| spec.eval(&r1[i], &r2[j])))
}

/// Median Euclidean distance over all distinct pairs of rows.
pub fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let rows = rows_of(x);
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let r2: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(r2.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = crate::linalg::quantile(&d, 0.5);
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Finite-dimensional feature map for a kernel expansion over a set of anchors.
///
/// `features = κ(x_train, anchors) · projection` and a coefficient vector `β`
/// in feature space corresponds to the representer weights
/// `α = projection · β` on the anchors. With the exact map the penalty
/// `αᵀKα` equals `βᵀβ`.
#[derive(Debug, Clone)]
pub struct KernelFeatures {
    pub spec: KernelSpec,
    pub anchors: DMatrix<f64>,
    pub projection: DMatrix<f64>,
    pub features: DMatrix<f64>,
}

fn eigen_projection(gram: DMatrix<f64>, rel_tol: f64, keep_all: bool) -> DMatrix<f64> {
    let n = gram.nrows();
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = rel_tol * max;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > cutoff && eig.eigenvalues[i] > 0.0)
        .collect();
    let ncols = if keep_all { n } else { kept.len() };
    let mut proj = DMatrix::zeros(n, ncols);
    for (c, &i) in kept.iter().enumerate() {
        let s = 1.0 / eig.eigenvalues[i].sqrt();
        for r in 0..n {
            proj[(r, c)] = eig.eigenvectors[(r, i)] * s;
        }
    }
    proj
}

impl KernelFeatures {
    /// Exact map from the eigendecomposition of the jittered Gram matrix of
    /// `anchors`, dropping eigenvalues below `rel_tol` times the largest.
    pub fn exact(spec: KernelSpec, anchors: DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        let mut gram = kernel_gram(&spec, &anchors, &anchors)?;
        for i in 0..gram.nrows() {
            gram[(i, i)] += GRAM_JITTER;
        }
        let projection = eigen_projection(gram.clone(), rel_tol, false);
        for i in 0..gram.nrows() {
            gram[(i, i)] -= GRAM_JITTER;
        }
        let features = &gram * &projection;
        Ok(Self {
            spec,
            anchors,
            projection,
            features,
        })
    }

    pub fn rank(&self) -> usize {
        self.projection.ncols()
    }

    /// Feature rows for new covariate points.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(kernel_gram(&self.spec, x, &self.anchors)? * &self.projection)
    }

    /// Representer weights on the anchors for feature coefficients `beta`.
    pub fn representer_weights(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.projection * beta
    }
}

/// Rank-`m` Nyström factor `Z` (rows of `x` by `m`) with `ZZᵀ ≈ K(x, x)`.
///
/// Landmarks are the first `m` entries of a seeded permutation of the rows,
/// so factors for increasing `m` under one seed use nested landmark sets.
pub fn nystrom_factor(spec: &KernelSpec, x: &DMatrix<f64>, m: usize, seed: u64) -> Result<KernelFeatures> {
    let n = x.nrows();
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "Nystrom rank must lie in 1..={n}, got {m}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut landmarks: Vec<usize> = order[..m].to_vec();
    landmarks.sort_unstable();
    let anchors = x.select_rows(landmarks.iter());
    let mut kmm = kernel_gram(spec, &anchors, &anchors)?;
    for i in 0..m {
        kmm[(i, i)] += GRAM_JITTER;
    }
    let projection = eigen_projection(kmm, 1e-12, true);
    let knm = kernel_gram(spec, x, &anchors)?;
    let features = knm * &projection;
    Ok(KernelFeatures {
        spec: *spec,
        anchors,
        projection,
        features,
    })
}
