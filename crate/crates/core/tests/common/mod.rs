//! Reference implementations and check helpers shared by the integration
//! tests.
//!
//! The oracles do not call into the algorithms under test: densities use
//! dense inverses and determinants, posteriors come from summing over every
//! state path, and logistic fits use a plain undamped Newton solver.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spms_core::basis::{kernel_gram, nystrom_factor};
use spms_core::model::{design_for, penalty_for, Representation};
use spms_core::transition::{
    irls_penalized, lambda_grid, select_lambda_gcv, IrlsOptions, PenalizedObjective, PseudoData, Smoother,
};
use spms_core::{
    KernelFamily, KernelSpec, Link, ModelParameters, RegimeEmission, SplineBasis, TensorSplineBasis,
    TimeSeriesDataset, TransitionFunction, TransitionKind,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

pub fn random_emission(rng: &mut ChaCha8Rng, d: usize) -> RegimeEmission {
    let mu = DVector::from_fn(d, |_, _| normal(rng));
    let a = DMatrix::from_fn(d, d, |_, _| 0.3 * normal(rng));
    let b = normal_matrix(rng, d, d);
    let sigma = &b * b.transpose() + DMatrix::identity(d, d) * 0.5;
    RegimeEmission::new(mu, a, sigma).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, d: usize, p: usize) -> ModelParameters {
    let e0 = random_emission(rng, d);
    let e1 = random_emission(rng, d);
    let p0: f64 = rng.gen_range(0.05..0.95);
    let f = |rng: &mut ChaCha8Rng| {
        TransitionFunction::linear(Link::Logistic, DVector::from_fn(p + 1, |_, _| 1.5 * normal(rng))).unwrap()
    };
    let f0 = f(rng);
    let f1 = f(rng);
    ModelParameters::new([e0, e1], [p0, 1.0 - p0], [f0, f1]).unwrap()
}

pub fn random_dataset(rng: &mut ChaCha8Rng, t: usize, d: usize, p: usize) -> TimeSeriesDataset {
    TimeSeriesDataset::new(normal_matrix(rng, t, d), normal_matrix(rng, t, p)).unwrap()
}

/// `log N(y; mean, sigma)` via a dense inverse and determinant.
pub fn dense_log_normal(y: &DVector<f64>, mean: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let d = y.len() as f64;
    let r = y - mean;
    let inv = sigma.clone().try_inverse().unwrap();
    let quad = (r.transpose() * inv * &r)[(0, 0)];
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + sigma.determinant().ln() + quad)
}

fn emission_logdens(data: &TimeSeriesDataset, e: &RegimeEmission, t: usize) -> f64 {
    let prev = if t == 0 { data.y_row(0) } else { data.y_row(t - 1) };
    dense_log_normal(&data.y_row(t), &(&e.mu + &e.a * prev), &e.sigma)
}

fn logistic_linear(f: &TransitionFunction, x: &[f64]) -> f64 {
    let g = f.coefficients();
    let eta = g[0] + x.iter().enumerate().map(|(i, v)| g[i + 1] * v).sum::<f64>();
    1.0 / (1.0 + (-eta).exp())
}

pub struct Enumerated {
    pub loglik: f64,
    pub z: Vec<[f64; 2]>,
    pub xi: Vec<[[f64; 2]; 2]>,
}

/// Exact posteriors by summing over all `2^T` state paths; the model must
/// have linear-logit transitions.
pub fn enumerate_paths(data: &TimeSeriesDataset, params: &ModelParameters) -> Enumerated {
    let t_len = data.len();
    let n_paths = 1usize << t_len;
    let mut logp = Vec::with_capacity(n_paths);
    for path in 0..n_paths {
        let s = |t: usize| (path >> t) & 1;
        let mut lp = params.pi[s(0)].ln();
        for t in 0..t_len {
            lp += emission_logdens(data, &params.emissions[s(t)], t);
            if t > 0 {
                let q = logistic_linear(&params.transitions[s(t - 1)], &data.x_row(t - 1));
                lp += if s(t) == 1 { q.ln() } else { (1.0 - q).ln() };
            }
        }
        logp.push(lp);
    }
    let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logp.iter().map(|l| (l - m).exp()).sum();
    let loglik = m + total.ln();
    let mut z = vec![[0.0; 2]; t_len];
    let mut xi = vec![[[0.0; 2]; 2]; t_len - 1];
    for (path, lp) in logp.iter().enumerate() {
        let w = (lp - loglik).exp();
        let s = |t: usize| (path >> t) & 1;
        for t in 0..t_len {
            z[t][s(t)] += w;
            if t > 0 {
                xi[t - 1][s(t - 1)][s(t)] += w;
            }
        }
    }
    Enumerated { loglik, z, xi }
}

/// Random fractional pseudo-data with some zero-weight rows.
pub fn random_pseudo_data(rng: &mut ChaCha8Rng, n: usize, p: usize) -> PseudoData {
    let weights = DVector::from_fn(n, |_, _| if rng.gen::<f64>() < 0.1 { 0.0 } else { rng.gen::<f64>() });
    let responses = DVector::from_fn(n, |_, _| rng.gen::<f64>());
    PseudoData::new(weights, responses, normal_matrix(rng, n, p)).unwrap()
}

/// Pseudo-data whose responses follow a known log-odds function, with
/// unit weights and hard 0/1 responses.
pub fn pseudo_data_from<F: Fn(&[f64]) -> f64>(rng: &mut ChaCha8Rng, x: DMatrix<f64>, f: F) -> PseudoData {
    let n = x.nrows();
    let responses = DVector::from_fn(n, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let q = 1.0 / (1.0 + (-f(&row)).exp());
        if rng.gen::<f64>() < q {
            1.0
        } else {
            0.0
        }
    });
    PseudoData::new(DVector::from_element(n, 1.0), responses, x).unwrap()
}

/// Undamped Newton for the weighted fractional logistic likelihood with a
/// ridge `lambda/2 ‖c‖²` on the coefficients listed in `penalized`.
pub fn newton_logistic(pd: &PseudoData, design: &DMatrix<f64>, lambda: f64, penalized: &[usize]) -> DVector<f64> {
    let m = design.ncols();
    let mut c = DVector::zeros(m);
    for _ in 0..200 {
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        for i in 0..design.nrows() {
            let eta = (design.row(i) * &c)[(0, 0)];
            let q = 1.0 / (1.0 + (-eta).exp());
            let n = pd.weights[i];
            for a in 0..m {
                grad[a] += n * (pd.responses[i] - q) * design[(i, a)];
                for b in 0..m {
                    hess[(a, b)] += n * q * (1.0 - q) * design[(i, a)] * design[(i, b)];
                }
            }
        }
        for &k in penalized {
            grad[k] -= lambda * c[k];
            hess[(k, k)] += lambda;
        }
        let step = hess.lu().solve(&grad).unwrap();
        c += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    c
}

/// Central finite-difference gradient.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, at: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(at.len(), |i, _| {
        let mut up = at.clone();
        let mut down = at.clone();
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

fn objective_for(kind: TransitionKind, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64, Link) {
    let p = x.ncols();
    match kind {
        TransitionKind::LinearLogit | TransitionKind::LinearProbit => {
            let link = kind.link();
            let repr = Representation::Linear { link, n_covariates: p };
            (design_for(&repr, x).unwrap(), penalty_for(&repr).unwrap(), 0.0, link)
        }
        TransitionKind::Spline => {
            let basis = TensorSplineBasis::from_covariates(x, 16, 3).unwrap();
            (basis.design(x).unwrap(), basis.penalty(), 0.7, Link::Logistic)
        }
        TransitionKind::Rkhs => {
            let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.3).unwrap();
            let gram = kernel_gram(&spec, x, x).unwrap();
            (gram.clone(), gram, 0.3, Link::Logistic)
        }
        TransitionKind::AdditiveSpline => {
            let bases = (0..p)
                .map(|c| {
                    let col: Vec<f64> = x.column(c).iter().copied().collect();
                    SplineBasis::from_quantiles(&col, 8, 3).unwrap()
                })
                .collect();
            let repr = Representation::Additive(bases);
            (design_for(&repr, x).unwrap(), penalty_for(&repr).unwrap(), 0.5, Link::Logistic)
        }
    }
}

/// Largest relative discrepancy between the analytic gradient of the
/// penalized objective and central differences, over `points` random
/// coefficient vectors.
pub fn gradient_check_error(kind: TransitionKind, seed: u64, points: usize) -> f64 {
    let mut r = rng(seed);
    let pd = random_pseudo_data(&mut r, 40, 2);
    let (design, penalty, lambda, link) = objective_for(kind, &pd.covariates);
    let obj = PenalizedObjective {
        design: &design,
        penalty: &penalty,
        lambda,
        link,
        offset: None,
    };
    let mut worst = 0.0f64;
    for _ in 0..points {
        let c = DVector::from_fn(design.ncols(), |_, _| 0.5 * normal(&mut r));
        let analytic = obj.gradient(&pd, &c);
        let numeric = fd_gradient(|v| obj.value(&pd, v), &c, 1e-5);
        let err = (&analytic - &numeric).amax() / numeric.amax().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Largest difference in fitted linear predictors between the library's
/// unpenalized logistic IRLS on `[1, x]` and the plain Newton oracle.
pub fn newton_oracle_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let pd = random_pseudo_data(&mut r, 80, 1);
    let repr = Representation::Linear {
        link: Link::Logistic,
        n_covariates: 1,
    };
    let design = design_for(&repr, &pd.covariates).unwrap();
    let zero = DMatrix::zeros(2, 2);
    let fit = irls_penalized(&pd, &design, &zero, 0.0, None, &DVector::zeros(2), &IrlsOptions::default()).unwrap();
    let oracle = newton_logistic(&pd, &design, 0.0, &[]);
    (&design * fit.coefficients - &design * oracle).amax()
}

/// Hat-matrix traces over an increasing `λ` grid for a tensor spline
/// smoother, and the trace at `λ = 0` minus the basis size.
pub fn gcv_traces(seed: u64) -> (Vec<f64>, f64) {
    let mut r = rng(seed);
    let pd = random_pseudo_data(&mut r, 150, 2);
    let basis = TensorSplineBasis::from_covariates(&pd.covariates, 16, 3).unwrap();
    let design = basis.design(&pd.covariates).unwrap();
    let penalty = basis.penalty();
    let eta = DVector::from_fn(pd.len(), |_, _| 0.5 * normal(&mut r));
    let smoother = Smoother::Penalized {
        design: &design,
        penalty: &penalty,
    };
    let grid = lambda_grid(1.0, 25, 1e-4, 1e4);
    let sel = select_lambda_gcv(&pd, smoother, &eta, &grid).unwrap();
    let zero = select_lambda_gcv(&pd, smoother, &eta, &[0.0]).unwrap();
    (sel.traces, zero.traces[0] - basis.n_basis() as f64)
}

/// Relative Frobenius errors of the Nyström Gram at `m = T/10, T/2, T`.
pub fn nystrom_errors(seed: u64) -> [f64; 3] {
    let mut r = rng(seed);
    let t = 60;
    let x = normal_matrix(&mut r, t, 2);
    let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0).unwrap();
    let k = kernel_gram(&spec, &x, &x).unwrap();
    let err = |m: usize| {
        let z = nystrom_factor(&spec, &x, m, seed).unwrap().features;
        (&z * z.transpose() - &k).norm() / k.norm()
    };
    [err(t / 10), err(t / 2), err(t)]
}
