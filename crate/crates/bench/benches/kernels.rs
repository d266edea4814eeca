use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use spms_bench::fixture;
use spms_core::basis::{kernel_gram, KernelFeatures};
use spms_core::transition::{irls_penalized, irls_spline, lambda_grid, select_lambda_gcv, IrlsOptions, Smoother};
use spms_core::{forward_backward, KernelFamily, KernelSpec, TensorSplineBasis};

fn forward_backward_bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    for t in [250, 1000, 4000] {
        let f = fixture(t);
        group.bench_with_input(BenchmarkId::from_parameter(t), &f, |b, f| {
            b.iter(|| forward_backward(black_box(&f.data), black_box(&f.params)).unwrap())
        });
    }
    group.finish();
}

fn irls_bench(c: &mut Criterion) {
    let f = fixture(1000);
    let x = &f.pseudo.covariates;
    let basis = TensorSplineBasis::from_covariates(x, 15, 3).unwrap();
    let start = DVector::zeros(basis.n_basis());
    c.bench_function("irls_spline/1000", |b| {
        b.iter(|| irls_spline(black_box(&f.pseudo), &basis, 1.0, &start).unwrap())
    });

    let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.5).unwrap();
    let features = KernelFeatures::exact(spec, x.clone(), 1e-8).unwrap();
    let design = features.features.clone();
    let penalty = nalgebra::DMatrix::identity(design.ncols(), design.ncols());
    let init = DVector::zeros(design.ncols());
    c.bench_function("irls_rkhs_features/1000", |b| {
        b.iter(|| {
            irls_penalized(black_box(&f.pseudo), &design, &penalty, 0.1, None, &init, &IrlsOptions::default()).unwrap()
        })
    });
}

fn gcv_bench(c: &mut Criterion) {
    let f = fixture(1000);
    let x = &f.pseudo.covariates;
    let basis = TensorSplineBasis::from_covariates(x, 15, 3).unwrap();
    let design = basis.design(x).unwrap();
    let penalty = basis.penalty();
    let eta = DVector::zeros(f.pseudo.len());
    let grid = lambda_grid(1.0, 25, 1e-4, 1e4);
    c.bench_function("gcv_spline/1000x25", |b| {
        let smoother = Smoother::Penalized {
            design: &design,
            penalty: &penalty,
        };
        b.iter(|| select_lambda_gcv(black_box(&f.pseudo), smoother, &eta, &grid).unwrap())
    });

    let small = fixture(300);
    let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.5).unwrap();
    let gram = kernel_gram(&spec, &small.pseudo.covariates, &small.pseudo.covariates).unwrap();
    let eta = DVector::zeros(small.pseudo.len());
    c.bench_function("gcv_kernel/300x25", |b| {
        b.iter(|| select_lambda_gcv(black_box(&small.pseudo), Smoother::Kernel { gram: &gram }, &eta, &grid).unwrap())
    });
}

criterion_group!(benches, forward_backward_bench, irls_bench, gcv_bench);
criterion_main!(benches);
