mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::{normal_matrix, rng};
use spms_core::basis::{kernel_gram, nystrom_factor, second_diff_penalty, KernelFeatures};
use spms_core::{KernelFamily, KernelSpec, SplineBasis};

const FAMILIES: [KernelFamily; 3] = [
    KernelFamily::SquaredExponential,
    KernelFamily::Matern32,
    KernelFamily::Matern52,
];

#[test]
fn gram_is_symmetric_psd_with_unit_diagonal() {
    let mut r = rng(1);
    let x = normal_matrix(&mut r, 50, 2);
    for family in FAMILIES {
        let spec = KernelSpec::new(family, 0.9).unwrap();
        let k = kernel_gram(&spec, &x, &x).unwrap();
        assert!((&k - k.transpose()).amax() < 1e-12);
        assert!(k.diagonal().iter().all(|v| (v - 1.0).abs() < 1e-15));
        let min = k.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-8, "{}: min eigenvalue {min}", family.name());
    }
}

#[test]
fn nystrom_error_shrinks_with_rank() {
    for seed in 0..5 {
        let [e10, e2, e1] = common::nystrom_errors(seed);
        assert!(e1 <= 1e-6, "seed {seed}: full-rank error {e1}");
        assert!(e2 <= e10 + 1e-12 && e1 <= e2 + 1e-12, "seed {seed}: {e10} {e2} {e1}");
    }
}

#[test]
fn nystrom_on_clustered_data() {
    let mut r = rng(9);
    let centers = [[-3.0, 0.0], [0.0, 3.0], [3.0, -1.0], [1.0, 1.0]];
    let t = 80;
    let noise = normal_matrix(&mut r, t, 2);
    let x = DMatrix::from_fn(t, 2, |i, c| centers[i % 4][c] + 0.2 * noise[(i, c)]);
    let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0).unwrap();
    let k = kernel_gram(&spec, &x, &x).unwrap();
    let err = |m: usize| {
        let z = nystrom_factor(&spec, &x, m, 4).unwrap().features;
        (&z * z.transpose() - &k).norm() / k.norm()
    };
    assert!(err(t / 2) < err(t / 10));
}

#[test]
fn nystrom_rank_bounds() {
    let mut r = rng(2);
    let x = normal_matrix(&mut r, 10, 2);
    let spec = KernelSpec::new(KernelFamily::Matern32, 1.0).unwrap();
    assert!(nystrom_factor(&spec, &x, 11, 0).is_err());
    assert!(nystrom_factor(&spec, &x, 0, 0).is_err());
}

#[test]
fn exact_features_reproduce_the_gram() {
    let mut r = rng(3);
    let x = normal_matrix(&mut r, 40, 2);
    let spec = KernelSpec::new(KernelFamily::Matern52, 1.5).unwrap();
    let f = KernelFeatures::exact(spec, x.clone(), 1e-12).unwrap();
    let k = kernel_gram(&spec, &x, &x).unwrap();
    let z = &f.features;
    assert!((z * z.transpose() - &k).amax() < 1e-6);
    // out-of-sample transform on the anchors gives the same rows
    assert!((f.transform(&x).unwrap() - z).amax() < 1e-12);
}

#[test]
fn penalty_hand_value() {
    let p = second_diff_penalty(4).unwrap();
    let w = nalgebra::DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
    assert!(((w.transpose() * &p * &w)[(0, 0)] - 5.0).abs() < 1e-14);
    assert!(second_diff_penalty(2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_sum_to_one_inside_the_range(x in 0.0f64..1.0, n in 4usize..20, degree in 0usize..4) {
        prop_assume!(n >= degree + 1);
        let grid: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let basis = SplineBasis::from_quantiles(&grid, n.max(3), degree).unwrap();
        let s: f64 = basis.evaluate(x).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn penalty_kills_linear_trends(m in 3usize..30, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let p = second_diff_penalty(m).unwrap();
        let w = nalgebra::DVector::from_fn(m, |i, _| a + b * i as f64);
        prop_assert!((w.transpose() * &p * &w)[(0, 0)].abs() < 1e-8);
    }
}
