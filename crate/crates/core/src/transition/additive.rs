use nalgebra::{DMatrix, DVector};

use super::irls::{irls_penalized, FitStatus, IrlsOptions};
use super::objective::PenalizedObjective;
use super::PseudoData;
use crate::basis::{bspline_design, SplineBasis};
use crate::error::{Error, Result};
use crate::model::{design_for, penalty_for, Link, Representation};

const BACKFIT_TOLERANCE: f64 = 1e-6;
const MAX_SWEEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveFit {
    /// `c` followed by each component's block, the layout of
    /// [`Representation::Additive`].
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub components: Vec<DVector<f64>>,
    pub status: FitStatus,
    pub sweeps: usize,
    /// Penalized objective with the per-component `λ`.
    pub objective: f64,
}

/// Backfitting for `f(x) = c + Σ_ℓ g_ℓ(x_ℓ)`: each sweep refits one
/// component by penalized IRLS with the others held in the offset, then
/// centers it over the pseudo-data rows and moves the mean into `c`.
///
/// `init` uses the combined coefficient layout; zeros when `None`.
pub fn backfit_additive(
    pd: &PseudoData,
    bases: &[SplineBasis],
    lambdas: &[f64],
    init: Option<&DVector<f64>>,
) -> Result<AdditiveFit> {
    let p = bases.len();
    if p == 0 || lambdas.len() != p {
        return Err(Error::Config(format!(
            "{} bases and {} lambdas; need one lambda per basis and at least one basis",
            p,
            lambdas.len()
        )));
    }
    if pd.covariates.ncols() != p {
        return Err(Error::Domain(format!(
            "{p} additive components for {} covariates",
            pd.covariates.ncols()
        )));
    }
    let n = pd.len();
    let sizes: Vec<usize> = bases.iter().map(SplineBasis::n_basis).collect();
    let total = 1 + sizes.iter().sum::<usize>();
    let mut coef = match init {
        Some(c) if c.len() == total => c.clone(),
        Some(c) => {
            return Err(Error::Domain(format!(
                "expected {total} initial coefficients, got {}",
                c.len()
            )))
        }
        None => DVector::zeros(total),
    };
    let designs: Vec<DMatrix<f64>> = bases
        .iter()
        .enumerate()
        .map(|(l, b)| {
            let col: Vec<f64> = pd.covariates.column(l).iter().copied().collect();
            bspline_design(b, &col)
        })
        .collect();
    let starts: Vec<usize> = sizes
        .iter()
        .scan(1, |acc, &m| {
            let s = *acc;
            *acc += m;
            Some(s)
        })
        .collect();
    let mut values: Vec<DVector<f64>> = (0..p)
        .map(|l| &designs[l] * coef.rows(starts[l], sizes[l]))
        .collect();
    let opts = IrlsOptions::default();
    let mut status = FitStatus::NotConverged;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut change = 0.0f64;
        for l in 0..p {
            let mut offset = DVector::from_element(n, coef[0]);
            for (k, v) in values.iter().enumerate() {
                if k != l {
                    offset += v;
                }
            }
            let block = coef.rows(starts[l], sizes[l]).into_owned();
            let fit = irls_penalized(
                pd,
                &designs[l],
                bases[l].penalty(),
                lambdas[l],
                Some(&offset),
                &block,
                &opts,
            )?;
            let mut b = fit.coefficients;
            let g = &designs[l] * &b;
            let mean = g.sum() / n as f64;
            // rows of the design sum to one, so a uniform shift moves g by a constant
            b.add_scalar_mut(-mean);
            coef[0] += mean;
            let g = g.add_scalar(-mean);
            change = change.max((&g - &values[l]).amax());
            coef.rows_mut(starts[l], sizes[l]).copy_from(&b);
            values[l] = g;
        }
        if change < BACKFIT_TOLERANCE {
            status = FitStatus::Converged;
            break;
        }
    }
    let repr = Representation::Additive(bases.to_vec());
    let design = design_for(&repr, &pd.covariates)?;
    let mut penalty = penalty_for(&repr)?;
    for l in 0..p {
        penalty
            .view_mut((starts[l], starts[l]), (sizes[l], sizes[l]))
            .scale_mut(lambdas[l]);
    }
    let objective = PenalizedObjective {
        design: &design,
        penalty: &penalty,
        lambda: 1.0,
        link: Link::Logistic,
        offset: None,
    }
    .value(pd, &coef);
    Ok(AdditiveFit {
        intercept: coef[0],
        components: (0..p).map(|l| coef.rows(starts[l], sizes[l]).into_owned()).collect(),
        coefficients: coef,
        status,
        sweeps,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_response_is_flat() {
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * (3 + j)) % 17) as f64 / 17.0);
        let pd = PseudoData::new(DVector::from_element(n, 1.0), DVector::from_element(n, 0.5), x.clone()).unwrap();
        let bases: Vec<SplineBasis> = (0..2)
            .map(|j| {
                let col: Vec<f64> = x.column(j).iter().copied().collect();
                SplineBasis::from_quantiles(&col, 6, 3).unwrap()
            })
            .collect();
        let fit = backfit_additive(&pd, &bases, &[1.0, 1.0], None).unwrap();
        assert!(fit.intercept.abs() < 1e-6);
        assert!(fit.coefficients.amax() < 1e-6);
        assert_eq!(fit.status, FitStatus::Converged);
    }

    #[test]
    fn components_are_centered() {
        let n = 80;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * (5 + 2 * j)) % 23) as f64 / 23.0 - 0.5);
        let pd = PseudoData::new(
            DVector::from_element(n, 1.0),
            DVector::from_fn(n, |i, _| if x[(i, 0)] + 0.3 * x[(i, 1)] > 0.1 { 0.9 } else { 0.2 }),
            x.clone(),
        )
        .unwrap();
        let bases: Vec<SplineBasis> = (0..2)
            .map(|j| {
                let col: Vec<f64> = x.column(j).iter().copied().collect();
                SplineBasis::from_quantiles(&col, 6, 3).unwrap()
            })
            .collect();
        let fit = backfit_additive(&pd, &bases, &[0.1, 0.1], None).unwrap();
        for (l, b) in bases.iter().enumerate() {
            let col: Vec<f64> = x.column(l).iter().copied().collect();
            let g = bspline_design(b, &col) * &fit.components[l];
            assert!(g.sum().abs() < 1e-8);
        }
    }
}
