//! Quality measures for a set of loading vectors.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::covariance::{apply_quadratic, total_variance, CovarianceOperator};
use crate::error::{Result, SpcaError};
use crate::ZERO_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsBundle {
    pub adj_var: f64,
    pub cpav_percent: f64,
    pub sparsity: usize,
    /// NaN when some column is zero.
    pub non_orthogonality_deg: f64,
    /// NaN when some component has zero variance.
    pub max_correlation: f64,
}

impl MetricsBundle {
    /// Evaluates every metric. Degenerate columns make the two pairwise
    /// measures NaN instead of failing the whole bundle.
    pub fn compute(c: &CovarianceOperator, v: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            adj_var: adjusted_variance(c, v)?,
            cpav_percent: cpav(c, v)?,
            sparsity: sparsity_count(v, ZERO_TOL),
            non_orthogonality_deg: non_orthogonality(v).unwrap_or(f64::NAN),
            max_correlation: match max_correlation(c, v) {
                Ok(x) => x,
                Err(SpcaError::Domain(_)) => f64::NAN,
                Err(e) => return Err(e),
            },
        })
    }
}

/// `Tr(G) - sqrt(sum_{i != j} G_ij^2)` with `G = V^T S V`.
pub fn adjusted_variance(c: &CovarianceOperator, v: &DMatrix<f64>) -> Result<f64> {
    let (g, _) = apply_quadratic(c, v)?;
    Ok(adjusted_variance_from_gram(&g))
}

pub fn adjusted_variance_from_gram(g: &DMatrix<f64>) -> f64 {
    let r = g.nrows();
    let mut off = 0.0;
    for i in 0..r {
        for j in 0..r {
            if i != j {
                off += g[(i, j)] * g[(i, j)];
            }
        }
    }
    g.trace() - off.sqrt()
}

/// Adjusted variance as a percentage of the total variance.
pub fn cpav(c: &CovarianceOperator, v: &DMatrix<f64>) -> Result<f64> {
    let total = total_variance(c);
    if !(total > 0.0) {
        return Err(SpcaError::Domain("covariance has zero trace".into()));
    }
    Ok(100.0 * adjusted_variance(c, v)? / total)
}

pub fn sparsity_count(v: &DMatrix<f64>, zero_tol: f64) -> usize {
    v.iter().filter(|x| x.abs() <= zero_tol).count()
}

/// Largest deviation from 90 degrees over all pairs of columns.
pub fn non_orthogonality(v: &DMatrix<f64>) -> Result<f64> {
    let norms: Vec<f64> = v.column_iter().map(|c| c.norm()).collect();
    if let Some(k) = norms.iter().position(|&n| n == 0.0) {
        return Err(SpcaError::Domain(format!("loading column {k} is zero")));
    }
    let r = v.ncols();
    let mut worst: f64 = 0.0;
    for i in 0..r {
        for j in (i + 1)..r {
            let cos = (v.column(i).dot(&v.column(j)).abs() / (norms[i] * norms[j])).clamp(0.0, 1.0);
            worst = worst.max((90.0 - cos.acos().to_degrees()).abs());
        }
    }
    Ok(worst)
}

/// Largest `|G_ij| / sqrt(G_ii G_jj)` over `i != j`.
pub fn max_correlation(c: &CovarianceOperator, v: &DMatrix<f64>) -> Result<f64> {
    let (g, _) = apply_quadratic(c, v)?;
    let r = g.nrows();
    if let Some(k) = (0..r).find(|&k| !(g[(k, k)] > 0.0)) {
        return Err(SpcaError::Domain(format!(
            "component {k} has zero variance"
        )));
    }
    let mut worst: f64 = 0.0;
    for i in 0..r {
        for j in 0..r {
            if i != j {
                worst = worst.max(g[(i, j)].abs() / (g[(i, i)] * g[(j, j)]).sqrt());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::top_eigenvectors;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_cov(p: usize, seed: u64) -> CovarianceOperator {
        let a = random_matrix(p, p, seed);
        CovarianceOperator::explicit(a.tr_mul(&a)).unwrap()
    }

    #[test]
    fn adjusted_variance_examples() {
        assert_eq!(
            adjusted_variance_from_gram(&dmatrix![2.0, 0.0; 0.0, 3.0]),
            5.0
        );
        assert_relative_eq!(
            adjusted_variance_from_gram(&dmatrix![2.0, 1.0; 1.0, 3.0]),
            5.0 - 2f64.sqrt()
        );
        let c = random_cov(4, 1);
        assert_eq!(adjusted_variance(&c, &DMatrix::zeros(4, 2)).unwrap(), 0.0);
    }

    #[test]
    fn cpav_full_spectrum_is_100() {
        let c = random_cov(5, 2);
        let (v, _) = top_eigenvectors(&c, 5).unwrap();
        assert_relative_eq!(cpav(&c, &v).unwrap(), 100.0, epsilon = 1e-9);
        let z = CovarianceOperator::explicit(DMatrix::zeros(2, 2)).unwrap();
        assert!(cpav(&z, &DMatrix::identity(2, 1)).is_err());
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity_count(&DMatrix::zeros(13, 6), ZERO_TOL), 78);
        assert_eq!(sparsity_count(&random_matrix(13, 6, 3), ZERO_TOL), 0);
        assert_eq!(
            sparsity_count(&dmatrix![1e-6, -2e-6; 0.0, 1.0], ZERO_TOL),
            2
        );
    }

    #[test]
    fn non_orthogonality_examples() {
        assert_eq!(non_orthogonality(&DMatrix::identity(3, 2)).unwrap(), 0.0);
        let t = 60f64.to_radians();
        let v = dmatrix![1.0, t.cos(); 0.0, t.sin()];
        assert_relative_eq!(non_orthogonality(&v).unwrap(), 30.0, epsilon = 1e-10);
        assert!(non_orthogonality(&dmatrix![1.0, 0.0; 0.0, 0.0]).is_err());
    }

    #[test]
    fn correlation_examples() {
        let c = CovarianceOperator::explicit(DMatrix::from_diagonal(&DVector::from_vec(vec![
            3.0, 2.0, 1.0,
        ])))
        .unwrap();
        assert_eq!(max_correlation(&c, &DMatrix::identity(3, 2)).unwrap(), 0.0);
        let dup = dmatrix![0.6, 0.6; 0.8, 0.8; 0.0, 0.0];
        assert_relative_eq!(max_correlation(&c, &dup).unwrap(), 1.0, epsilon = 1e-12);
        let dead = dmatrix![1.0, 0.0; 0.0, 0.0; 0.0, 0.0];
        assert!(max_correlation(&c, &dead).is_err());
    }

    #[test]
    fn single_component_has_no_pairs() {
        let c = random_cov(4, 4);
        let v = random_matrix(4, 1, 5);
        assert_eq!(non_orthogonality(&v).unwrap(), 0.0);
        assert_eq!(max_correlation(&c, &v).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn adjusted_variance_bounded_by_trace(seed in 0u64..1000, r in 1usize..5) {
            let c = random_cov(6, seed);
            let v = random_matrix(6, r, seed + 7);
            let (g, _) = apply_quadratic(&c, &v).unwrap();
            prop_assert!(adjusted_variance(&c, &v).unwrap() <= g.trace() + 1e-12);
        }

        #[test]
        fn ratios_invariant_to_column_scaling(seed in 0u64..1000, s in proptest::collection::vec(0.1f64..10.0, 3)) {
            let c = random_cov(5, seed);
            let v = random_matrix(5, 3, seed + 3);
            let mut w = v.clone();
            for (k, f) in s.iter().enumerate() {
                w.column_mut(k).scale_mut(*f);
            }
            prop_assert!((max_correlation(&c, &v).unwrap() - max_correlation(&c, &w).unwrap()).abs() < 1e-10);
            prop_assert!((non_orthogonality(&v).unwrap() - non_orthogonality(&w).unwrap()).abs() < 1e-8);
        }

        #[test]
        fn sparsity_invariant_to_permutation_and_signs(seed in 0u64..1000) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let v = DMatrix::from_fn(6, 4, |_, _| if rng.random_bool(0.4) { 0.0 } else { rng.random_range(-1.0..1.0) });
            let base = sparsity_count(&v, ZERO_TOL);
            let mut w = v.clone();
            w.swap_columns(0, 3);
            w.column_mut(1).neg_mut();
            prop_assert_eq!(sparsity_count(&w, ZERO_TOL), base);
        }

        #[test]
        fn bundle_ranges(seed in 0u64..300) {
            let c = random_cov(6, seed);
            let (v, _) = top_eigenvectors(&c, 3).unwrap();
            let b = MetricsBundle::compute(&c, &v).unwrap();
            prop_assert!(b.cpav_percent >= -1e-9 && b.cpav_percent <= 100.0 + 1e-9);
            prop_assert!(b.non_orthogonality_deg >= 0.0 && b.non_orthogonality_deg <= 90.0);
            prop_assert!(b.sparsity <= 18);
        }
    }
}
