//! Sample covariance construction and the covariance operator used by the
//! solver, either as an explicit `p x p` matrix or implicitly through a
//! centered `n x p` data matrix.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{shape_err, Result, SpcaError};

const SYMMETRY_RTOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const CENTERING_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
enum Kind {
    Explicit(DMatrix<f64>),
    Implicit { x: DMatrix<f64>, n: usize },
}

/// Covariance `S` exposed through the products `V^T S V` and `S V`.
#[derive(Debug, Clone)]
pub struct CovarianceOperator {
    kind: Kind,
    p: usize,
}

impl CovarianceOperator {
    /// Wraps a symmetric positive semidefinite matrix.
    pub fn explicit(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(SpcaError::Shape(format!(
                "covariance must be square, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let p = sigma.nrows();
        if p == 0 {
            return Err(SpcaError::Domain("empty covariance matrix".into()));
        }
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(SpcaError::Domain(
                "covariance has non-finite entries".into(),
            ));
        }
        let scale = sigma.amax().max(f64::MIN_POSITIVE);
        for i in 0..p {
            for j in (i + 1)..p {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(SpcaError::Domain(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let min_eig = eig.eigenvalues.min();
        if min_eig < -PSD_TOL * scale.max(1.0) {
            return Err(SpcaError::Domain(format!(
                "covariance is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self {
            kind: Kind::Explicit(sym),
            p,
        })
    }

    /// Wraps a column-centered data matrix; `S = X^T X / (n - 1)` is never formed.
    pub fn implicit(x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(SpcaError::InsufficientSamples(n));
        }
        if p == 0 {
            return Err(SpcaError::Domain("data matrix has no columns".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SpcaError::Domain(
                "data matrix has non-finite entries".into(),
            ));
        }
        let scale = x.amax().max(1.0);
        for (j, col) in x.column_iter().enumerate() {
            let mean = col.sum() / n as f64;
            if mean.abs() > CENTERING_TOL * scale {
                return Err(SpcaError::Domain(format!(
                    "column {j} is not centered (mean {mean:e})"
                )));
            }
        }
        Ok(Self {
            kind: Kind::Implicit { x, n },
            p,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_implicit(&self) -> bool {
        matches!(self.kind, Kind::Implicit { .. })
    }

    /// Sample count for the implicit form.
    pub fn samples(&self) -> Option<usize> {
        match &self.kind {
            Kind::Explicit(_) => None,
            Kind::Implicit { n, .. } => Some(*n),
        }
    }

    /// Dense `p x p` covariance. Materializes `X^T X / (n - 1)` in implicit mode.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.kind {
            Kind::Explicit(s) => s.clone(),
            Kind::Implicit { x, n } => x.tr_mul(x) / (*n as f64 - 1.0),
        }
    }
}

/// Subtracts the column means.
pub fn center_columns(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(SpcaError::InsufficientSamples(n));
    }
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    Ok(out)
}

/// Explicit covariance `X^T X / (n - 1)` of a centered data matrix.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<CovarianceOperator> {
    let n = x.nrows();
    if n < 2 {
        return Err(SpcaError::InsufficientSamples(n));
    }
    let s = x.tr_mul(x) / (n as f64 - 1.0);
    CovarianceOperator::explicit(s)
}

/// Returns `(V^T S V, S V)`.
pub fn apply_quadratic(
    c: &CovarianceOperator,
    v: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if v.nrows() != c.p {
        return Err(shape_err("loadings", (c.p, v.ncols()), v.shape()));
    }
    match &c.kind {
        Kind::Explicit(s) => {
            let w = s * v;
            let g = v.tr_mul(&w);
            let g = (&g + g.transpose()) * 0.5;
            Ok((g, w))
        }
        Kind::Implicit { x, n } => {
            let denom = *n as f64 - 1.0;
            let y = x * v;
            let g = y.tr_mul(&y) / denom;
            let w = x.tr_mul(&y) / denom;
            Ok((g, w))
        }
    }
}

/// `Tr(S)`.
pub fn total_variance(c: &CovarianceOperator) -> f64 {
    match &c.kind {
        Kind::Explicit(s) => s.trace(),
        Kind::Implicit { x, n } => x.norm_squared() / (*n as f64 - 1.0),
    }
}

/// Flips each column so that its largest-magnitude entry (first one on ties)
/// is nonnegative.
pub fn normalize_column_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if best_abs > 0.0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// The `r` leading eigenvectors of `S` (as columns, sign-normalized) and
/// their eigenvalues in descending order.
pub fn top_eigenvectors(c: &CovarianceOperator, r: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if r == 0 || r > c.p {
        return Err(SpcaError::Domain(format!(
            "need 1 <= r <= p = {}, got r = {r}",
            c.p
        )));
    }
    let (mut v, vals) = match &c.kind {
        Kind::Explicit(s) => {
            let eig = SymmetricEigen::new(s.clone());
            let order = descending_order(eig.eigenvalues.as_slice());
            let mut v = DMatrix::zeros(c.p, r);
            let mut vals = Vec::with_capacity(r);
            for (k, &idx) in order.iter().take(r).enumerate() {
                v.set_column(k, &eig.eigenvectors.column(idx));
                vals.push(eig.eigenvalues[idx]);
            }
            (v, vals)
        }
        Kind::Implicit { x, n } => {
            let svd = SVD::new(x.clone(), false, true);
            let v_t = svd
                .v_t
                .ok_or_else(|| SpcaError::Domain("SVD did not return right vectors".into()))?;
            let order = descending_order(svd.singular_values.as_slice());
            let denom = *n as f64 - 1.0;
            let mut v = DMatrix::zeros(c.p, r);
            let mut vals = Vec::with_capacity(r);
            let have = order.len().min(r);
            for (k, &idx) in order.iter().take(have).enumerate() {
                v.set_column(k, &v_t.row(idx).transpose());
                vals.push(svd.singular_values[idx].powi(2) / denom);
            }
            if have < r {
                complete_orthonormal(&mut v, have);
                vals.resize(r, 0.0);
            }
            (v, vals)
        }
    };
    normalize_column_signs(&mut v);
    Ok((v, vals))
}

fn descending_order(vals: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Fills columns `filled..` of `v` with unit vectors orthogonal to the
/// earlier columns, drawn from the standard basis by Gram-Schmidt.
fn complete_orthonormal(v: &mut DMatrix<f64>, filled: usize) {
    let p = v.nrows();
    let mut k = filled;
    for e in 0..p {
        if k == v.ncols() {
            break;
        }
        let mut cand = DVector::<f64>::zeros(p);
        cand[e] = 1.0;
        for _ in 0..2 {
            for j in 0..k {
                let proj = v.column(j).dot(&cand);
                cand.axpy(-proj, &v.column(j), 1.0);
            }
        }
        let nrm = cand.norm();
        if nrm > 1e-8 {
            v.set_column(k, &(cand / nrm));
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_orthonormal(p: usize, r: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0));
        a.qr().q()
    }

    #[test]
    fn center_examples() {
        assert_eq!(
            center_columns(&dmatrix![1.0; 3.0]).unwrap(),
            dmatrix![-1.0; 1.0]
        );
        let c = dmatrix![-1.0, 2.0; 1.0, -2.0];
        assert_eq!(center_columns(&c).unwrap(), c);
        let x = dmatrix![1.0, 2.0; 1.0, 4.0; 1.0, 6.0];
        assert_eq!(
            center_columns(&x).unwrap(),
            dmatrix![0.0, -2.0; 0.0, 0.0; 0.0, 2.0]
        );
        assert!(matches!(
            center_columns(&dmatrix![1.0, 2.0]),
            Err(SpcaError::InsufficientSamples(1))
        ));
    }

    #[test]
    fn sample_covariance_examples() {
        let c = sample_covariance(&dmatrix![1.0; -1.0]).unwrap();
        assert_eq!(c.to_dense(), dmatrix![2.0]);
        let c = sample_covariance(&dmatrix![1.0, 0.0; -1.0, 0.0]).unwrap();
        assert_eq!(c.to_dense(), dmatrix![2.0, 0.0; 0.0, 0.0]);
    }

    #[test]
    fn sample_covariance_matches_double_loop() {
        let x = center_columns(&random_matrix(50, 5, 7)).unwrap();
        let s = sample_covariance(&x).unwrap().to_dense();
        for j in 0..5 {
            for k in 0..5 {
                let mut acc = 0.0;
                for i in 0..50 {
                    acc += x[(i, j)] * x[(i, k)];
                }
                assert_relative_eq!(s[(j, k)], acc / 49.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn explicit_rejects_bad_input() {
        assert!(CovarianceOperator::explicit(dmatrix![1.0, 0.5; 0.4, 1.0]).is_err());
        assert!(CovarianceOperator::explicit(dmatrix![1.0, 2.0; 2.0, 1.0]).is_err());
        assert!(CovarianceOperator::explicit(DMatrix::zeros(2, 3)).is_err());
        assert!(CovarianceOperator::implicit(dmatrix![1.0; 2.0]).is_err());
    }

    #[test]
    fn apply_quadratic_examples() {
        let c = CovarianceOperator::explicit(DMatrix::identity(4, 4)).unwrap();
        let (g, w) = apply_quadratic(&c, &DMatrix::zeros(4, 2)).unwrap();
        assert_eq!(g, DMatrix::zeros(2, 2));
        assert_eq!(w, DMatrix::zeros(4, 2));

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let v = random_orthonormal(4, 2, &mut rng);
        let (g, w) = apply_quadratic(&c, &v).unwrap();
        assert_relative_eq!(g, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(w, v, epsilon = 1e-15);

        assert!(apply_quadratic(&c, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn implicit_agrees_with_explicit() {
        let x = center_columns(&random_matrix(30, 8, 11)).unwrap();
        let ex = sample_covariance(&x).unwrap();
        let im = CovarianceOperator::implicit(x).unwrap();
        let v = random_matrix(8, 3, 12);
        let (ge, we) = apply_quadratic(&ex, &v).unwrap();
        let (gi, wi) = apply_quadratic(&im, &v).unwrap();
        assert_relative_eq!(ge, gi, max_relative = 1e-10, epsilon = 1e-14);
        assert_relative_eq!(we, wi, max_relative = 1e-10, epsilon = 1e-14);
        assert_relative_eq!(
            total_variance(&ex),
            total_variance(&im),
            max_relative = 1e-12
        );
    }

    #[test]
    fn implicit_handles_wide_data() {
        let x = center_columns(&random_matrix(20, 10_000, 5)).unwrap();
        let c = CovarianceOperator::implicit(x).unwrap();
        let v = random_matrix(10_000, 2, 6);
        let (g, w) = apply_quadratic(&c, &v).unwrap();
        assert_eq!(g.shape(), (2, 2));
        assert_eq!(w.shape(), (10_000, 2));
        assert!((g[(0, 1)] - g[(1, 0)]).abs() == 0.0);
    }

    #[test]
    fn top_eigenvectors_diagonal() {
        let c = CovarianceOperator::explicit(DMatrix::from_diagonal(&DVector::from_vec(vec![
            3.0, 2.0, 1.0,
        ])))
        .unwrap();
        let (v, vals) = top_eigenvectors(&c, 2).unwrap();
        assert_relative_eq!(vals[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(v, dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0], epsilon = 1e-12);
        assert!(matches!(top_eigenvectors(&c, 4), Err(SpcaError::Domain(_))));
    }

    #[test]
    fn top_eigenvectors_degenerate_identity() {
        let c = CovarianceOperator::explicit(DMatrix::identity(5, 5)).unwrap();
        let (v, vals) = top_eigenvectors(&c, 1).unwrap();
        assert_relative_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(v.column(0).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn top_eigenvectors_postconditions() {
        let a = random_matrix(9, 9, 21);
        let s = a.tr_mul(&a);
        let c = CovarianceOperator::explicit(s.clone()).unwrap();
        let (v, vals) = top_eigenvectors(&c, 4).unwrap();
        let gram = v.tr_mul(&v);
        assert_relative_eq!(gram, DMatrix::identity(4, 4), epsilon = 1e-10);
        for (k, val) in vals.iter().enumerate() {
            let resid = &s * v.column(k) - v.column(k) * *val;
            assert!(resid.amax() < 1e-8);
            let col = v.column(k);
            let imax = col.iamax();
            assert!(col[imax] >= 0.0);
        }
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn implicit_eigenvectors_match_explicit() {
        let x = center_columns(&random_matrix(12, 6, 31)).unwrap();
        let ex = sample_covariance(&x).unwrap();
        let im = CovarianceOperator::implicit(x).unwrap();
        let (ve, le) = top_eigenvectors(&ex, 3).unwrap();
        let (vi, li) = top_eigenvectors(&im, 3).unwrap();
        for k in 0..3 {
            assert_relative_eq!(le[k], li[k], max_relative = 1e-10);
        }
        assert_relative_eq!(ve, vi, epsilon = 1e-8);
    }

    #[test]
    fn implicit_completion_beyond_rank() {
        // 4 centered samples in 6 dimensions have rank at most 3.
        let x = center_columns(&random_matrix(4, 6, 41)).unwrap();
        let c = CovarianceOperator::implicit(x).unwrap();
        let (v, vals) = top_eigenvectors(&c, 6).unwrap();
        assert_relative_eq!(v.tr_mul(&v), DMatrix::identity(6, 6), epsilon = 1e-10);
        assert!(vals[3..].iter().all(|l| l.abs() < 1e-10));
    }

    #[test]
    fn total_variance_diagonal() {
        let c = CovarianceOperator::explicit(DMatrix::from_diagonal(&DVector::from_vec(vec![
            3.0, 2.0, 1.0,
        ])))
        .unwrap();
        assert_eq!(total_variance(&c), 6.0);
    }

    #[test]
    fn rayleigh_optimality_against_random_frames() {
        let a = random_matrix(8, 8, 51);
        let s = a.tr_mul(&a);
        let c = CovarianceOperator::explicit(s).unwrap();
        let (v, _) = top_eigenvectors(&c, 3).unwrap();
        let best = apply_quadratic(&c, &v).unwrap().0.trace();
        let mut rng = ChaCha20Rng::seed_from_u64(52);
        for _ in 0..100 {
            let u = random_orthonormal(8, 3, &mut rng);
            let t = apply_quadratic(&c, &u).unwrap().0.trace();
            assert!(best >= t - 1e-8);
        }
    }

    #[test]
    fn sign_convention_ties_use_first_index() {
        let mut v = dmatrix![-0.5, 0.5; 0.5, -0.5];
        normalize_column_signs(&mut v);
        assert_eq!(v, dmatrix![0.5, 0.5; -0.5, -0.5]);
    }

    proptest! {
        #[test]
        fn sample_covariance_is_symmetric_psd(seed in 0u64..500, n in 2usize..12, p in 1usize..8) {
            let x = center_columns(&random_matrix(n, p, seed)).unwrap();
            let s = sample_covariance(&x).unwrap().to_dense();
            prop_assert_eq!(&s, &s.transpose());
            let eig = SymmetricEigen::new(s.clone());
            let scale = s.norm().max(1e-300);
            prop_assert!(eig.eigenvalues.min() >= -1e-10 * scale);
        }

        #[test]
        fn centering_zeroes_means(seed in 0u64..500, n in 2usize..15, p in 1usize..6) {
            let x = center_columns(&random_matrix(n, p, seed)).unwrap();
            for col in x.column_iter() {
                prop_assert!((col.sum() / n as f64).abs() <= 1e-12);
            }
        }

        #[test]
        fn implicit_explicit_agreement(seed in 0u64..500, n in 2usize..20, p in 1usize..10, r in 1usize..4) {
            let x = center_columns(&random_matrix(n, p, seed)).unwrap();
            let ex = sample_covariance(&x).unwrap();
            let im = CovarianceOperator::implicit(x).unwrap();
            let v = random_matrix(p, r, seed + 1000);
            let (ge, we) = apply_quadratic(&ex, &v).unwrap();
            let (gi, wi) = apply_quadratic(&im, &v).unwrap();
            let gs = ge.amax().max(1e-300);
            let ws = we.amax().max(1e-300);
            prop_assert!((ge - gi).amax() <= 1e-10 * gs);
            prop_assert!((we - wi).amax() <= 1e-10 * ws);
        }
    }
}
