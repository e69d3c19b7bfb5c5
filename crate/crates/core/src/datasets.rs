//! Data sources: an analytic three-factor model, random centered data, and
//! the Jeffers pitprops correlation matrix.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::covariance::{center_columns, CovarianceOperator};
use crate::error::{Result, SpcaError};
use crate::io::parse_whitespace_matrix;

/// Name of the seeded generator behind every random draw in this crate.
pub const RNG_ALGORITHM: &str = "ChaCha20";

/// Ten observed variables driven by three hidden factors:
/// `V3 = coef.0 * V1 + coef.1 * V2 + e`, and each observed variable is its
/// group's factor plus unit-variance noise. Groups are variables 1-4 (V1),
/// 5-8 (V2) and 9-10 (V3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticFactorModel {
    pub var_v1: f64,
    pub var_v2: f64,
    pub coef: (f64, f64),
    pub noise_var: f64,
    pub group_sizes: (usize, usize, usize),
}

impl Default for SyntheticFactorModel {
    fn default() -> Self {
        Self {
            var_v1: 290.0,
            var_v2: 300.0,
            coef: (-0.3, 0.925),
            noise_var: 1.0,
            group_sizes: (4, 4, 2),
        }
    }
}

impl SyntheticFactorModel {
    pub fn var_v3(&self) -> f64 {
        self.coef.0.powi(2) * self.var_v1 + self.coef.1.powi(2) * self.var_v2 + self.noise_var
    }

    pub fn dim(&self) -> usize {
        self.group_sizes.0 + self.group_sizes.1 + self.group_sizes.2
    }

    fn group(&self, i: usize) -> usize {
        if i < self.group_sizes.0 {
            0
        } else if i < self.group_sizes.0 + self.group_sizes.1 {
            1
        } else {
            2
        }
    }

    /// Exact covariance of the observed variables.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let (a, b) = self.coef;
        // Covariance of the factors (V1, V2, V3).
        let f = [
            [self.var_v1, 0.0, a * self.var_v1],
            [0.0, self.var_v2, b * self.var_v2],
            [a * self.var_v1, b * self.var_v2, self.var_v3()],
        ];
        let p = self.dim();
        DMatrix::from_fn(p, p, |i, j| {
            let base = f[self.group(i)][self.group(j)];
            if i == j {
                base + self.noise_var
            } else {
                base
            }
        })
    }

    /// `n` draws of the observed variables (uncentered).
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        if n < 2 {
            return Err(SpcaError::InsufficientSamples(n));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d1 = normal(self.var_v1)?;
        let d2 = normal(self.var_v2)?;
        let dn = normal(self.noise_var)?;
        let p = self.dim();
        let mut x = DMatrix::zeros(n, p);
        for row in 0..n {
            let v1 = d1.sample(&mut rng);
            let v2 = d2.sample(&mut rng);
            let v3 = self.coef.0 * v1 + self.coef.1 * v2 + dn.sample(&mut rng);
            let factors = [v1, v2, v3];
            for col in 0..p {
                x[(row, col)] = factors[self.group(col)] + dn.sample(&mut rng);
            }
        }
        Ok(x)
    }
}

fn normal(var: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, var.sqrt()).map_err(|e| SpcaError::Domain(e.to_string()))
}

/// Exact covariance of the default factor model.
pub fn synthetic_covariance() -> CovarianceOperator {
    CovarianceOperator::explicit(SyntheticFactorModel::default().covariance_matrix())
        .expect("factor-model covariance is symmetric positive definite")
}

pub fn synthetic_sample(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    SyntheticFactorModel::default().sample(n, seed)
}

/// Standard normal `n x p` data, column-centered, as an implicit operator.
pub fn random_centered_matrix(n: usize, p: usize, seed: u64) -> Result<CovarianceOperator> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    CovarianceOperator::implicit(center_columns(&x)?)
}

pub const PITPROPS_VARIABLES: [&str; 13] = [
    "topdiam", "length", "moist", "testsg", "ovensg", "ringtop", "ringbut", "bowmax", "bowdist",
    "whorls", "clear", "knots", "diaknot",
];

const PITPROPS_DATA: &str = include_str!("../data/pitprops.txt");
const PITPROPS_TOL: f64 = 1e-6;

/// Validates a 13 x 13 correlation matrix given as whitespace-separated text.
pub fn parse_pitprops(text: &str) -> Result<CovarianceOperator> {
    let m = parse_whitespace_matrix(text)?;
    if m.shape() != (13, 13) {
        return Err(SpcaError::DataValidation(format!(
            "expected a 13x13 matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    for i in 0..13 {
        if (m[(i, i)] - 1.0).abs() > PITPROPS_TOL {
            return Err(SpcaError::DataValidation(format!(
                "diagonal entry {i} is {} instead of 1",
                m[(i, i)]
            )));
        }
        for j in (i + 1)..13 {
            if (m[(i, j)] - m[(j, i)]).abs() > PITPROPS_TOL {
                return Err(SpcaError::DataValidation(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let sym = (&m + m.transpose()) * 0.5;
    CovarianceOperator::explicit(sym).map_err(|e| SpcaError::DataValidation(e.to_string()))
}

pub fn load_pitprops(path: impl AsRef<Path>) -> Result<CovarianceOperator> {
    parse_pitprops(&std::fs::read_to_string(path)?)
}

/// The pitprops matrix shipped with the crate.
pub fn pitprops() -> CovarianceOperator {
    parse_pitprops(PITPROPS_DATA).expect("bundled pitprops matrix is valid")
}
