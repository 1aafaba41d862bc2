//! Mode-coupling matrices and the random coupling model
//! `Λ_mn = a_m δ_mn − i η R_mn`.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::CMatrix;
use crate::rng::{standard_normal, uniform};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("coupling matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("coupling matrix has non-finite entries")]
    NonFinite,
    #[error("invalid random coupling configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Identity,
    Random,
    Nliw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix<T> {
    matrix: CMatrix<T>,
    provenance: Provenance,
}

impl<T: Real> CouplingMatrix<T> {
    pub fn new(matrix: CMatrix<T>, provenance: Provenance) -> Result<Self, CouplingError> {
        if !matrix.is_square() {
            return Err(CouplingError::NotSquare { rows: matrix.rows(), cols: matrix.cols() });
        }
        if !matrix.is_finite() {
            return Err(CouplingError::NonFinite);
        }
        Ok(Self { matrix, provenance })
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: CMatrix::identity(dim), provenance: Provenance::Identity }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.matrix
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn apply(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        self.matrix.matvec(v)
    }

    /// Upper-left `dim × dim` block, for frequencies with fewer modes.
    pub fn leading_block(&self, dim: usize) -> Self {
        assert!(dim <= self.dim(), "block larger than the matrix");
        Self { matrix: CMatrix::from_fn(dim, dim, |i, j| self.matrix[(i, j)]), provenance: self.provenance }
    }
}

/// Ranges of the random coupling model. `coupling_strength` is the `η` that
/// multiplies the Gaussian off-diagonal entries (not an internal-wave amplitude).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomCouplingConfig {
    pub diagonal_range: (f64, f64),
    pub coupling_strength_range: (f64, f64),
    /// Seed for standalone draws; dataset generation uses the per-sample
    /// stream of the dataset seed instead.
    #[serde(default)]
    pub seed: u64,
}

impl Default for RandomCouplingConfig {
    fn default() -> Self {
        Self { diagonal_range: (0.5, 1.5), coupling_strength_range: (0.0, 5.0), seed: 0 }
    }
}

impl RandomCouplingConfig {
    pub fn validate(&self) -> Result<(), CouplingError> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi;
        if !ok(self.diagonal_range) {
            return Err(CouplingError::InvalidConfig(format!("diagonal range {:?}", self.diagonal_range)));
        }
        if !ok(self.coupling_strength_range) {
            return Err(CouplingError::InvalidConfig(format!(
                "coupling strength range {:?}",
                self.coupling_strength_range
            )));
        }
        Ok(())
    }

    /// `a = 1`, `η = 0`: the model collapses to the identity.
    pub fn identity() -> Self {
        Self { diagonal_range: (1.0, 1.0), coupling_strength_range: (0.0, 0.0), seed: 0 }
    }
}

/// Draws one random coupling matrix of dimension `dim`.
///
/// Draw order: `a_1..a_M`, then `η`, then `R_mn` row-major skipping the
/// diagonal. One matrix serves every frequency of a sample.
pub fn sample_coupling<T: Real, R: Rng + ?Sized>(
    config: &RandomCouplingConfig,
    dim: usize,
    rng: &mut R,
) -> Result<CouplingMatrix<T>, CouplingError> {
    config.validate()?;
    let (a_lo, a_hi) = config.diagonal_range;
    let (e_lo, e_hi) = config.coupling_strength_range;
    let diagonal: Vec<f64> = (0..dim).map(|_| uniform(rng, a_lo, a_hi)).collect();
    let strength = uniform(rng, e_lo, e_hi);
    let mut matrix = CMatrix::zeros(dim, dim);
    for m in 0..dim {
        for n in 0..dim {
            matrix[(m, n)] = if m == n {
                Complex::new(T::lit(diagonal[m]), T::zero())
            } else {
                let r = standard_normal(rng);
                Complex::new(T::zero(), T::lit(-strength * r))
            };
        }
    }
    CouplingMatrix::new(matrix, Provenance::Random)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_stream;

    #[test]
    fn degenerate_config_is_identity() {
        let mut rng = sample_stream(3, 0);
        let m: CouplingMatrix<f64> = sample_coupling(&RandomCouplingConfig::identity(), 6, &mut rng).unwrap();
        assert_eq!(m.matrix(), &CMatrix::identity(6));
    }

    #[test]
    fn one_by_one() {
        let mut rng = sample_stream(3, 1);
        let m: CouplingMatrix<f64> = sample_coupling(&RandomCouplingConfig::default(), 1, &mut rng).unwrap();
        let a = m.matrix()[(0, 0)];
        assert_eq!(a.im, 0.0);
        assert!((0.5..1.5).contains(&a.re));
    }

    #[test]
    fn entry_structure() {
        let mut rng = sample_stream(11, 2);
        let m: CouplingMatrix<f64> = sample_coupling(&RandomCouplingConfig::default(), 5, &mut rng).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let z = m.matrix()[(i, j)];
                if i == j {
                    assert!(z.im == 0.0 && z.re > 0.0);
                } else {
                    assert_eq!(z.re, 0.0);
                }
            }
        }
    }

    #[test]
    fn same_stream_same_matrix() {
        let cfg = RandomCouplingConfig::default();
        let a: CouplingMatrix<f64> = sample_coupling(&cfg, 4, &mut sample_stream(9, 9)).unwrap();
        let b: CouplingMatrix<f64> = sample_coupling(&cfg, 4, &mut sample_stream(9, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_ranges() {
        let cfg = RandomCouplingConfig { diagonal_range: (1.5, 0.5), ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RandomCouplingConfig { coupling_strength_range: (-1.0, 0.5), ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(CouplingMatrix::<f64>::new(CMatrix::zeros(2, 3), Provenance::Nliw).is_err());
    }
}
