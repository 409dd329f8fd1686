// SPDX-License-Identifier: Apache-2.0

//! Dense complex matrices of arbitrary (small) shape.
//!
//! Two-qubit operators use the fixed-size [`Operator`] alias for speed in the
//! integrator; [`ComplexMatrix`] covers everything else (the 8×8 and 3×3 moment
//! systems, basis transforms on user-supplied matrices) and checks dimensions on
//! every binary operation.

use nalgebra::{DMatrix, DVector, Matrix4, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// A 4×4 operator on the two-qubit space.
pub type Operator = Matrix4<Complex64>;

/// Tolerance used when a routine requires Hermitian input.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    inner: DMatrix<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            inner: DMatrix::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: DMatrix::identity(n, n),
        }
    }

    /// Builds a matrix from entries in row-major order.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: (rows, cols),
                found: (entries.len(), 1),
            });
        }
        Ok(Self {
            inner: DMatrix::from_row_slice(rows, cols, entries),
        })
    }

    pub fn from_real_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        let c: Vec<Complex64> = entries.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::from_row_major(rows, cols, &c)
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.inner[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.inner[(row, col)] = value;
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<Complex64> {
        self.inner.transpose().iter().copied().collect()
    }

    pub fn as_nalgebra(&self) -> &DMatrix<Complex64> {
        &self.inner
    }

    pub fn into_nalgebra(self) -> DMatrix<Complex64> {
        self.inner
    }

    fn require_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    fn require_square(&self) -> Result<usize> {
        let (r, c) = self.shape();
        if r != c {
            return Err(Error::DimensionMismatch {
                expected: (r, r),
                found: (r, c),
            });
        }
        Ok(r)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols() != other.rows() {
            return Err(Error::DimensionMismatch {
                expected: (self.cols(), other.cols()),
                found: other.shape(),
            });
        }
        Ok(Self {
            inner: &self.inner * &other.inner,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other)?;
        Ok(Self {
            inner: &self.inner + &other.inner,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other)?;
        Ok(Self {
            inner: &self.inner - &other.inner,
        })
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            inner: &self.inner * factor,
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            inner: self.inner.adjoint(),
        }
    }

    pub fn trace(&self) -> Result<Complex64> {
        self.require_square()?;
        Ok(self.inner.trace())
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: (self.cols(), 1),
                found: (v.len(), 1),
            });
        }
        let out = &self.inner * DVector::from_column_slice(v);
        Ok(out.iter().copied().collect())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.require_same_shape(other)?;
        Ok(self
            .inner
            .iter()
            .zip(other.inner.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// max |m - m†|.
    pub fn hermitian_deviation(&self) -> Result<f64> {
        self.require_square()?;
        self.max_abs_diff(&self.adjoint())
    }

    /// Solves `self · x = rhs` by LU decomposition with partial pivoting.
    pub fn solve(&self, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.require_square()?;
        if rhs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: (n, 1),
                found: (rhs.len(), 1),
            });
        }
        let lu = self.inner.clone().lu();
        let b = DVector::from_column_slice(rhs);
        match lu.solve(&b) {
            Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                let cond = self.condition_estimate();
                if cond > 1e14 {
                    return Err(Error::SingularSystem { condition: cond });
                }
                Ok(x.iter().copied().collect())
            }
            _ => Err(Error::SingularSystem {
                condition: f64::INFINITY,
            }),
        }
    }

    /// 1-norm condition number `‖A‖₁‖A⁻¹‖₁`; infinite when not invertible.
    pub fn condition_estimate(&self) -> f64 {
        let norm1 = |m: &DMatrix<Complex64>| {
            m.column_iter()
                .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        match self.inner.clone().try_inverse() {
            Some(inv) => norm1(&self.inner) * norm1(&inv),
            None => f64::INFINITY,
        }
    }

    /// Matrix exponential.
    pub fn exp(&self) -> Result<Self> {
        self.require_square()?;
        Ok(Self {
            inner: self.inner.clone().exp(),
        })
    }
}

impl From<&Operator> for ComplexMatrix {
    fn from(op: &Operator) -> Self {
        Self {
            inner: DMatrix::from_iterator(4, 4, op.iter().copied()),
        }
    }
}

impl From<Operator> for ComplexMatrix {
    fn from(op: Operator) -> Self {
        Self::from(&op)
    }
}

impl TryFrom<&ComplexMatrix> for Operator {
    type Error = Error;

    fn try_from(m: &ComplexMatrix) -> Result<Self> {
        if m.shape() != (4, 4) {
            return Err(Error::DimensionMismatch {
                expected: (4, 4),
                found: m.shape(),
            });
        }
        Ok(Operator::from_iterator(m.inner.iter().copied()))
    }
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn hermitian_eigen_min(m: &ComplexMatrix) -> Result<f64> {
    let deviation = m.hermitian_deviation()?;
    if deviation > HERMITIAN_TOLERANCE {
        return Err(Error::NotHermitian { deviation });
    }
    let sym = (&m.inner + m.inner.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Smallest eigenvalue of a 4×4 operator, assumed Hermitian (the anti-Hermitian
/// part is discarded).
pub fn operator_eigen_min(op: &Operator) -> f64 {
    let sym = (op + op.adjoint()) * Complex64::new(0.5, 0.0);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
