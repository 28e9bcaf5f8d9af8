use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::dicke::{CollectiveSpinBasis, Operator};
use crate::linalg::{self, LinalgError, ONE, ZERO};

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("matrix is {rows}×{cols}, sector needs {dim}×{dim}")]
    Shape { rows: usize, cols: usize, dim: usize },
    #[error("not Hermitian: max |ρ − ρ†| = {0:.3e}")]
    NotHermitian(f64),
    #[error("trace is {0}, expected 1")]
    BadTrace(C64),
    #[error("not positive semidefinite: minimum eigenvalue {0:.3e}")]
    NotPositive(f64),
    #[error("operator and state live on different spin sectors")]
    BasisMismatch,
    #[error("expectation value has imaginary residue {0:.3e}; input is not Hermitian")]
    ImaginaryExpectation(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A Hermitian, unit-trace, positive semidefinite operator on a Dicke sector.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    basis: CollectiveSpinBasis,
    matrix: Mat<C64>,
}

impl DensityMatrix {
    /// Validates all three invariants.
    pub fn new(basis: CollectiveSpinBasis, matrix: Mat<C64>) -> Result<Self, StateError> {
        let rho = Self::new_unchecked_positivity(basis, matrix)?;
        let min = rho.min_eigenvalue()?;
        if min < -POSITIVITY_TOL {
            return Err(StateError::NotPositive(min));
        }
        Ok(rho)
    }

    /// Checks shape, hermiticity and trace only; the O(d³) positivity check
    /// is left to the caller.
    pub(crate) fn new_unchecked_positivity(basis: CollectiveSpinBasis, matrix: Mat<C64>) -> Result<Self, StateError> {
        let d = basis.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(StateError::Shape {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
                dim: d,
            });
        }
        let herm = linalg::hermiticity_defect(matrix.as_ref());
        if herm > HERMITICITY_TOL {
            return Err(StateError::NotHermitian(herm));
        }
        let tr = linalg::trace(matrix.as_ref());
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(StateError::BadTrace(tr));
        }
        Ok(Self { basis, matrix })
    }

    /// `|S, m_i⟩⟨S, m_i|` for basis index `i`.
    pub fn dicke(basis: CollectiveSpinBasis, index: usize) -> Self {
        let d = basis.dim();
        assert!(index < d);
        let mut m = Mat::zeros(d, d);
        m[(index, index)] = ONE;
        Self { basis, matrix: m }
    }

    /// `|S, −S⟩⟨S, −S|`, all spins down.
    pub fn ground(basis: CollectiveSpinBasis) -> Self {
        Self::dicke(basis, basis.dim() - 1)
    }

    pub fn maximally_mixed(basis: CollectiveSpinBasis) -> Self {
        let d = basis.dim();
        let p = C64::new(1.0 / d as f64, 0.0);
        Self {
            basis,
            matrix: Mat::from_fn(d, d, |i, j| if i == j { p } else { ZERO }),
        }
    }

    /// `|ψ⟩⟨ψ|` for a normalized column vector.
    pub fn pure(basis: CollectiveSpinBasis, psi: MatRef<'_, C64>) -> Result<Self, StateError> {
        let m = psi * psi.adjoint();
        Self::new(basis, m)
    }

    pub fn basis(&self) -> CollectiveSpinBasis {
        self.basis
    }

    pub fn matrix(&self) -> MatRef<'_, C64> {
        self.matrix.as_ref()
    }

    pub fn into_matrix(self) -> Mat<C64> {
        self.matrix
    }

    pub fn min_eigenvalue(&self) -> Result<f64, StateError> {
        let vals = linalg::hermitian_eigenvalues(self.matrix.as_ref())?;
        Ok(vals.first().copied().unwrap_or(0.0))
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        linalg::frobenius((&self.matrix - &other.matrix).as_ref())
    }
}

/// `Tr(ρ A)` for Hermitian `A`.
pub fn expectation(rho: &DensityMatrix, op: &Operator) -> Result<f64, StateError> {
    if rho.basis() != op.basis() {
        return Err(StateError::BasisMismatch);
    }
    let r = rho.matrix();
    let a = op.matrix();
    let d = rho.basis().dim();
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            acc += r[(i, j)] * a[(j, i)];
        }
    }
    if acc.im.abs() > 1e-10 * acc.re.abs().max(1.0) {
        return Err(StateError::ImaginaryExpectation(acc.im));
    }
    Ok(acc.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dicke::{spin_operator, SpinAxis};

    #[test]
    fn validation_catches_each_invariant() {
        let b = CollectiveSpinBasis::new(1).unwrap();
        let bad_trace = Mat::from_fn(2, 2, |i, j| if i == j { ONE } else { ZERO });
        assert!(matches!(DensityMatrix::new(b, bad_trace), Err(StateError::BadTrace(_))));
        let mut not_herm = Mat::from_fn(2, 2, |i, j| if i == j { C64::new(0.5, 0.0) } else { ZERO });
        not_herm[(0, 1)] = C64::new(0.1, 0.0);
        assert!(matches!(DensityMatrix::new(b, not_herm), Err(StateError::NotHermitian(_))));
        let neg = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => C64::new(1.5, 0.0),
            (1, 1) => C64::new(-0.5, 0.0),
            _ => ZERO,
        });
        assert!(matches!(DensityMatrix::new(b, neg), Err(StateError::NotPositive(_))));
        assert!(matches!(
            DensityMatrix::new(b, Mat::zeros(3, 3)),
            Err(StateError::Shape { .. })
        ));
    }

    #[test]
    fn expectation_values() {
        let b = CollectiveSpinBasis::new(6).unwrap();
        let sz = spin_operator(b, SpinAxis::Z);
        assert_eq!(expectation(&DensityMatrix::ground(b), &sz).unwrap(), -3.0);
        assert!(expectation(&DensityMatrix::maximally_mixed(b), &sz).unwrap().abs() < 1e-15);
        let sp = spin_operator(b, SpinAxis::Plus);
        let mut coh = Mat::<C64>::zeros(7, 7);
        coh[(0, 0)] = C64::new(0.5, 0.0);
        coh[(1, 1)] = C64::new(0.5, 0.0);
        coh[(0, 1)] = C64::new(0.0, 0.5);
        coh[(1, 0)] = C64::new(0.0, -0.5);
        let rho = DensityMatrix::new(b, coh).unwrap();
        assert!(matches!(expectation(&rho, &sp), Err(StateError::ImaginaryExpectation(_))));
        let other = spin_operator(CollectiveSpinBasis::new(5).unwrap(), SpinAxis::Z);
        assert!(matches!(expectation(&rho, &other), Err(StateError::BasisMismatch)));
    }
}
