//! Collective spin operators on the symmetric (Dicke) sector of `N`
//! spin-1/2 particles.
//!
//! States are indexed by `i = 0..=N` with magnetic quantum number
//! `m = S - i`, so index 0 is `|S, S⟩` and the last index is `|S, -S⟩`.
//! Every operator in this module is stored as a dense `(N+1) × (N+1)`
//! complex matrix.

use std::fmt;
use std::str::FromStr;

use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, ONE, ZERO};

/// Orthonormality tolerance for numerically computed projection eigenbases.
pub const EIGENBASIS_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DickeError {
    #[error("a spin sector needs at least one spin (got n_spins = {0})")]
    NoSpins(i64),
    #[error("unknown spin axis `{0}` (expected x, y, z, plus or minus)")]
    UnknownAxis(String),
    #[error("measurement angles must be finite (theta = {theta}, phi = {phi})")]
    NonFiniteAngle { theta: f64, phi: f64 },
    #[error("projection eigenbasis failed: {0}")]
    Eigenbasis(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The `(N+1)`-dimensional symmetric sector with total spin `S = N/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollectiveSpinBasis {
    n_spins: usize,
}

impl CollectiveSpinBasis {
    pub fn new(n_spins: usize) -> Result<Self, DickeError> {
        if n_spins == 0 {
            return Err(DickeError::NoSpins(0));
        }
        Ok(Self { n_spins })
    }

    /// Accepts a signed count so that callers parsing user input get a
    /// proper error for negative values.
    pub fn from_signed(n_spins: i64) -> Result<Self, DickeError> {
        if n_spins <= 0 {
            return Err(DickeError::NoSpins(n_spins));
        }
        Self::new(n_spins as usize)
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    /// `S = N / 2`.
    pub fn total_spin(&self) -> f64 {
        self.n_spins as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.n_spins + 1
    }

    /// Magnetic quantum number of basis index `i`.
    pub fn m(&self, index: usize) -> f64 {
        debug_assert!(index < self.dim());
        self.total_spin() - index as f64
    }

    pub fn m_values(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.m(i)).collect()
    }

    /// Basis index of magnetic number `m`, if `m` is on the ladder.
    pub fn index_of(&self, m: f64) -> Option<usize> {
        let k = self.total_spin() - m;
        let idx = k.round();
        if (k - idx).abs() > 1e-9 || idx < 0.0 || idx as usize >= self.dim() {
            return None;
        }
        Some(idx as usize)
    }

    /// Ladder coefficient `√(S(S+1) − m(m+1))` of `Ŝ₊|S,m⟩`.
    fn raise_coefficient(&self, m: f64) -> f64 {
        let s = self.total_spin();
        (s * (s + 1.0) - m * (m + 1.0)).max(0.0).sqrt()
    }

    /// Unit vector `|S, m⟩` for basis index `i`.
    pub fn basis_vector(&self, index: usize) -> Mat<C64> {
        let mut v = Mat::zeros(self.dim(), 1);
        v[(index, 0)] = ONE;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinAxis {
    X,
    Y,
    Z,
    Plus,
    Minus,
}

impl FromStr for SpinAxis {
    type Err = DickeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Self::X),
            "y" => Ok(Self::Y),
            "z" => Ok(Self::Z),
            "plus" | "+" => Ok(Self::Plus),
            "minus" | "-" => Ok(Self::Minus),
            other => Err(DickeError::UnknownAxis(other.to_string())),
        }
    }
}

impl fmt::Display for SpinAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::X => "x",
            Self::Y => "y",
            Self::Z => "z",
            Self::Plus => "plus",
            Self::Minus => "minus",
        };
        f.write_str(s)
    }
}

/// A dense operator on a collective spin sector.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    basis: CollectiveSpinBasis,
    matrix: Mat<C64>,
}

impl Operator {
    pub fn from_matrix(basis: CollectiveSpinBasis, matrix: Mat<C64>) -> Self {
        assert_eq!(matrix.nrows(), basis.dim());
        assert_eq!(matrix.ncols(), basis.dim());
        Self { basis, matrix }
    }

    pub fn identity(basis: CollectiveSpinBasis) -> Self {
        let d = basis.dim();
        Self::from_matrix(basis, Mat::from_fn(d, d, |i, j| if i == j { ONE } else { ZERO }))
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

    pub fn adjoint(&self) -> Self {
        Self::from_matrix(self.basis, self.matrix.adjoint().to_owned())
    }

    pub fn transpose(&self) -> Self {
        Self::from_matrix(self.basis, self.matrix.transpose().to_owned())
    }

    pub fn compose(&self, rhs: &Self) -> Self {
        Self::from_matrix(self.basis, &self.matrix * &rhs.matrix)
    }

    pub fn add(&self, rhs: &Self) -> Self {
        Self::from_matrix(self.basis, &self.matrix + &rhs.matrix)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        Self::from_matrix(self.basis, &self.matrix - &rhs.matrix)
    }

    pub fn scale(&self, factor: C64) -> Self {
        let d = self.basis.dim();
        Self::from_matrix(self.basis, Mat::from_fn(d, d, |i, j| self.matrix[(i, j)] * factor))
    }

    /// `[A, B] = AB − BA`.
    pub fn commutator(&self, rhs: &Self) -> Self {
        self.compose(rhs).sub(&rhs.compose(self))
    }

    pub fn frobenius_norm(&self) -> f64 {
        linalg::frobenius(self.matrix.as_ref())
    }

    /// Largest modulus of any entry of `A − A†`.
    pub fn hermiticity_defect(&self) -> f64 {
        linalg::hermiticity_defect(self.matrix.as_ref())
    }

    /// Spectral norm (largest singular value).
    pub fn operator_norm(&self) -> Result<f64, DickeError> {
        let sv = linalg::singular_values(self.matrix.as_ref())?;
        Ok(sv.into_iter().fold(0.0, f64::max))
    }

    /// `A |v⟩` for a column vector.
    pub fn apply(&self, v: MatRef<'_, C64>) -> Mat<C64> {
        &self.matrix * v
    }
}

/// Collective angular momentum operator along `axis`.
pub fn spin_operator(basis: CollectiveSpinBasis, axis: SpinAxis) -> Operator {
    let d = basis.dim();
    let mut plus = Mat::<C64>::zeros(d, d);
    // Ŝ₊|m⟩ ∝ |m+1⟩, i.e. index i → i − 1.
    for i in 1..d {
        plus[(i - 1, i)] = C64::new(basis.raise_coefficient(basis.m(i)), 0.0);
    }
    let matrix = match axis {
        SpinAxis::Plus => plus,
        SpinAxis::Minus => plus.transpose().to_owned(),
        SpinAxis::X => Mat::from_fn(d, d, |i, j| (plus[(i, j)] + plus[(j, i)]) * 0.5),
        // (Ŝ₊ − Ŝ₋)/(2i)
        SpinAxis::Y => Mat::from_fn(d, d, |i, j| (plus[(i, j)] - plus[(j, i)]) * C64::new(0.0, -0.5)),
        SpinAxis::Z => Mat::from_fn(d, d, |i, j| if i == j { C64::new(basis.m(i), 0.0) } else { ZERO }),
    };
    Operator::from_matrix(basis, matrix)
}

/// `Ŝ_n = sinθ cosφ Ŝx + sinθ sinφ Ŝy + cosθ Ŝz`.
pub fn spin_projection(basis: CollectiveSpinBasis, theta: f64, phi: f64) -> Result<Operator, DickeError> {
    if !theta.is_finite() || !phi.is_finite() {
        return Err(DickeError::NonFiniteAngle { theta, phi });
    }
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let d = basis.dim();
    let s = basis.total_spin();
    // Built directly from the ladder coefficients so that θ = 0 gives Ŝz
    // exactly: the off-diagonal part is (sinθ/2)(e^{-iφ} Ŝ₊ + e^{iφ} Ŝ₋).
    let mut m = Mat::<C64>::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = C64::new(ct * (s - i as f64), 0.0);
    }
    if st != 0.0 {
        let e_minus = C64::new(cp, -sp) * (0.5 * st);
        for i in 1..d {
            let c = basis.raise_coefficient(basis.m(i));
            m[(i - 1, i)] = e_minus * c;
            m[(i, i - 1)] = e_minus.conj() * c;
        }
    }
    Ok(Operator::from_matrix(basis, m))
}

/// Orthonormal eigenvectors of `Ŝ_n`, ordered by ascending eigenvalue.
#[derive(Debug, Clone)]
pub struct ProjectionEigenbasis {
    /// Eigenvalue labels `s = −S, −S+1, …, S`.
    pub labels: Vec<f64>,
    /// Column `k` is the eigenvector with label `labels[k]`.
    pub vectors: Mat<C64>,
}

impl ProjectionEigenbasis {
    pub fn vector(&self, k: usize) -> MatRef<'_, C64> {
        self.vectors.as_ref().subcols(k, 1)
    }
}

/// Eigenbasis of the spin projection along `(θ, φ)`.
///
/// Each eigenvector's phase is fixed by making its largest-magnitude
/// component (first such index on ties) real and positive.
pub fn projection_eigenbasis(
    basis: CollectiveSpinBasis,
    theta: f64,
    phi: f64,
) -> Result<ProjectionEigenbasis, DickeError> {
    let op = spin_projection(basis, theta, phi)?;
    let d = basis.dim();
    let s = basis.total_spin();
    let (values, mut vectors) = linalg::hermitian_eigen(op.matrix())?;
    let mut labels = Vec::with_capacity(d);
    for (k, &lambda) in values.iter().enumerate() {
        let expected = -s + k as f64;
        if (lambda - expected).abs() > 1e-8 * (1.0 + s) {
            return Err(DickeError::Eigenbasis(format!(
                "eigenvalue {k} is {lambda}, expected {expected}"
            )));
        }
        labels.push(expected);
    }
    for k in 0..d {
        let max = (0..d).map(|i| vectors[(i, k)].norm()).fold(0.0, f64::max);
        let pivot = (0..d)
            .find(|&i| vectors[(i, k)].norm() >= max * (1.0 - 1e-10))
            .expect("nonzero eigenvector");
        let phase = vectors[(pivot, k)].conj() / vectors[(pivot, k)].norm();
        for i in 0..d {
            vectors[(i, k)] *= phase;
        }
        vectors[(pivot, k)] = C64::new(vectors[(pivot, k)].re, 0.0);
    }
    let gram = vectors.adjoint() * &vectors;
    let mut defect = 0.0_f64;
    for j in 0..d {
        for i in 0..d {
            let target = if i == j { ONE } else { ZERO };
            defect = defect.max((gram[(i, j)] - target).norm());
        }
    }
    if defect > EIGENBASIS_TOL {
        return Err(DickeError::Eigenbasis(format!(
            "orthonormality defect {defect:.3e} exceeds {EIGENBASIS_TOL:e}"
        )));
    }
    Ok(ProjectionEigenbasis { labels, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn max_entry_diff(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                worst = worst.max((a[(i, j)] - b[(i, j)]).norm());
            }
        }
        worst
    }

    #[test]
    fn basis_dimensions_and_ordering() {
        let b = CollectiveSpinBasis::new(1).unwrap();
        assert_eq!(b.dim(), 2);
        assert_eq!(b.m_values(), vec![0.5, -0.5]);
        let b = CollectiveSpinBasis::new(2).unwrap();
        assert_eq!(b.dim(), 3);
        assert_eq!(b.m_values(), vec![1.0, 0.0, -1.0]);
        assert_eq!(b.index_of(-1.0), Some(2));
        assert_eq!(b.index_of(0.5), None);
        assert!(CollectiveSpinBasis::new(0).is_err());
        assert!(CollectiveSpinBasis::from_signed(-3).is_err());
    }

    #[test]
    fn single_spin_is_half_pauli() {
        let b = CollectiveSpinBasis::new(1).unwrap();
        let z = spin_operator(b, SpinAxis::Z);
        assert_eq!(z.matrix()[(0, 0)], C64::new(0.5, 0.0));
        assert_eq!(z.matrix()[(1, 1)], C64::new(-0.5, 0.0));
        let x = spin_operator(b, SpinAxis::X);
        assert_eq!(x.matrix()[(0, 1)], C64::new(0.5, 0.0));
        assert_eq!(x.matrix()[(1, 0)], C64::new(0.5, 0.0));
        assert_eq!(x.matrix()[(0, 0)], ZERO);
        let y = spin_operator(b, SpinAxis::Y);
        assert_eq!(y.matrix()[(0, 1)], C64::new(0.0, -0.5));
        assert_eq!(y.matrix()[(1, 0)], C64::new(0.0, 0.5));
    }

    #[test]
    fn raising_operator_on_triplet() {
        let b = CollectiveSpinBasis::new(2).unwrap();
        let plus = spin_operator(b, SpinAxis::Plus);
        let out = plus.apply(b.basis_vector(1).as_ref());
        assert!((out[(0, 0)] - C64::new(2f64.sqrt(), 0.0)).norm() < 1e-15);
        assert_eq!(out[(1, 0)], ZERO);
        assert_eq!(out[(2, 0)], ZERO);
    }

    #[test]
    fn axis_labels_parse() {
        assert_eq!("X".parse::<SpinAxis>().unwrap(), SpinAxis::X);
        assert_eq!("minus".parse::<SpinAxis>().unwrap(), SpinAxis::Minus);
        assert!(matches!("w".parse::<SpinAxis>(), Err(DickeError::UnknownAxis(_))));
    }

    #[test]
    fn projection_reduces_to_cartesian_axes() {
        let b = CollectiveSpinBasis::new(7).unwrap();
        let z = spin_projection(b, 0.0, 0.3).unwrap();
        assert_eq!(z, spin_operator(b, SpinAxis::Z));
        let x = spin_projection(b, FRAC_PI_2, 0.0).unwrap();
        assert!(max_entry_diff(x.matrix(), spin_operator(b, SpinAxis::X).matrix()) < 1e-15);
        let y = spin_projection(b, FRAC_PI_2, FRAC_PI_2).unwrap();
        assert!(max_entry_diff(y.matrix(), spin_operator(b, SpinAxis::Y).matrix()) < 1e-15);
        assert!(spin_projection(b, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn eigenbasis_at_poles_is_dicke_basis() {
        let b = CollectiveSpinBasis::new(4).unwrap();
        let e = projection_eigenbasis(b, 0.0, 0.0).unwrap();
        assert_eq!(e.labels, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        // ascending s ↔ descending index
        for k in 0..5 {
            let v = e.vector(k);
            assert!((v[(4 - k, 0)] - ONE).norm() < 1e-12);
        }
        let e = projection_eigenbasis(b, PI, 0.0).unwrap();
        for k in 0..5 {
            // Ŝ_{−ẑ} = −Ŝz: label s sits on m = −s, i.e. index k
            assert!((e.vector(k)[(k, 0)].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenbasis_labels_and_phase_convention() {
        let b = CollectiveSpinBasis::new(9).unwrap();
        let e = projection_eigenbasis(b, 1.1, 2.3).unwrap();
        let expected: Vec<f64> = (0..10).map(|k| -4.5 + k as f64).collect();
        assert_eq!(e.labels, expected);
        let op = spin_projection(b, 1.1, 2.3).unwrap();
        for k in 0..10 {
            let v = e.vector(k);
            let av = op.apply(v);
            for i in 0..10 {
                assert!((av[(i, 0)] - v[(i, 0)] * e.labels[k]).norm() < 1e-10);
            }
            let max = (0..10).map(|i| v[(i, 0)].norm()).fold(0.0, f64::max);
            let pivot = (0..10).find(|&i| v[(i, 0)].norm() >= max * (1.0 - 1e-10)).unwrap();
            assert!(v[(pivot, 0)].im == 0.0 && v[(pivot, 0)].re > 0.0);
        }
        // deterministic
        let again = projection_eigenbasis(b, 1.1, 2.3).unwrap();
        assert_eq!(again.vectors, e.vectors);
    }
}
