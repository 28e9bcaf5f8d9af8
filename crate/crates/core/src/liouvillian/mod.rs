//! The collective-dissipation Liouvillian
//!
//! ```text
//! dρ/dt = −iω[Ŝx, ρ] + (κ/S)(Ŝ₋ρŜ₊ − ½{Ŝ₊Ŝ₋, ρ})
//! ```
//!
//! vectorized with column stacking, `vec(AρB) = (Bᵀ⊗A) vec(ρ)`, so that
//! `vec(ρ)[i + j·d] = ρ[i, j]`.

mod arnoldi;
pub mod cache;
mod evolve;
mod spectrum;
mod state;
mod steady;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dicke::{spin_operator, CollectiveSpinBasis, DickeError, Operator, SpinAxis};
use crate::linalg::{CsrMatrix, LinalgError, ZERO};

pub use evolve::{envelope_decay_rate, evolve, evolve_batch, evolve_with, EvolveOptions, Trajectory};
pub use spectrum::{
    dominant_decay_rate, dominant_decay_rate_with, spectrum, spectrum_with, DecayRate, LiouvillianSpectrum,
    SpectrumMethod, SpectrumOptions,
};
pub use state::{expectation, DensityMatrix, StateError, HERMITICITY_TOL, POSITIVITY_TOL, TRACE_TOL};
pub use steady::{dense_null_space_dimension, steady_state, steady_state_dense, STEADY_STATE_RESIDUAL_TOL};

#[derive(Debug, Error)]
pub enum LiouvillianError {
    #[error("dissipation rate must be positive and finite (got kappa = {0})")]
    NonPositiveKappa(f64),
    #[error("drive frequency must be finite and non-negative (got omega = {0})")]
    InvalidOmega(f64),
    #[error("steady state is not unique: {0}")]
    DegenerateSteadyState(String),
    #[error("steady-state solve failed: residual {residual:.3e} exceeds {bound:.3e}")]
    SteadyStateResidual { residual: f64, bound: f64 },
    #[error("requested {requested} eigenvalues but the Liouvillian has dimension {dim}")]
    BadEigenCount { requested: usize, dim: usize },
    #[error("eigensolver did not converge after {iterations} Krylov vectors; worst residual {worst_residual:.3e}")]
    EigenNotConverged { iterations: usize, worst_residual: f64 },
    #[error("times must be non-negative and strictly increasing")]
    BadTimes,
    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("integration exceeded {0} steps")]
    TooManySteps(usize),
    #[error("invariant violated at t = {t}: {detail}")]
    InvariantViolation { t: f64, detail: String },
    #[error("state does not match the superoperator's spin sector")]
    BasisMismatch,
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Dicke(#[from] DickeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("cache i/o: {0}")]
    Cache(String),
}

/// Drive `ω`, dissipation `κ` and spin count `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub omega: f64,
    pub kappa: f64,
    pub n_spins: usize,
}

impl ModelParams {
    pub fn new(omega: f64, kappa: f64, n_spins: usize) -> Result<Self, LiouvillianError> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(LiouvillianError::NonPositiveKappa(kappa));
        }
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(LiouvillianError::InvalidOmega(omega));
        }
        CollectiveSpinBasis::new(n_spins)?;
        Ok(Self { omega, kappa, n_spins })
    }

    /// Same model at `ω + delta`. The result may have a negative drive; it
    /// exists for finite-difference neighbours, where `−ω` is as physical
    /// as `ω` (the sign flips under a π rotation about z).
    pub fn with_omega_offset(&self, delta: f64) -> Self {
        Self {
            omega: self.omega + delta,
            ..*self
        }
    }

    pub fn omega_over_kappa(&self) -> f64 {
        self.omega / self.kappa
    }

    pub fn basis(&self) -> CollectiveSpinBasis {
        CollectiveSpinBasis::new(self.n_spins).expect("validated at construction")
    }
}

/// Sparse vectorized Liouvillian of dimension `(N+1)² × (N+1)²`.
#[derive(Debug, Clone)]
pub struct Superoperator {
    params: ModelParams,
    basis: CollectiveSpinBasis,
    matrix: CsrMatrix,
}

/// Sparse nonzeros of a dense operator.
fn nonzeros(op: &Operator) -> Vec<(usize, usize, C64)> {
    let m = op.matrix();
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != ZERO {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

/// Pushes the entries of `coeff · (Bᵀ ⊗ A)`, the matrix of `ρ ↦ coeff·AρB`.
fn push_sandwich(entries: &mut Vec<(usize, usize, C64)>, d: usize, coeff: C64, a: &Operator, b: &Operator) {
    let a_nz = nonzeros(a);
    let b_nz = nonzeros(b);
    for &(l, j, bv) in &b_nz {
        for &(i, k, av) in &a_nz {
            entries.push((i + j * d, k + l * d, coeff * av * bv));
        }
    }
}

impl Superoperator {
    /// Rejects `κ ≤ 0`, a non-finite drive and an empty spin sector. A
    /// negative drive is accepted.
    pub fn new(params: ModelParams) -> Result<Self, LiouvillianError> {
        ModelParams::new(params.omega.abs(), params.kappa, params.n_spins)?;
        Ok(Self::assemble(params))
    }

    /// Assembly without the `ω ≥ 0` check, for finite-difference neighbours.
    pub(crate) fn assemble(params: ModelParams) -> Self {
        let basis = params.basis();
        let d = basis.dim();
        let s = basis.total_spin();
        let sx = spin_operator(basis, SpinAxis::X);
        let sp = spin_operator(basis, SpinAxis::Plus);
        let sm = spin_operator(basis, SpinAxis::Minus);
        let spsm = sp.compose(&sm);
        let id = Operator::identity(basis);
        let gamma = params.kappa / s;

        let mut entries = Vec::new();
        push_sandwich(&mut entries, d, C64::new(0.0, -params.omega), &sx, &id);
        push_sandwich(&mut entries, d, C64::new(0.0, params.omega), &id, &sx);
        push_sandwich(&mut entries, d, C64::new(gamma, 0.0), &sm, &sp);
        push_sandwich(&mut entries, d, C64::new(-0.5 * gamma, 0.0), &spsm, &id);
        push_sandwich(&mut entries, d, C64::new(-0.5 * gamma, 0.0), &id, &spsm);
        let matrix = CsrMatrix::from_triplets(d * d, d * d, entries);
        Self { params, basis, matrix }
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn basis(&self) -> CollectiveSpinBasis {
        self.basis
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Dimension `(N+1)²` of the vectorized space.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.frobenius_norm()
    }

    /// `L[ρ]` as a matrix.
    pub fn apply(&self, rho: &Mat<C64>) -> Mat<C64> {
        let d = self.basis.dim();
        let out = self.matrix.matvec(&vectorize(rho));
        unvectorize(&out, d)
    }

    pub fn to_dense(&self) -> Mat<C64> {
        self.matrix.to_dense()
    }

    /// The Liouvillian in the gauge `ρ[a,b] = i^{a−b} r[a,b]`, which maps
    /// it to a real matrix with the same spectrum (the model commutes with
    /// complex conjugation followed by a π rotation about z).
    pub fn real_gauge_dense(&self) -> Mat<f64> {
        let d = self.basis.dim();
        let n = self.dim();
        let mut out = Mat::<f64>::zeros(n, n);
        let phase = |k: i64| -> C64 {
            match k.rem_euclid(4) {
                0 => C64::new(1.0, 0.0),
                1 => C64::new(0.0, 1.0),
                2 => C64::new(-1.0, 0.0),
                _ => C64::new(0.0, -1.0),
            }
        };
        for (row, col, v) in self.matrix.iter() {
            let (a, b) = ((row % d) as i64, (row / d) as i64);
            let (c, e) = ((col % d) as i64, (col / d) as i64);
            let w = v * phase((c - e) - (a - b));
            debug_assert!(w.im.abs() <= 1e-12 * (1.0 + w.re.abs()));
            out[(row, col)] += w.re;
        }
        out
    }
}

/// Column-stacking `vec(ρ)`.
pub fn vectorize(rho: &Mat<C64>) -> Vec<C64> {
    let d = rho.nrows();
    let mut v = Vec::with_capacity(d * d);
    for j in 0..rho.ncols() {
        for i in 0..d {
            v.push(rho[(i, j)]);
        }
    }
    v
}

pub fn unvectorize(v: &[C64], d: usize) -> Mat<C64> {
    assert_eq!(v.len(), d * d);
    Mat::from_fn(d, d, |i, j| v[i + j * d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{self, hermiticity_defect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(d: usize, rng: &mut ChaCha8Rng) -> Mat<C64> {
        let a = Mat::from_fn(d, d, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        linalg::hermitian_part(a.as_ref())
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(ModelParams::new(1.0, 0.0, 4), Err(LiouvillianError::NonPositiveKappa(_))));
        assert!(matches!(ModelParams::new(1.0, -1.0, 4), Err(LiouvillianError::NonPositiveKappa(_))));
        assert!(matches!(ModelParams::new(-0.1, 1.0, 4), Err(LiouvillianError::InvalidOmega(_))));
        assert!(ModelParams::new(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn single_spin_matches_hand_built_lindbladian() {
        // N = 1: S = 1/2, κ/S = 2κ, Ŝ₋ = σ₋, Ŝ₊Ŝ₋ = |↑⟩⟨↑|, Ŝx = σx/2.
        // Written out element by element for ρ = [[a, b], [c, e]] (index 0 = ↑).
        let (omega, kappa) = (1.0, 1.0);
        let l = Superoperator::new(ModelParams::new(omega, kappa, 1).unwrap()).unwrap();
        let g = 2.0 * kappa;
        let i = C64::new(0.0, 1.0);
        let w = omega / 2.0;
        // vec order: (0,0)=a, (1,0)=c, (0,1)=b, (1,1)=e
        // da/dt = −iw(c − b) − g a
        // dc/dt = −iw(a − e) − g/2 c
        // db/dt = −iw(e − a) − g/2 b
        // de/dt = −iw(b − c) + g a
        let z = C64::new(0.0, 0.0);
        let r = |x: f64| C64::new(x, 0.0);
        let expected = [
            [r(-g), -i * w, i * w, z],
            [-i * w, r(-g / 2.0), z, i * w],
            [i * w, z, r(-g / 2.0), -i * w],
            [r(g), i * w, -i * w, z],
        ];
        let dense = l.to_dense();
        for row in 0..4 {
            for col in 0..4 {
                assert!(
                    (dense[(row, col)] - expected[row][col]).norm() < 1e-14,
                    "entry ({row},{col}): {} vs {}",
                    dense[(row, col)],
                    expected[row][col]
                );
            }
        }
    }

    #[test]
    fn trace_and_hermiticity_preservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 3, 6, 11, 20] {
            let l = Superoperator::new(ModelParams::new(0.8 + 0.05 * n as f64, 1.3, n).unwrap()).unwrap();
            let d = n + 1;
            // vec(I)† L = 0
            let ones: Vec<C64> = (0..d * d).map(|k| if k % d == k / d { C64::new(1.0, 0.0) } else { ZERO }).collect();
            let left = l.matrix().adjoint_matvec(&ones);
            let worst = left.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(worst < 1e-10, "N={n}: trace defect {worst}");
            for _ in 0..20 {
                let h = random_hermitian(d, &mut rng);
                let out = l.apply(&h);
                assert!(hermiticity_defect(out.as_ref()) < 1e-10);
                assert!(linalg::trace(out.as_ref()).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn dark_state_is_fixed_without_drive() {
        let l = Superoperator::new(ModelParams::new(0.0, 1.0, 5).unwrap()).unwrap();
        let mut rho = Mat::<C64>::zeros(6, 6);
        rho[(5, 5)] = C64::new(1.0, 0.0);
        let out = l.apply(&rho);
        assert!(linalg::frobenius(out.as_ref()) < 1e-15);
    }

    #[test]
    fn real_gauge_is_similar_to_original() {
        let l = Superoperator::new(ModelParams::new(1.2, 1.0, 4).unwrap()).unwrap();
        let real = l.real_gauge_dense();
        let dense = l.to_dense();
        let mut a: Vec<C64> = dense.eigenvalues().unwrap();
        let mut b: Vec<C64> = real.eigenvalues().unwrap();
        let key = |z: &C64| (z.re * 1e6).round() as i64 * 1_000_000_000 + (z.im * 1e6).round() as i64;
        a.sort_by_key(key);
        b.sort_by_key(key);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn vectorization_round_trip() {
        let m = Mat::from_fn(3, 3, |i, j| C64::new(i as f64, j as f64));
        let v = vectorize(&m);
        assert_eq!(v[1], C64::new(1.0, 0.0));
        assert_eq!(v[3], C64::new(0.0, 1.0));
        assert_eq!(unvectorize(&v, 3), m);
    }
}
