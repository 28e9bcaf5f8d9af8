use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64 as C64;

use super::{unvectorize, DensityMatrix, LiouvillianError, Superoperator};
use crate::linalg::{self, ONE, ZERO};

/// Relative residual bound `‖L[ρ]‖_F ≤ tol·‖L‖_F·‖ρ‖_F` for an accepted
/// steady state.
pub const STEADY_STATE_RESIDUAL_TOL: f64 = 1e-9;

/// Row of `L` replaced by the trace constraint. Any row belonging to a
/// diagonal element works since `vec(I)` is the unique left null vector.
const CONSTRAINT_ROW: usize = 0;

/// Unique steady state from the sparse system `L vec(ρ) = 0` with one row
/// replaced by `Tr ρ = 1`.
pub fn steady_state(superop: &Superoperator) -> Result<DensityMatrix, LiouvillianError> {
    let basis = superop.basis();
    let d = basis.dim();
    let n = superop.dim();
    let trace_row: Vec<(usize, C64)> = (0..d).map(|i| (i + i * d, ONE)).collect();
    let a = superop
        .matrix()
        .to_faer(ZERO, Some((CONSTRAINT_ROW, &trace_row)))?;
    let lu = a
        .sp_lu()
        .map_err(|e| LiouvillianError::DegenerateSteadyState(format!("sparse LU failed: {e}")))?;

    let mut rhs = Mat::<C64>::zeros(n, 1);
    rhs[(CONSTRAINT_ROW, 0)] = ONE;
    let mut x = lu.solve(&rhs);

    // two rounds of iterative refinement against the constrained system
    for _ in 0..2 {
        let xv: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
        let ax = superop.matrix().matvec(&xv);
        let mut r = Mat::<C64>::zeros(n, 1);
        for i in 0..n {
            r[(i, 0)] = -ax[i];
        }
        r[(CONSTRAINT_ROW, 0)] = ONE - (0..d).map(|i| xv[i + i * d]).sum::<C64>();
        let dx = lu.solve(&r);
        x += &dx;
    }

    let xv: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
    if xv.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(LiouvillianError::DegenerateSteadyState(
            "constrained system is singular".into(),
        ));
    }
    finish(superop, unvectorize(&xv, d))
}

/// Hermitizes, renormalizes and checks the residual bound.
fn finish(superop: &Superoperator, raw: Mat<C64>) -> Result<DensityMatrix, LiouvillianError> {
    let basis = superop.basis();
    let mut rho = linalg::hermitian_part(raw.as_ref());
    let tr = linalg::trace(rho.as_ref());
    if tr.norm() == 0.0 || !tr.re.is_finite() {
        return Err(LiouvillianError::DegenerateSteadyState("null vector has zero trace".into()));
    }
    let inv = C64::new(1.0 / tr.re, 0.0);
    let d = basis.dim();
    for j in 0..d {
        for i in 0..d {
            rho[(i, j)] *= inv;
        }
    }
    let residual = linalg::frobenius(superop.apply(&rho).as_ref());
    let bound = STEADY_STATE_RESIDUAL_TOL * superop.frobenius_norm() * linalg::frobenius(rho.as_ref());
    if !(residual <= bound) {
        return Err(LiouvillianError::SteadyStateResidual { residual, bound });
    }
    Ok(DensityMatrix::new(basis, rho)?)
}

/// Number of singular values of the dense Liouvillian below
/// `rel_tol · σ_max`. Intended for small sectors.
pub fn dense_null_space_dimension(superop: &Superoperator, rel_tol: f64) -> Result<usize, LiouvillianError> {
    let sv = linalg::singular_values(superop.to_dense().as_ref())?;
    let max = sv.iter().copied().fold(0.0, f64::max);
    Ok(sv.iter().filter(|&&s| s <= rel_tol * max).count())
}

/// Steady state from the right singular vector of the smallest singular
/// value of the dense Liouvillian. Cross-check for small sectors.
pub fn steady_state_dense(superop: &Superoperator) -> Result<DensityMatrix, LiouvillianError> {
    let dense = superop.to_dense();
    let svd = dense.svd().map_err(|_| linalg::LinalgError::SvdNotConverged)?;
    let s = svd.S().column_vector();
    let n = s.nrows();
    let max = (0..n).map(|i| s[i].re).fold(0.0, f64::max);
    let small: Vec<usize> = (0..n).filter(|&i| s[i].re <= 1e-10 * max).collect();
    if small.len() != 1 {
        return Err(LiouvillianError::DegenerateSteadyState(format!(
            "{} singular values below 1e-10·σ_max",
            small.len()
        )));
    }
    let v = svd.V();
    let col: Vec<C64> = (0..n).map(|i| v[(i, small[0])]).collect();
    finish(superop, unvectorize(&col, superop.basis().dim()))
}
