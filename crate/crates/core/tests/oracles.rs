//! Checks against independent closed forms.
//!
//! With `J = Ŝ₋ + iωS/κ` the master equation is a pure dissipator
//! `(κ/S)D[J]`, because the constant shift of the jump operator generates
//! exactly the drive `ωŜx`. Since `J` is invertible, `D[J]` annihilates
//! `(J†J)⁻¹`, which gives the steady state in closed form.

use btc_core::dicke::CollectiveSpinBasis;
use btc_core::liouvillian::{evolve, steady_state, DensityMatrix, ModelParams, Superoperator};
use btc_core::metrology::{qfi_fidelity, qfi_sld_oracle};
use faer::Mat;
use num_complex::Complex64 as C64;

type Dense = Vec<Vec<C64>>;

/// `ρ ∝ J⁻¹J⁻†`, with `J` lower bidiagonal in the `m = S − i` ordering.
fn closed_form_steady_state(n: usize, omega: f64, kappa: f64) -> Dense {
    let d = n + 1;
    let s = n as f64 / 2.0;
    let alpha = C64::new(0.0, omega * s / kappa);
    // J[i+1][i] = ⟨m−1|Ŝ₋|m⟩ with m = S − i
    let lower: Vec<f64> = (0..n)
        .map(|i| {
            let m = s - i as f64;
            (s * (s + 1.0) - m * (m - 1.0)).sqrt()
        })
        .collect();
    // forward substitution for X = J⁻¹, column by column
    let mut x = vec![vec![C64::new(0.0, 0.0); d]; d];
    for c in 0..d {
        x[c][c] = C64::new(1.0, 0.0) / alpha;
        for r in c + 1..d {
            x[r][c] = -x[r - 1][c] * lower[r - 1] / alpha;
        }
    }
    let mut rho = vec![vec![C64::new(0.0, 0.0); d]; d];
    for i in 0..d {
        for j in 0..d {
            rho[i][j] = (0..d).map(|k| x[i][k] * x[j][k].conj()).sum();
        }
    }
    let tr: C64 = (0..d).map(|i| rho[i][i]).sum();
    for row in rho.iter_mut() {
        for v in row.iter_mut() {
            *v /= tr;
        }
    }
    rho
}

fn to_mat(a: &Dense) -> Mat<C64> {
    Mat::from_fn(a.len(), a.len(), |i, j| a[i][j])
}

/// Richardson-extrapolated central difference of the closed form in ω.
fn closed_form_derivative(n: usize, omega: f64) -> Mat<C64> {
    let central = |h: f64| {
        let p = closed_form_steady_state(n, omega + h, 1.0);
        let m = closed_form_steady_state(n, omega - h, 1.0);
        Mat::from_fn(n + 1, n + 1, |i, j| (p[i][j] - m[i][j]) / (2.0 * h))
    };
    let coarse = central(2e-3);
    let fine = central(1e-3);
    Mat::from_fn(n + 1, n + 1, |i, j| (fine[(i, j)] * 4.0 - coarse[(i, j)]) / 3.0)
}

#[test]
fn steady_state_matches_closed_form() {
    for n in [1, 2, 5, 12, 30] {
        for omega in [0.3, 1.0, 1.7] {
            let rho = steady_state(&Superoperator::new(ModelParams::new(omega, 1.0, n).unwrap()).unwrap()).unwrap();
            let exact = closed_form_steady_state(n, omega, 1.0);
            let m = rho.matrix();
            let err = (0..=n)
                .flat_map(|i| (0..=n).map(move |j| (i, j)))
                .map(|(i, j)| (m[(i, j)] - exact[i][j]).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "N={n} ω={omega}: max deviation {err:.3e}");
        }
    }
}

#[test]
fn fidelity_qfi_matches_sld_on_closed_form() {
    for (n, omega) in [(2, 0.6), (6, 0.95), (10, 1.2), (16, 1.0)] {
        let basis = CollectiveSpinBasis::new(n).unwrap();
        let rho = DensityMatrix::new(basis, to_mat(&closed_form_steady_state(n, omega, 1.0))).unwrap();
        let drho = closed_form_derivative(n, omega);
        let sld = qfi_sld_oracle(&rho, drho.as_ref()).unwrap();
        let fid = qfi_fidelity(ModelParams::new(omega, 1.0, n).unwrap(), 1e-3).unwrap().value;
        let rel = (fid - sld).abs() / sld;
        assert!(rel < 1e-4, "N={n} ω={omega}: fidelity {fid} vs SLD {sld}");
    }
}

#[test]
fn evolution_preserves_trace_and_reaches_steady_state() {
    let params = ModelParams::new(0.6, 1.0, 10).unwrap();
    let l = Superoperator::new(params).unwrap();
    let rho0 = DensityMatrix::ground(params.basis());
    let times: Vec<f64> = (0..=40).map(|k| k as f64).collect();
    let traj = evolve(&l, &rho0, &times).unwrap();
    for s in &traj.states {
        let tr: C64 = (0..s.basis().dim()).map(|i| s.matrix()[(i, i)]).sum();
        assert!((tr - 1.0).norm() < 1e-9);
    }
    let exact = DensityMatrix::new(params.basis(), to_mat(&closed_form_steady_state(10, 0.6, 1.0))).unwrap();
    let last = traj.states.last().unwrap();
    assert!(last.frobenius_distance(&exact) < 1e-6);
}
