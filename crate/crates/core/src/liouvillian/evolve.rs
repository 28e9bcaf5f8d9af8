//! Adaptive Dormand–Prince 5(4) integration of `dρ/dt = L[ρ]`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{unvectorize, vectorize, DensityMatrix, LiouvillianError, Superoperator};
use crate::linalg::ZERO;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step in units of 1/κ.
    pub initial_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
    /// Trace and Hermiticity drift allowed on accepted steps.
    pub drift_tol: f64,
    /// Keep full density matrices, not just `⟨Ŝz⟩/N`.
    pub store_states: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-10,
            initial_step: 1e-3,
            min_step: 1e-12,
            max_steps: 2_000_000,
            drift_tol: 1e-9,
            store_states: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Present when `store_states` was set.
    pub states: Vec<DensityMatrix>,
    pub sz_per_n: Vec<f64>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

// Dormand–Prince tableau; the system is autonomous so the nodes are unused
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One system's Runge–Kutta workspace.
struct Stepper<'a> {
    superop: &'a Superoperator,
    y: Vec<C64>,
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    y_new: Vec<C64>,
}

impl<'a> Stepper<'a> {
    fn new(superop: &'a Superoperator, y: Vec<C64>) -> Self {
        let n = y.len();
        let k = std::array::from_fn(|_| vec![ZERO; n]);
        let mut s = Self {
            superop,
            y,
            k,
            tmp: vec![ZERO; n],
            y_new: vec![ZERO; n],
        };
        s.superop.matrix().matvec_into(&s.y, &mut s.k[0]);
        s
    }

    /// Trial step of size `h`; returns the scaled error norm.
    fn trial(&mut self, h: f64, rtol: f64, atol: f64) -> f64 {
        let n = self.y.len();
        for s in 1..7 {
            for i in 0..n {
                let mut acc = ZERO;
                for (j, a) in A[s][..s].iter().enumerate() {
                    if *a != 0.0 {
                        acc += self.k[j][i] * *a;
                    }
                }
                self.tmp[i] = self.y[i] + acc * h;
            }
            self.superop.matrix().matvec_into(&self.tmp, &mut self.k[s]);
            if s == 6 {
                self.y_new.copy_from_slice(&self.tmp);
            }
        }
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut e = ZERO;
            for (j, w) in E.iter().enumerate() {
                if *w != 0.0 {
                    e += self.k[j][i] * *w;
                }
            }
            let scale = atol + rtol * self.y[i].norm().max(self.y_new[i].norm());
            err = err.max((e * h).norm() / scale);
        }
        err
    }

    /// Accepts the trial step; the last stage is the next first stage.
    fn accept(&mut self) {
        std::mem::swap(&mut self.y, &mut self.y_new);
        self.k.swap(0, 6);
    }
}

fn check_times(times: &[f64]) -> Result<(), LiouvillianError> {
    if times.is_empty() || !(times[0] >= 0.0) || times.iter().any(|t| !t.is_finite()) {
        return Err(LiouvillianError::BadTimes);
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LiouvillianError::BadTimes);
    }
    Ok(())
}

fn drift(y: &[C64], d: usize) -> (f64, f64) {
    let tr: C64 = (0..d).map(|i| y[i + i * d]).sum();
    let mut herm: f64 = 0.0;
    for j in 0..d {
        for i in 0..=j {
            herm = herm.max((y[i + j * d] - y[j + i * d].conj()).norm());
        }
    }
    ((tr - C64::new(1.0, 0.0)).norm(), herm)
}

fn record(
    superop: &Superoperator,
    y: &[C64],
    t: f64,
    opts: &EvolveOptions,
    traj: &mut Trajectory,
) -> Result<(), LiouvillianError> {
    let basis = superop.basis();
    let d = basis.dim();
    let rho = DensityMatrix::new(basis, unvectorize(y, d)).map_err(|e| LiouvillianError::InvariantViolation {
        t,
        detail: e.to_string(),
    })?;
    // Ŝz is diagonal with entries m_i
    let sz: f64 = (0..d).map(|i| basis.m(i) * y[i + i * d].re).sum();
    traj.times.push(t);
    traj.sz_per_n.push(sz / basis.n_spins() as f64);
    if opts.store_states {
        traj.states.push(rho);
    }
    Ok(())
}

pub fn evolve(superop: &Superoperator, rho0: &DensityMatrix, times: &[f64]) -> Result<Trajectory, LiouvillianError> {
    evolve_with(superop, rho0, times, &EvolveOptions::default())
}

pub fn evolve_with(
    superop: &Superoperator,
    rho0: &DensityMatrix,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<Trajectory, LiouvillianError> {
    let mut out = evolve_batch(&[superop], rho0, times, opts)?;
    Ok(out.pop().expect("one trajectory per superoperator"))
}

/// Evolves the same initial state under several Liouvillians with one
/// shared step sequence, the error estimate being the worst over the
/// batch. Differences between the trajectories are then free of
/// step-selection noise, which matters for finite differences in ω.
pub fn evolve_batch(
    superops: &[&Superoperator],
    rho0: &DensityMatrix,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<Trajectory>, LiouvillianError> {
    check_times(times)?;
    let basis = rho0.basis();
    if superops.iter().any(|l| l.basis() != basis) {
        return Err(LiouvillianError::BasisMismatch);
    }
    let d = basis.dim();
    let y0 = vectorize(&rho0.matrix().to_owned());
    let mut steppers: Vec<Stepper> = superops.iter().map(|l| Stepper::new(l, y0.clone())).collect();
    let mut trajs: Vec<Trajectory> = superops
        .iter()
        .map(|_| Trajectory {
            times: Vec::with_capacity(times.len()),
            states: Vec::new(),
            sz_per_n: Vec::with_capacity(times.len()),
            steps_accepted: 0,
            steps_rejected: 0,
        })
        .collect();

    let mut t = 0.0;
    let mut h = opts.initial_step;
    let mut steps = 0usize;
    let mut rejected = 0usize;
    for &target in times {
        while t < target {
            let remaining = target - t;
            let last = h >= remaining;
            let h_try = if last { remaining } else { h };
            let err = steppers
                .iter_mut()
                .map(|s| s.trial(h_try, opts.rtol, opts.atol))
                .fold(0.0, f64::max);
            steps += 1;
            if steps > opts.max_steps {
                return Err(LiouvillianError::TooManySteps(opts.max_steps));
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { target } else { t + h_try };
                for s in steppers.iter_mut() {
                    s.accept();
                    let (dtr, dh) = drift(&s.y, d);
                    if dtr > opts.drift_tol || dh > opts.drift_tol {
                        return Err(LiouvillianError::InvariantViolation {
                            t,
                            detail: format!("trace drift {dtr:.3e}, hermiticity drift {dh:.3e}"),
                        });
                    }
                }
                // a step shortened to hit an output time says nothing
                // about the next step size
                if !last {
                    h = h_try * factor;
                }
            } else {
                rejected += 1;
                h = h_try * factor.min(1.0);
                if h < opts.min_step {
                    return Err(LiouvillianError::StepUnderflow { t, h });
                }
            }
        }
        for (s, traj) in steppers.iter().zip(trajs.iter_mut()) {
            record(s.superop, &s.y, target, opts, traj)?;
        }
    }
    for traj in trajs.iter_mut() {
        traj.steps_accepted = steps - rejected;
        traj.steps_rejected = rejected;
    }
    Ok(trajs)
}

/// Decay rate of the oscillation envelope of `values` about `baseline`:
/// minus the slope of a least-squares line through `ln|values − baseline|`
/// at the local maxima of the deviation. `None` with fewer than three
/// maxima.
pub fn envelope_decay_rate(times: &[f64], values: &[f64], baseline: f64) -> Option<f64> {
    let dev: Vec<f64> = values.iter().map(|v| (v - baseline).abs()).collect();
    let peaks: Vec<(f64, f64)> = (1..dev.len().saturating_sub(1))
        .filter(|&i| dev[i] > dev[i - 1] && dev[i] >= dev[i + 1] && dev[i] > 0.0)
        .map(|i| (times[i], dev[i].ln()))
        .collect();
    if peaks.len() < 3 {
        return None;
    }
    let n = peaks.len() as f64;
    let mt = peaks.iter().map(|p| p.0).sum::<f64>() / n;
    let my = peaks.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = peaks.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = peaks.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some(-sxy / sxx)
}
