//! Work done for a single `(N, ω/κ, task)`.

use btc_core::dicke::{spin_operator, SpinAxis};
use btc_core::liouvillian::{
    dominant_decay_rate_with, envelope_decay_rate, evolve_with, expectation, spectrum_with, steady_state, DensityMatrix,
    LiouvillianError, LiouvillianSpectrum, ModelParams, SpectrumMethod, SpectrumOptions, Superoperator,
};
use btc_core::metrology::{
    angle_grid, optimize_cfi_on, qfi_fidelity, qfi_rate_trajectory, FisherResult, MeasurementSetting, MetrologyError,
    Stencil,
};
use serde::{Deserialize, Serialize};

use crate::config::{InitialState, SweepConfig, Task};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub n_spins: usize,
    pub omega_over_kappa: f64,
    pub task: Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n_spins: usize,
    pub omega_over_kappa: f64,
    pub time: f64,
    pub time_over_tau: f64,
    pub qfi_t: f64,
    pub rate: f64,
    pub bound: f64,
    pub satisfied: bool,
    pub qfi_steady: f64,
    /// `|F_Q(T) − F_Q(ss)| / F_Q(ss)`.
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JobOutput {
    Magnetization {
        sz_per_n: f64,
    },
    Qfi {
        result: FisherResult,
    },
    Cfi {
        setting: MeasurementSetting,
        result: FisherResult,
        qfi: FisherResult,
    },
    Spectrum {
        /// `[re, im]`, slowest first.
        eigenvalues: Vec<[f64; 2]>,
        e2: [f64; 2],
        method: SpectrumMethod,
        max_residual: Option<f64>,
    },
    Trajectory {
        times: Vec<f64>,
        sz_per_n: Vec<f64>,
        sz_steady_per_n: f64,
        /// Decay rate of the oscillation envelope, if at least three peaks.
        envelope_rate: Option<f64>,
    },
    Bound {
        rows: Vec<BoundRow>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error(transparent)]
    Liouvillian(#[from] LiouvillianError),
    #[error(transparent)]
    Metrology(#[from] MetrologyError),
    #[error("{0}")]
    Other(String),
}

fn params(config: &SweepConfig, n: usize, omega_over_kappa: f64) -> Result<ModelParams, LiouvillianError> {
    ModelParams::new(omega_over_kappa * config.kappa, config.kappa, n)
}

pub fn spectrum_options(config: &SweepConfig) -> SpectrumOptions {
    SpectrumOptions {
        tol: config.tolerances.eigen_tol,
        ..SpectrumOptions::default()
    }
}

/// Slowest eigenvalue other than the one nearest zero.
pub fn second_eigenvalue(spec: &LiouvillianSpectrum) -> Option<[f64; 2]> {
    let zero = (0..spec.eigenvalues.len()).min_by(|&a, &b| spec.eigenvalues[a].norm().total_cmp(&spec.eigenvalues[b].norm()))?;
    spec.eigenvalues
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != zero)
        .map(|(_, z)| z)
        .max_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)))
        .map(|z| [z.re, z.im])
}

pub fn initial_state(config: &SweepConfig, superop: &Superoperator) -> DensityMatrix {
    let basis = superop.basis();
    match config.trajectory.initial_state {
        InitialState::Ground => DensityMatrix::ground(basis),
        InitialState::Excited => DensityMatrix::dicke(basis, 0),
        InitialState::MaximallyMixed => DensityMatrix::maximally_mixed(basis),
    }
}

/// Output times `0, dt, 2dt, …` up to `t_max`.
pub fn output_times(t_max: f64, dt: f64) -> Vec<f64> {
    let steps = (t_max / dt + 1e-9).floor() as usize;
    (0..=steps).map(|i| i as f64 * dt).collect()
}

pub fn run_job(config: &SweepConfig, job: &Job) -> Result<JobOutput, JobError> {
    let p = params(config, job.n_spins, job.omega_over_kappa)?;
    match job.task {
        Task::Magnetization => {
            let l = Superoperator::new(p)?;
            let rho = steady_state(&l)?;
            let sz = expectation(&rho, &spin_operator(l.basis(), SpinAxis::Z)).map_err(LiouvillianError::from)?;
            Ok(JobOutput::Magnetization {
                sz_per_n: sz / job.n_spins as f64,
            })
        }
        Task::Qfi => Ok(JobOutput::Qfi {
            result: qfi_fidelity(p, config.delta_omega)?,
        }),
        Task::Cfi => {
            let stencil = Stencil::steady(p, config.delta_omega)?;
            let qfi = stencil.qfi()?;
            let thetas = angle_grid(config.cfi.theta_points);
            let phis = angle_grid(config.cfi.phi_points);
            let (setting, result) = optimize_cfi_on(&stencil, &thetas, &phis)?;
            Ok(JobOutput::Cfi { setting, result, qfi })
        }
        Task::Spectrum => {
            let l = Superoperator::new(p)?;
            let spec = spectrum_with(&l, config.spectrum.k.max(2).min(l.dim()), &spectrum_options(config))?;
            let e2 = second_eigenvalue(&spec).ok_or_else(|| JobError::Other("spectrum has a single eigenvalue".into()))?;
            Ok(JobOutput::Spectrum {
                eigenvalues: spec.pairs(),
                e2,
                method: spec.method,
                max_residual: spec.max_residual,
            })
        }
        Task::Trajectory => {
            let l = Superoperator::new(p)?;
            let rho0 = initial_state(config, &l);
            let times = output_times(config.trajectory.t_max, config.trajectory.dt);
            let traj = evolve_with(&l, &rho0, &times, &config.evolve_options())?;
            let ss = steady_state(&l)?;
            let sz_ss = expectation(&ss, &spin_operator(l.basis(), SpinAxis::Z)).map_err(LiouvillianError::from)?
                / job.n_spins as f64;
            let envelope_rate = envelope_decay_rate(&traj.times, &traj.sz_per_n, sz_ss);
            Ok(JobOutput::Trajectory {
                times: traj.times,
                sz_per_n: traj.sz_per_n,
                sz_steady_per_n: sz_ss,
                envelope_rate,
            })
        }
        Task::Bound => {
            let l = Superoperator::new(p)?;
            let decay = dominant_decay_rate_with(&l, &spectrum_options(config))?;
            let qfi_ss = qfi_fidelity(p, config.delta_omega)?.value;
            let rho0 = initial_state(config, &l);
            let opts = config.evolve_options();
            let mut rows = Vec::new();
            for &f in &config.bound.times_in_tau {
                let t = f * decay.tau;
                let r = qfi_rate_trajectory(p, &rho0, t, config.delta_omega, &opts)?;
                rows.push(BoundRow {
                    n_spins: job.n_spins,
                    omega_over_kappa: job.omega_over_kappa,
                    time: t,
                    time_over_tau: f,
                    qfi_t: r.qfi.value,
                    rate: r.rate,
                    bound: r.bound,
                    satisfied: r.bound_satisfied,
                    qfi_steady: qfi_ss,
                    rel_diff: (r.qfi.value - qfi_ss).abs() / qfi_ss,
                });
            }
            Ok(JobOutput::Bound { rows })
        }
        Task::Collapse | Task::Fits => Err(JobError::Other(format!("{} is not a per-point task", job.task.name()))),
    }
}
