//! Presets that turn a base configuration into the sweep behind one figure.

use serde::{Deserialize, Serialize};

use crate::config::{OmegaGrid, SweepConfig, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    /// Trajectories and slow spectra in both phases.
    Fig1,
    /// Magnetization and its collapse.
    Fig2,
    /// QFI peaks, peak fits and the QFI collapse.
    Fig3,
    /// Optimized classical Fisher information at the QFI peaks.
    Fig5,
    /// Relaxation time at the peaks and the time-constrained bound.
    Fig6,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
        }
    }

    /// `base` with the sizes, grid and tasks of this figure. Tolerances,
    /// workers and paths are kept.
    pub fn configure(self, base: &SweepConfig) -> SweepConfig {
        let mut c = base.clone();
        match self {
            Figure::Fig1 => {
                c.n_list = vec![20, 40, 80, 120];
                c.omega_grid = OmegaGrid::List(vec![0.5, 1.5]);
                c.tasks = vec![Task::Trajectory, Task::Spectrum];
                c.spectrum.k = 30;
                c.trajectory.t_max = 30.0;
                c.trajectory.dt = 0.02;
            }
            Figure::Fig2 => c.tasks = vec![Task::Magnetization, Task::Collapse],
            Figure::Fig3 => c.tasks = vec![Task::Qfi, Task::Collapse, Task::Fits],
            Figure::Fig5 => c.tasks = vec![Task::Qfi, Task::Cfi, Task::Fits],
            Figure::Fig6 => c.tasks = vec![Task::Qfi, Task::Fits, Task::Bound],
        }
        c
    }
}
