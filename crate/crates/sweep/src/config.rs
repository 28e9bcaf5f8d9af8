//! JSON sweep configuration.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use btc_core::liouvillian::EvolveOptions;
use btc_core::metrology::DEFAULT_DELTA_OMEGA;
use btc_core::scaling::{CollapseBounds, CollapseParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sizes used by the scaling tasks unless a config says otherwise.
pub const DESK_SIZES: [usize; 8] = [6, 10, 20, 40, 80, 120, 160, 200];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("n_list is empty")]
    EmptyN,
    #[error("omega_grid is empty")]
    EmptyOmega,
    #[error("N must be at least 1")]
    ZeroN,
    #[error("omega values must be finite and non-negative (got {0})")]
    BadOmega(f64),
    #[error("kappa must be positive and finite (got {0})")]
    BadKappa(f64),
    #[error("delta_omega must be positive and finite (got {0})")]
    BadDelta(f64),
    #[error("workers must be at least 1")]
    NoWorkers,
    #[error("no tasks requested")]
    NoTasks,
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("output directory {path} is not writable: {reason}")]
    OutDir { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Trajectory,
    Spectrum,
    Magnetization,
    Qfi,
    Cfi,
    Collapse,
    Fits,
    Bound,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Trajectory => "trajectory",
            Task::Spectrum => "spectrum",
            Task::Magnetization => "magnetization",
            Task::Qfi => "qfi",
            Task::Cfi => "cfi",
            Task::Collapse => "collapse",
            Task::Fits => "fits",
            Task::Bound => "bound",
        }
    }
}

/// Either an explicit list or `points` equally spaced values in
/// `[start, stop]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaGrid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, points: usize },
}

impl Default for OmegaGrid {
    fn default() -> Self {
        OmegaGrid::Range {
            start: 0.2,
            stop: 1.6,
            points: 81,
        }
    }
}

impl OmegaGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OmegaGrid::List(v) => v.clone(),
            OmegaGrid::Range { start, stop, points } => match points {
                0 => Vec::new(),
                1 => vec![*start],
                p => (0..*p).map(|i| start + (stop - start) * i as f64 / (p - 1) as f64).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub evolve_rtol: f64,
    pub evolve_atol: f64,
    /// Relative Ritz residual for the iterative eigensolver.
    pub eigen_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let e = EvolveOptions::default();
        Self {
            evolve_rtol: e.rtol,
            evolve_atol: e.atol,
            eigen_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// All spins down, `|S, −S⟩`.
    Ground,
    /// All spins up, `|S, S⟩`.
    Excited,
    MaximallyMixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySettings {
    pub t_max: f64,
    pub dt: f64,
    pub initial_state: InitialState,
}

impl Default for TrajectorySettings {
    fn default() -> Self {
        Self {
            t_max: 20.0,
            dt: 0.02,
            initial_state: InitialState::Ground,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSettings {
    /// Number of slowest eigenvalues written per point.
    pub k: usize,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfiSettings {
    pub theta_points: usize,
    pub phi_points: usize,
    /// Optimize only at each size's QFI peak instead of at every grid point.
    pub at_peak_only: bool,
}

impl Default for CfiSettings {
    fn default() -> Self {
        Self {
            theta_points: 61,
            phi_points: 31,
            at_peak_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseSpec {
    /// Range of `ω/κ` included in the fit.
    pub window: [f64; 2],
    pub min_n: usize,
    /// Assumed relative error of each value.
    pub rel_error: f64,
    pub guess: CollapseParams,
    pub bounds: CollapseBounds,
}

fn params(omega_c: f64, nu: f64, shape_exponent: f64) -> CollapseParams {
    CollapseParams {
        omega_c,
        nu,
        shape_exponent,
    }
}

impl CollapseSpec {
    pub fn magnetization() -> Self {
        Self {
            window: [0.6, 1.4],
            min_n: 20,
            rel_error: 0.01,
            guess: params(1.0, 1.5, 0.5),
            bounds: CollapseBounds {
                lower: params(0.8, 0.3, 0.0),
                upper: params(1.2, 4.0, 1.5),
            },
        }
    }

    pub fn qfi() -> Self {
        Self {
            window: [0.7, 1.2],
            min_n: 1,
            rel_error: 0.01,
            guess: params(1.0, 1.5, 2.0),
            bounds: CollapseBounds {
                lower: params(0.8, 0.3, 0.0),
                upper: params(1.2, 4.0, 5.0),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseSettings {
    pub magnetization: CollapseSpec,
    pub qfi: CollapseSpec,
}

impl Default for CollapseSettings {
    fn default() -> Self {
        Self {
            magnetization: CollapseSpec::magnetization(),
            qfi: CollapseSpec::qfi(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    /// Smallest N used in the decay-rate fit.
    pub decay_min_n: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { decay_min_n: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSettings {
    /// Largest N evolved.
    pub n_max: usize,
    /// Fixed `ω/κ`; defaults to each size's QFI peak.
    pub omega: Option<f64>,
    /// Durations in units of the relaxation time `1/|Re E₂|`.
    pub times_in_tau: Vec<f64>,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            n_max: 100,
            omega: None,
            times_in_tau: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_list: Vec<usize>,
    pub omega_grid: OmegaGrid,
    pub kappa: f64,
    pub tasks: Vec<Task>,
    pub delta_omega: f64,
    pub tolerances: Tolerances,
    pub out_dir: PathBuf,
    /// Where per-job results are cached; defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub workers: usize,
    /// Extra points around each coarse QFI peak.
    pub refine_points: usize,
    pub trajectory: TrajectorySettings,
    pub spectrum: SpectrumSettings,
    pub cfi: CfiSettings,
    pub collapse: CollapseSettings,
    pub fits: FitSettings,
    pub bound: BoundSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_list: DESK_SIZES.to_vec(),
            omega_grid: OmegaGrid::default(),
            kappa: 1.0,
            tasks: vec![Task::Magnetization, Task::Qfi],
            delta_omega: DEFAULT_DELTA_OMEGA,
            tolerances: Tolerances::default(),
            out_dir: PathBuf::from("results"),
            cache_dir: None,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            refine_points: 21,
            trajectory: TrajectorySettings::default(),
            spectrum: SpectrumSettings::default(),
            cfi: CfiSettings::default(),
            collapse: CollapseSettings::default(),
            fits: FitSettings::default(),
            bound: BoundSettings::default(),
        }
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.omega_grid.values()
    }

    /// Sorted, deduplicated sizes.
    pub fn sizes(&self) -> Vec<usize> {
        self.n_list.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn wants(&self, task: Task) -> bool {
        self.tasks.contains(&task)
    }

    /// Drops sizes above `n_max`.
    pub fn cap_sizes(&mut self, n_max: usize) {
        self.n_list.retain(|&n| n <= n_max);
    }

    /// Checks every invariant except writability of the output directory.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_list.is_empty() {
            return Err(ConfigError::EmptyN);
        }
        if self.n_list.contains(&0) {
            return Err(ConfigError::ZeroN);
        }
        let omegas = self.omegas();
        if omegas.is_empty() {
            return Err(ConfigError::EmptyOmega);
        }
        if let Some(&w) = omegas.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(ConfigError::BadOmega(w));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(ConfigError::BadKappa(self.kappa));
        }
        if !(self.delta_omega > 0.0 && self.delta_omega.is_finite()) {
            return Err(ConfigError::BadDelta(self.delta_omega));
        }
        if self.workers == 0 {
            return Err(ConfigError::NoWorkers);
        }
        if self.tasks.is_empty() {
            return Err(ConfigError::NoTasks);
        }
        let t = &self.trajectory;
        if !(t.t_max > 0.0 && t.dt > 0.0 && t.dt <= t.t_max) {
            return Err(ConfigError::Invalid(format!("trajectory needs 0 < dt <= t_max (got dt = {}, t_max = {})", t.dt, t.t_max)));
        }
        if self.spectrum.k == 0 {
            return Err(ConfigError::Invalid("spectrum.k must be at least 1".into()));
        }
        if self.cfi.theta_points < 2 || self.cfi.phi_points < 2 {
            return Err(ConfigError::Invalid("cfi grids need at least 2 points".into()));
        }
        for (name, spec) in [("magnetization", &self.collapse.magnetization), ("qfi", &self.collapse.qfi)] {
            if !(spec.window[0] < spec.window[1]) || !(spec.rel_error > 0.0) {
                return Err(ConfigError::Invalid(format!("collapse.{name} needs an increasing window and rel_error > 0")));
            }
        }
        if let Some(w) = self.bound.omega {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ConfigError::BadOmega(w));
            }
        }
        if self.bound.times_in_tau.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(ConfigError::Invalid("bound.times_in_tau must be positive".into()));
        }
        Ok(())
    }

    /// Creates the output directory and probes that it accepts files.
    pub fn prepare_out_dir(&self) -> Result<(), ConfigError> {
        let err = |e: std::io::Error| ConfigError::OutDir {
            path: self.out_dir.clone(),
            reason: e.to_string(),
        };
        fs::create_dir_all(&self.out_dir).map_err(err)?;
        let probe = self.out_dir.join(".write-probe");
        fs::write(&probe, b"").map_err(err)?;
        fs::remove_file(&probe).map_err(err)?;
        Ok(())
    }

    pub fn evolve_options(&self) -> EvolveOptions {
        EvolveOptions {
            rtol: self.tolerances.evolve_rtol,
            atol: self.tolerances.evolve_atol,
            store_states: false,
            ..EvolveOptions::default()
        }
    }

    /// Short digest of everything that affects the result of `task`, so a
    /// changed tolerance invalidates cached entries.
    pub fn fingerprint(&self, task: Task) -> String {
        let specific = match task {
            Task::Trajectory => serde_json::json!({
                "rtol": self.tolerances.evolve_rtol,
                "atol": self.tolerances.evolve_atol,
                "trajectory": self.trajectory,
            }),
            Task::Spectrum => serde_json::json!({"eigen_tol": self.tolerances.eigen_tol, "k": self.spectrum.k}),
            Task::Magnetization => serde_json::json!({}),
            Task::Qfi => serde_json::json!({"delta_omega": self.delta_omega}),
            Task::Cfi => serde_json::json!({
                "delta_omega": self.delta_omega,
                "theta_points": self.cfi.theta_points,
                "phi_points": self.cfi.phi_points,
            }),
            Task::Bound => serde_json::json!({
                "delta_omega": self.delta_omega,
                "rtol": self.tolerances.evolve_rtol,
                "atol": self.tolerances.evolve_atol,
                "eigen_tol": self.tolerances.eigen_tol,
                "times_in_tau": self.bound.times_in_tau,
            }),
            Task::Collapse | Task::Fits => serde_json::json!({}),
        };
        let doc = serde_json::json!({"task": task.name(), "kappa": self.kappa, "settings": specific});
        let digest = Sha256::digest(doc.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SweepConfig::default();
        c.validate().unwrap();
        let w = c.omegas();
        assert_eq!(w.len(), 81);
        assert_eq!(w[0], 0.2);
        assert!((w[80] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = SweepConfig::from_json(r#"{"n_list": [20], "omega_grid": [0.5], "tasks": ["magnetization"]}"#).unwrap();
        assert_eq!(c.n_list, vec![20]);
        assert_eq!(c.omegas(), vec![0.5]);
        assert_eq!(c.kappa, 1.0);
        c.validate().unwrap();
        let r = SweepConfig::from_json(r#"{"omega_grid": {"start": 0.0, "stop": 1.0, "points": 3}}"#).unwrap();
        assert_eq!(r.omegas(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = |json: &str| SweepConfig::from_json(json).and_then(|c| c.validate());
        assert!(matches!(bad(r#"{"omega_grid": []}"#), Err(ConfigError::EmptyOmega)));
        assert!(matches!(bad(r#"{"n_list": []}"#), Err(ConfigError::EmptyN)));
        assert!(matches!(bad(r#"{"kappa": 0.0}"#), Err(ConfigError::BadKappa(_))));
        assert!(matches!(bad(r#"{"delta_omega": -1e-3}"#), Err(ConfigError::BadDelta(_))));
        assert!(matches!(bad(r#"{"workers": 0}"#), Err(ConfigError::NoWorkers)));
        assert!(matches!(bad(r#"{"omega_grid": [-0.1]}"#), Err(ConfigError::BadOmega(_))));
        assert!(matches!(bad(r#"{"tasks": ["nope"]}"#), Err(ConfigError::Parse(_))));
        assert!(matches!(bad(r#"{"unknown_field": 1}"#), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn fingerprint_tracks_relevant_settings() {
        let a = SweepConfig::default();
        let mut b = a.clone();
        b.delta_omega = 2e-3;
        assert_ne!(a.fingerprint(Task::Qfi), b.fingerprint(Task::Qfi));
        assert_eq!(a.fingerprint(Task::Magnetization), b.fingerprint(Task::Magnetization));
        assert_ne!(a.fingerprint(Task::Qfi), a.fingerprint(Task::Cfi));
    }

    #[test]
    fn unwritable_out_dir_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"x").unwrap();
        let c = SweepConfig {
            out_dir: file.join("sub"),
            ..SweepConfig::default()
        };
        assert!(matches!(c.prepare_out_dir(), Err(ConfigError::OutDir { .. })));
    }
}
