//! The sweep driver: point jobs on the grid, peak refinement, peak rows,
//! then aggregate fits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::thread;

use btc_core::scaling::{CollapseFit, ConsistencyReport, ObservableKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, NamedFit, PeakRow};
use crate::cache::ResultCache;
use crate::config::{ConfigError, SweepConfig, Task};
use crate::jobs::{run_job, BoundRow, Job, JobOutput};
use crate::pool::run_pool;
use crate::record::{format_number, write_atomic, write_sweep_csv, SweepRecord, TaskFailure};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A failed job or aggregate step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub task: Task,
    pub n_spins: Option<usize>,
    pub omega_over_kappa: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub n_spins: usize,
    pub omega_over_kappa: f64,
    pub times: Vec<f64>,
    pub sz_per_n: Vec<f64>,
    pub sz_steady_per_n: f64,
    pub envelope_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub n_spins: usize,
    pub omega_over_kappa: f64,
    pub eigenvalues: Vec<[f64; 2]>,
    pub e2: [f64; 2],
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    /// Sorted by `(N, ω)`.
    pub records: Vec<SweepRecord>,
    pub peaks: Vec<PeakRow>,
    pub trajectories: Vec<TrajectoryResult>,
    pub spectra: Vec<SpectrumResult>,
    pub collapses: Vec<CollapseFit>,
    pub fits: Vec<NamedFit>,
    pub consistency: Option<ConsistencyReport>,
    pub bound_rows: Vec<BoundRow>,
    pub failures: Vec<Failure>,
    pub jobs_computed: usize,
    pub jobs_cached: usize,
}

impl SweepOutcome {
    /// 0 when everything succeeded, 1 on any failure.
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failures.is_empty())
    }

    pub fn collapse(&self, kind: ObservableKind) -> Option<&CollapseFit> {
        self.collapses.iter().find(|c| c.kind == kind)
    }

    pub fn fit(&self, observable: &str) -> Option<&NamedFit> {
        self.fits.iter().find(|f| f.observable == observable)
    }
}

type RowKey = (usize, u64);

fn row_key(n: usize, omega: f64) -> RowKey {
    // non-negative floats order like their bit patterns
    (n, omega.to_bits())
}

/// File-name form of `ω/κ`.
pub fn omega_label(omega: f64) -> String {
    format_number(omega)
}

struct Driver<'a> {
    config: &'a SweepConfig,
    force: bool,
    cache: ResultCache,
    out: PathBuf,
    rows: BTreeMap<RowKey, SweepRecord>,
    outcome: SweepOutcome,
}

impl<'a> Driver<'a> {
    fn io_err(path: PathBuf) -> impl FnOnce(std::io::Error) -> SweepError {
        move |source| SweepError::Io { path, source }
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), SweepError> {
        let path = self.out.join(name);
        write_atomic(&path, bytes).map_err(Self::io_err(path))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), SweepError> {
        let path = self.out.join(name);
        analysis::write_json(&path, value).map_err(Self::io_err(path))
    }

    fn flush_csv(&self) -> Result<(), SweepError> {
        let path = self.out.join("sweep.csv");
        let rows: Vec<SweepRecord> = self.rows.values().cloned().collect();
        write_sweep_csv(&path, &rows).map_err(Self::io_err(path))
    }

    /// Runs the jobs not already cached, merging results as they arrive.
    fn execute(&mut self, jobs: Vec<Job>) -> Result<(), SweepError> {
        let mut pending = Vec::new();
        for job in jobs {
            let fp = self.config.fingerprint(job.task);
            let cached = if self.force {
                None
            } else {
                self.cache.load::<JobOutput>(job.task, job.n_spins, job.omega_over_kappa, &fp)
            };
            match cached {
                Some(out) => {
                    self.outcome.jobs_cached += 1;
                    self.merge(job, Ok(out))?;
                }
                None => pending.push(job),
            }
        }
        self.flush_csv()?;
        let config = self.config;
        let mut result = Ok(());
        run_pool(
            pending,
            config.workers,
            |job| run_job(config, job).map_err(|e| e.to_string()),
            |_, job, r| {
                if result.is_err() {
                    return;
                }
                self.outcome.jobs_computed += 1;
                if let Ok(out) = &r {
                    let fp = config.fingerprint(job.task);
                    // a cache write failure only costs a recomputation later
                    let _ = self.cache.store(job.task, job.n_spins, job.omega_over_kappa, &fp, out);
                }
                result = self.merge(job, r).and_then(|_| self.flush_csv());
            },
        );
        result
    }

    fn merge(&mut self, job: Job, result: Result<JobOutput, String>) -> Result<(), SweepError> {
        let (n, w) = (job.n_spins, job.omega_over_kappa);
        let out = match result {
            Ok(out) => out,
            Err(message) => {
                if job.task != Task::Bound {
                    let row = self.rows.entry(row_key(n, w)).or_insert_with(|| SweepRecord::new(n, w));
                    row.failures.push(TaskFailure {
                        task: job.task.name().into(),
                        message: message.clone(),
                    });
                }
                self.outcome.failures.push(Failure {
                    task: job.task,
                    n_spins: Some(n),
                    omega_over_kappa: Some(w),
                    message,
                });
                return Ok(());
            }
        };
        if let JobOutput::Bound { rows } = out {
            self.outcome.bound_rows.extend(rows);
            return Ok(());
        }
        let wants_qfi = self.config.wants(Task::Qfi);
        let row = self.rows.entry(row_key(n, w)).or_insert_with(|| SweepRecord::new(n, w));
        match out {
            JobOutput::Magnetization { sz_per_n } => row.sz_ss_per_n = Some(sz_per_n),
            JobOutput::Qfi { result } => row.qfi = Some(result.value),
            JobOutput::Cfi { setting, result, qfi } => {
                row.cfi_max = Some(result.value);
                row.theta_opt = Some(setting.theta);
                row.phi_opt = Some(setting.phi);
                if wants_qfi && row.qfi.is_none() {
                    row.qfi = Some(qfi.value);
                }
            }
            JobOutput::Spectrum {
                eigenvalues,
                e2,
                method,
                max_residual,
            } => {
                row.e2_abs = Some(e2[0].abs());
                let note = match max_residual {
                    Some(r) => format!("spectrum: {method:?}, residual {r:.2e}"),
                    None => format!("spectrum: {method:?}"),
                };
                row.diagnostics.push(note);
                self.write_json(&format!("spectrum_N{n}_w{}.json", omega_label(w)), &eigenvalues)?;
                self.outcome.spectra.push(SpectrumResult {
                    n_spins: n,
                    omega_over_kappa: w,
                    eigenvalues,
                    e2,
                });
            }
            JobOutput::Trajectory {
                times,
                sz_per_n,
                sz_steady_per_n,
                envelope_rate,
            } => {
                let mut csv = String::from("t,sz_per_n\n");
                for (t, s) in times.iter().zip(&sz_per_n) {
                    csv.push_str(&format!("{},{}\n", format_number(*t), format_number(*s)));
                }
                self.write(&format!("trajectory_N{n}_w{}.csv", omega_label(w)), csv.as_bytes())?;
                self.outcome.trajectories.push(TrajectoryResult {
                    n_spins: n,
                    omega_over_kappa: w,
                    times,
                    sz_per_n,
                    sz_steady_per_n,
                    envelope_rate,
                });
            }
            JobOutput::Bound { .. } => unreachable!("handled above"),
        }
        Ok(())
    }

    fn fail(&mut self, task: Task, n: Option<usize>, message: String) {
        self.outcome.failures.push(Failure {
            task,
            n_spins: n,
            omega_over_kappa: None,
            message,
        });
    }

    fn point_jobs(n_list: &[usize], omegas: &[f64], tasks: &[Task]) -> Vec<Job> {
        let mut jobs = Vec::new();
        for &n in n_list {
            for &w in omegas {
                for &task in tasks {
                    jobs.push(Job {
                        n_spins: n,
                        omega_over_kappa: w,
                        task,
                    });
                }
            }
        }
        jobs
    }

    fn run(mut self) -> Result<SweepOutcome, SweepError> {
        let c = self.config;
        let sizes = c.sizes();
        let grid = c.omegas();
        let cfi_on_grid = c.wants(Task::Cfi) && !c.cfi.at_peak_only;
        let need_peaks = c.wants(Task::Fits)
            || (c.wants(Task::Cfi) && c.cfi.at_peak_only)
            || (c.wants(Task::Bound) && c.bound.omega.is_none())
            || (c.wants(Task::Qfi) && grid.len() >= 3);
        let qfi_on_grid = c.wants(Task::Qfi) || need_peaks;

        // stage 1: the grid
        let mut tasks: Vec<Task> = Vec::new();
        for t in [Task::Magnetization, Task::Spectrum, Task::Trajectory] {
            if c.wants(t) {
                tasks.push(t);
            }
        }
        if qfi_on_grid {
            tasks.push(Task::Qfi);
        }
        if cfi_on_grid {
            tasks.push(Task::Cfi);
        }
        self.execute(Self::point_jobs(&sizes, &grid, &tasks))?;
        let grid_rows: Vec<SweepRecord> = self.rows.values().cloned().collect();

        // stage 2: refine around each coarse QFI peak
        if qfi_on_grid && c.refine_points >= 3 {
            let mut jobs = Vec::new();
            for (n, samples) in analysis::qfi_by_size(&grid_rows) {
                let Ok(peak) = analysis::peak_of(samples.clone()) else { continue };
                if peak.at_boundary {
                    continue;
                }
                let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
                let half = local_spacing(&xs, peak.x_max);
                let m = c.refine_points;
                for i in 0..m {
                    let w = peak.x_max - half + 2.0 * half * i as f64 / (m - 1) as f64;
                    if w >= 0.0 && !self.rows.contains_key(&row_key(n, w)) {
                        jobs.push(Job {
                            n_spins: n,
                            omega_over_kappa: w,
                            task: Task::Qfi,
                        });
                    }
                }
            }
            self.execute(jobs)?;
        }

        // stage 3: rows at each refined peak
        if need_peaks {
            let all: Vec<SweepRecord> = self.rows.values().cloned().collect();
            let mut located = Vec::new();
            for &n in &sizes {
                let samples = analysis::qfi_by_size(all.iter().filter(|r| r.n_spins == n)).remove(&n).unwrap_or_default();
                match analysis::peak_of(samples) {
                    Ok(p) => located.push((n, p)),
                    Err(e) => self.fail(Task::Qfi, Some(n), format!("no QFI peak: {e}")),
                }
            }
            let mut jobs = Vec::new();
            for &(n, p) in &located {
                let mut at = |task| {
                    jobs.push(Job {
                        n_spins: n,
                        omega_over_kappa: p.x_max,
                        task,
                    })
                };
                at(Task::Qfi);
                if c.wants(Task::Cfi) {
                    at(Task::Cfi);
                }
                if c.wants(Task::Fits) || c.wants(Task::Bound) || c.wants(Task::Spectrum) {
                    at(Task::Spectrum);
                }
            }
            self.execute(jobs)?;
            for (n, p) in located {
                let row = self.rows.get(&row_key(n, p.x_max));
                let get = |f: fn(&SweepRecord) -> Option<f64>| row.and_then(f);
                self.outcome.peaks.push(PeakRow {
                    n_spins: n,
                    omega_max: p.x_max,
                    qfi_max: get(|r| r.qfi).unwrap_or(p.y_max),
                    at_boundary: p.at_boundary,
                    cfi_max: get(|r| r.cfi_max),
                    theta_opt: get(|r| r.theta_opt),
                    phi_opt: get(|r| r.phi_opt),
                    e2_abs: get(|r| r.e2_abs),
                });
            }
            let path = self.out.join("peaks.csv");
            analysis::write_peaks_csv(&path, &self.outcome.peaks).map_err(Self::io_err(path))?;
        }

        // stage 4: aggregates
        if c.wants(Task::Bound) {
            let targets: Vec<(usize, f64)> = match c.bound.omega {
                Some(w) => sizes.iter().map(|&n| (n, w)).collect(),
                None => self.outcome.peaks.iter().map(|p| (p.n_spins, p.omega_max)).collect(),
            };
            let jobs = targets
                .into_iter()
                .filter(|&(n, _)| n <= c.bound.n_max)
                .map(|(n, w)| Job {
                    n_spins: n,
                    omega_over_kappa: w,
                    task: Task::Bound,
                })
                .collect();
            self.execute(jobs)?;
            self.outcome
                .bound_rows
                .sort_by(|a, b| (a.n_spins, a.time_over_tau).partial_cmp(&(b.n_spins, b.time_over_tau)).expect("finite"));
            let path = self.out.join("bound_check.csv");
            analysis::write_bound_csv(&path, &self.outcome.bound_rows).map_err(Self::io_err(path))?;
        }

        if c.wants(Task::Fits) {
            for (observable, fit) in analysis::peak_fits(&self.outcome.peaks, c.fits.decay_min_n) {
                match fit {
                    Ok(f) => {
                        self.write_json(&format!("fit_{}.json", f.file_stem()), &f)?;
                        self.outcome.fits.push(f);
                    }
                    Err(e) => self.fail(Task::Fits, None, format!("{observable}: {e}")),
                }
            }
        }

        if c.wants(Task::Collapse) {
            let mut kinds = Vec::new();
            if c.wants(Task::Magnetization) {
                kinds.push((ObservableKind::Magnetization, &c.collapse.magnetization));
            }
            if qfi_on_grid {
                kinds.push((ObservableKind::Qfi, &c.collapse.qfi));
            }
            let grid_keys: BTreeSet<u64> = grid.iter().map(|w| w.to_bits()).collect();
            let on_grid: Vec<&SweepRecord> =
                self.rows.values().filter(|r| grid_keys.contains(&r.omega_over_kappa.to_bits())).collect();
            let results: Vec<_> = thread::scope(|s| {
                let handles: Vec<_> = kinds
                    .iter()
                    .map(|&(kind, spec)| {
                        let rows = &on_grid;
                        s.spawn(move || (kind, analysis::collapse(rows.iter().copied(), kind, spec)))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("collapse thread")).collect()
            });
            for (kind, r) in results {
                match r {
                    Ok(fit) => {
                        self.write_json(&format!("collapse_{}.json", kind.name()), &fit)?;
                        self.outcome.collapses.push(fit);
                    }
                    Err(e) => self.fail(Task::Collapse, None, format!("{}: {e}", kind.name())),
                }
            }
            if let Some(q) = self.outcome.collapse(ObservableKind::Qfi).cloned() {
                match analysis::consistency(&self.outcome.fits, &q) {
                    Some(Ok(report)) => {
                        self.write_json("consistency.json", &report)?;
                        self.outcome.consistency = Some(report);
                    }
                    Some(Err(e)) => self.fail(Task::Collapse, None, format!("consistency: {e}")),
                    None => {}
                }
            }
        }

        self.write_json("failures.json", &self.outcome.failures)?;
        self.flush_csv()?;
        let mut outcome = self.outcome;
        outcome.records = self.rows.into_values().collect();
        Ok(outcome)
    }
}

/// Half-width of the refinement interval: the grid spacing next to `x`.
fn local_spacing(xs: &[f64], x: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let i = sorted.partition_point(|&v| v < x).clamp(1, sorted.len() - 1);
    sorted[i] - sorted[i - 1]
}

/// Validates `config`, computes every requested quantity and writes the
/// result files into `config.out_dir`. Cached per-job results are reused
/// unless `force` is set.
pub fn run_sweep(config: &SweepConfig, force: bool) -> Result<SweepOutcome, SweepError> {
    config.validate()?;
    config.prepare_out_dir()?;
    let cache_root = config.cache_dir.clone().unwrap_or_else(|| config.out_dir.join("cache"));
    Driver {
        config,
        force,
        cache: ResultCache::new(cache_root),
        out: config.out_dir.clone(),
        rows: BTreeMap::new(),
        outcome: SweepOutcome::default(),
    }
    .run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_next_to_peak() {
        let xs = [0.0, 0.1, 0.2, 0.4];
        assert!((local_spacing(&xs, 0.15) - 0.1).abs() < 1e-15);
        assert!((local_spacing(&xs, 0.3) - 0.2).abs() < 1e-15);
        assert!((local_spacing(&xs, 0.0) - 0.1).abs() < 1e-15);
    }
}
