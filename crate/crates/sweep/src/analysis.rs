//! Aggregate fits over sweep rows: collapses, peak power laws, bound checks.

use std::collections::BTreeMap;
use std::path::Path;

use btc_core::scaling::{
    check_exponent_consistency, find_peak, fit_collapse, fit_power_law, CollapseFit, ConsistencyReport, ObservableKind,
    Peak, PowerLawFit, PowerLawModel, ScalingDataset, ScalingError,
};
use serde::{Deserialize, Serialize};

use crate::config::CollapseSpec;
use crate::jobs::BoundRow;
use crate::record::{format_number, write_atomic, SweepRecord};

/// The QFI maximum over `ω` at one size and what was measured there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub n_spins: usize,
    pub omega_max: f64,
    pub qfi_max: f64,
    pub at_boundary: bool,
    pub cfi_max: Option<f64>,
    pub theta_opt: Option<f64>,
    pub phi_opt: Option<f64>,
    pub e2_abs: Option<f64>,
}

/// A power-law fit with the data it was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    /// What `y` is, e.g. `qfi_max`.
    pub observable: String,
    pub fit: PowerLawFit,
    /// `(N, y)` pairs.
    pub points: Vec<(usize, f64)>,
}

impl NamedFit {
    /// Stem of the output file, `fit_<stem>.json`.
    pub fn file_stem(&self) -> String {
        match self.observable.as_str() {
            "cfi_max" => format!("cfi-{}", self.fit.model.name()),
            _ => self.fit.model.name().to_string(),
        }
    }
}

/// Peak of `y(ω)` for one size from `(ω, y)` samples in any order.
pub fn peak_of(mut samples: Vec<(f64, f64)>) -> Result<Peak, ScalingError> {
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    samples.dedup_by(|a, b| a.0 == b.0);
    let (x, y): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    find_peak(&x, &y)
}

/// QFI samples per size.
pub fn qfi_by_size<'a>(records: impl IntoIterator<Item = &'a SweepRecord>) -> BTreeMap<usize, Vec<(f64, f64)>> {
    let mut by_n: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        if let Some(q) = r.qfi {
            by_n.entry(r.n_spins).or_default().push((r.omega_over_kappa, q));
        }
    }
    by_n
}

/// Collapse dataset from sweep rows inside the spec's window and size cut.
pub fn collapse_dataset<'a>(
    records: impl IntoIterator<Item = &'a SweepRecord>,
    kind: ObservableKind,
    spec: &CollapseSpec,
) -> Result<ScalingDataset, ScalingError> {
    let points = records
        .into_iter()
        .filter(|r| r.n_spins >= spec.min_n && r.omega_over_kappa >= spec.window[0] && r.omega_over_kappa <= spec.window[1])
        .filter_map(|r| {
            let y = match kind {
                // extensive magnetization |⟨Ŝz⟩|
                ObservableKind::Magnetization => r.sz_ss_per_n.map(|s| s.abs() * r.n_spins as f64),
                ObservableKind::Qfi => r.qfi,
            }?;
            Some((r.n_spins, r.omega_over_kappa, y))
        })
        .collect::<Vec<_>>();
    ScalingDataset::with_relative_error(points, spec.rel_error, kind)
}

pub fn collapse<'a>(
    records: impl IntoIterator<Item = &'a SweepRecord>,
    kind: ObservableKind,
    spec: &CollapseSpec,
) -> Result<CollapseFit, ScalingError> {
    let ds = collapse_dataset(records, kind, spec)?;
    fit_collapse(&ds, spec.guess, spec.bounds)
}

fn named(observable: &str, points: Vec<(usize, f64)>, model: PowerLawModel) -> Result<NamedFit, ScalingError> {
    let (ns, ys): (Vec<usize>, Vec<f64>) = points.iter().copied().unzip();
    Ok(NamedFit {
        observable: observable.to_string(),
        fit: fit_power_law(&ns, &ys, model)?,
        points,
    })
}

/// Fits over peak rows, each with its own outcome:
/// `F_Q^max = a·N^b`, `ω_max/κ = 1 − N^{−c}`, `|Re E₂| = a′N^{−b′} + c′`
/// (for `N ≥ decay_min_n`) and `F_C^max = a·N^b`.
pub fn peak_fits(peaks: &[PeakRow], decay_min_n: usize) -> Vec<(String, Result<NamedFit, ScalingError>)> {
    let interior: Vec<&PeakRow> = peaks.iter().filter(|p| !p.at_boundary).collect();
    let mut out = vec![
        (
            "qfi_max".to_string(),
            named("qfi_max", interior.iter().map(|p| (p.n_spins, p.qfi_max)).collect(), PowerLawModel::Power),
        ),
        (
            "omega_max".to_string(),
            named(
                "omega_max",
                interior.iter().map(|p| (p.n_spins, p.omega_max)).collect(),
                PowerLawModel::Saturating { kappa: 1.0 },
            ),
        ),
    ];
    let decay: Vec<(usize, f64)> = interior
        .iter()
        .filter(|p| p.n_spins >= decay_min_n)
        .filter_map(|p| Some((p.n_spins, p.e2_abs?)))
        .collect();
    if !decay.is_empty() {
        out.push(("e2_abs".to_string(), named("e2_abs", decay, PowerLawModel::OffsetPower)));
    }
    let cfi: Vec<(usize, f64)> = interior.iter().filter_map(|p| Some((p.n_spins, p.cfi_max?))).collect();
    if !cfi.is_empty() {
        out.push(("cfi_max".to_string(), named("cfi_max", cfi, PowerLawModel::Power)));
    }
    out
}

pub fn consistency(fits: &[NamedFit], qfi_collapse: &CollapseFit) -> Option<Result<ConsistencyReport, ScalingError>> {
    let b = fits.iter().find(|f| f.observable == "qfi_max")?;
    Some(check_exponent_consistency(&b.fit, qfi_collapse))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn opt(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

pub fn write_peaks_csv(path: &Path, peaks: &[PeakRow]) -> std::io::Result<()> {
    let header = ["n", "omega_max", "qfi_max", "at_boundary", "cfi_max", "theta_opt", "phi_opt", "e2_abs"];
    let rows = peaks.iter().map(|p| {
        vec![
            p.n_spins.to_string(),
            format_number(p.omega_max),
            format_number(p.qfi_max),
            p.at_boundary.to_string(),
            opt(p.cfi_max),
            opt(p.theta_opt),
            opt(p.phi_opt),
            opt(p.e2_abs),
        ]
    });
    write_atomic(path, &csv_bytes(&header, rows))
}

pub fn write_bound_csv(path: &Path, rows: &[BoundRow]) -> std::io::Result<()> {
    let header = [
        "n",
        "omega_over_kappa",
        "t",
        "t_over_tau",
        "qfi_t",
        "qfi_over_t",
        "bound",
        "satisfied",
        "qfi_steady",
        "rel_diff",
    ];
    let rows = rows.iter().map(|r| {
        vec![
            r.n_spins.to_string(),
            format_number(r.omega_over_kappa),
            format_number(r.time),
            format_number(r.time_over_tau),
            format_number(r.qfi_t),
            format_number(r.rate),
            format_number(r.bound),
            r.satisfied.to_string(),
            format_number(r.qfi_steady),
            format_number(r.rel_diff),
        ]
    });
    write_atomic(path, &csv_bytes(&header, rows))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
