//! Finite-size scaling collapse, peak location and power-law fits.

use std::collections::{BTreeMap, BTreeSet};

use faer::prelude::*;
use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("dataset is empty")]
    Empty,
    #[error("duplicate record for N = {n}, x = {x}")]
    Duplicate { n: usize, x: f64 },
    #[error("record for N = {n}, x = {x} is not finite")]
    NonFinite { n: usize, x: f64 },
    #[error("need at least {needed} system sizes, got {got}")]
    TooFewSizes { needed: usize, got: usize },
    #[error("scaled curves do not overlap: no point has foreign neighbours on both sides")]
    InsufficientOverlap,
    #[error("ν must be positive (got {0})")]
    BadNu(f64),
    #[error("no centre supplied for N = {0}")]
    MissingCentre(usize),
    #[error("bounds are empty or do not contain the initial guess")]
    BadBounds,
    #[error("simplex search did not converge in {0} iterations")]
    NotConverged(usize),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("x grid must be strictly increasing and match y in length")]
    BadGrid,
    #[error("log-log fit needs positive N and y (offending value {0})")]
    NonPositive(f64),
    #[error("design matrix is singular")]
    Singular,
    #[error("power-law fit is not of the a·N^b form")]
    WrongModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservableKind {
    /// `|⟨Ŝz⟩_SS|`, scaled as `y·N^{β/ν−1}`.
    Magnetization,
    /// `F_Q`, scaled as `y·N^{−η/ν}`.
    Qfi,
}

impl ObservableKind {
    pub fn name(self) -> &'static str {
        match self {
            ObservableKind::Magnetization => "magnetization",
            ObservableKind::Qfi => "qfi",
        }
    }

    /// Exponent `e` of the vertical rescaling `v = y·N^e`.
    fn vertical_exponent(self, nu: f64, shape: f64) -> f64 {
        match self {
            ObservableKind::Magnetization => shape / nu - 1.0,
            ObservableKind::Qfi => -shape / nu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub n_spins: usize,
    pub x: f64,
    pub y: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingDataset {
    records: Vec<ScalingRecord>,
    kind: ObservableKind,
}

impl ScalingDataset {
    /// Validates the records and raises every `dy` to at least
    /// `1e−9·max|y|`.
    pub fn new(mut records: Vec<ScalingRecord>, kind: ObservableKind) -> Result<Self, ScalingError> {
        if records.is_empty() {
            return Err(ScalingError::Empty);
        }
        let mut seen = BTreeSet::new();
        for r in &records {
            if !r.x.is_finite() || !r.y.is_finite() || !r.dy.is_finite() {
                return Err(ScalingError::NonFinite { n: r.n_spins, x: r.x });
            }
            if !seen.insert((r.n_spins, r.x.to_bits())) {
                return Err(ScalingError::Duplicate { n: r.n_spins, x: r.x });
            }
        }
        let floor = 1e-9 * records.iter().map(|r| r.y.abs()).fold(0.0, f64::max);
        for r in records.iter_mut() {
            r.dy = r.dy.max(floor);
            if !(r.dy > 0.0) {
                r.dy = f64::MIN_POSITIVE;
            }
        }
        Ok(Self { records, kind })
    }

    /// Records with `dy = rel·|y|` (floored as in [`Self::new`]).
    pub fn with_relative_error(
        points: impl IntoIterator<Item = (usize, f64, f64)>,
        rel: f64,
        kind: ObservableKind,
    ) -> Result<Self, ScalingError> {
        let records = points
            .into_iter()
            .map(|(n_spins, x, y)| ScalingRecord {
                n_spins,
                x,
                y,
                dy: rel * y.abs(),
            })
            .collect();
        Self::new(records, kind)
    }

    pub fn records(&self) -> &[ScalingRecord] {
        &self.records
    }

    pub fn kind(&self) -> ObservableKind {
        self.kind
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| r.n_spins)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Keeps records with `lo ≤ x ≤ hi`.
    pub fn window(&self, lo: f64, hi: f64) -> Result<Self, ScalingError> {
        let records = self.records.iter().copied().filter(|r| r.x >= lo && r.x <= hi).collect();
        Self::new(records, self.kind)
    }
}

/// Where the horizontal axis is centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// A common critical point `ω_c`, a fit parameter.
    Critical,
    /// A fixed centre per size, e.g. the finite-size peak `ω_max(N)`.
    PerSize(BTreeMap<usize, f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledPoint {
    pub n_spins: usize,
    pub u: f64,
    pub v: f64,
    pub dv: f64,
}

/// `u = N^{1/ν}(x − ω_c)`, `v = y·N^e`, `dv = dy·N^e`.
pub fn scale_dataset(
    dataset: &ScalingDataset,
    omega_c: f64,
    nu: f64,
    shape_exponent: f64,
) -> Result<Vec<ScaledPoint>, ScalingError> {
    scale_with(dataset, &Centering::Critical, omega_c, nu, shape_exponent)
}

pub fn scale_with(
    dataset: &ScalingDataset,
    centering: &Centering,
    omega_c: f64,
    nu: f64,
    shape_exponent: f64,
) -> Result<Vec<ScaledPoint>, ScalingError> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(ScalingError::BadNu(nu));
    }
    let e = dataset.kind.vertical_exponent(nu, shape_exponent);
    dataset
        .records
        .iter()
        .map(|r| {
            let centre = match centering {
                Centering::Critical => omega_c,
                Centering::PerSize(map) => *map.get(&r.n_spins).ok_or(ScalingError::MissingCentre(r.n_spins))?,
            };
            let n = r.n_spins as f64;
            let f = n.powf(e);
            Ok(ScaledPoint {
                n_spins: r.n_spins,
                u: n.powf(1.0 / nu) * (r.x - centre),
                v: r.y * f,
                dv: r.dy * f,
            })
        })
        .collect()
}

/// Inverse of [`scale_dataset`].
pub fn unscale(
    points: &[ScaledPoint],
    kind: ObservableKind,
    omega_c: f64,
    nu: f64,
    shape_exponent: f64,
) -> Result<Vec<ScalingRecord>, ScalingError> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(ScalingError::BadNu(nu));
    }
    let e = kind.vertical_exponent(nu, shape_exponent);
    Ok(points
        .iter()
        .map(|p| {
            let n = p.n_spins as f64;
            let f = n.powf(-e);
            ScalingRecord {
                n_spins: p.n_spins,
                x: p.u / n.powf(1.0 / nu) + omega_c,
                y: p.v * f,
                dy: p.dv * f,
            }
        })
        .collect())
}

/// Foreign-size points used to predict each point.
pub const COLLAPSE_WINDOW: usize = 6;

/// Reduced chi-square of cross-size predictions.
///
/// Each point is predicted by a weighted straight line through the
/// `COLLAPSE_WINDOW` nearest points (in `u`) from other sizes, provided
/// they lie on both sides of it; points without such neighbours are
/// skipped. The statistic is `Σ (v − Y)²/(dv² + dY²)` over predicted points
/// divided by their count, so a collapse within errors scores about 1.
pub fn collapse_quality(points: &[ScaledPoint]) -> Result<f64, ScalingError> {
    let sizes: BTreeSet<usize> = points.iter().map(|p| p.n_spins).collect();
    if sizes.len() < 3 {
        return Err(ScalingError::TooFewSizes {
            needed: 3,
            got: sizes.len(),
        });
    }
    // canonical order makes the result independent of input order
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| {
        a.u.total_cmp(&b.u)
            .then(a.n_spins.cmp(&b.n_spins))
            .then(a.v.total_cmp(&b.v))
            .then(a.dv.total_cmp(&b.dv))
    });
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, p) in pts.iter().enumerate() {
        // walk outward from i in u, collecting foreign points
        let mut lo = i as isize - 1;
        let mut hi = i + 1;
        let mut window: Vec<&ScaledPoint> = Vec::with_capacity(COLLAPSE_WINDOW);
        while window.len() < COLLAPSE_WINDOW && (lo >= 0 || hi < pts.len()) {
            let left = (lo >= 0).then(|| &pts[lo as usize]);
            let right = (hi < pts.len()).then(|| &pts[hi]);
            let take_left = match (left, right) {
                (Some(l), Some(r)) => (p.u - l.u) <= (r.u - p.u),
                (Some(_), None) => true,
                _ => false,
            };
            let q = if take_left {
                lo -= 1;
                left.expect("checked")
            } else {
                hi += 1;
                right.expect("checked")
            };
            if q.n_spins != p.n_spins {
                window.push(q);
            }
        }
        let below = window.iter().any(|q| q.u < p.u);
        let above = window.iter().any(|q| q.u > p.u);
        if !below || !above || window.len() < 2 {
            continue;
        }
        let Some((y, dy2)) = weighted_line_prediction(&window, p.u) else {
            continue;
        };
        sum += (p.v - y).powi(2) / (p.dv * p.dv + dy2);
        count += 1;
    }
    if count == 0 {
        return Err(ScalingError::InsufficientOverlap);
    }
    Ok(sum / count as f64)
}

/// Value and variance at `u0` of the weighted least-squares line.
fn weighted_line_prediction(window: &[&ScaledPoint], u0: f64) -> Option<(f64, f64)> {
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for q in window {
        let w = 1.0 / (q.dv * q.dv);
        let x = q.u - u0;
        s += w;
        sx += w * x;
        sy += w * q.v;
        sxx += w * x * x;
        sxy += w * x * q.v;
    }
    let det = s * sxx - sx * sx;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    // intercept at x = 0, i.e. at u0
    let intercept = (sxx * sy - sx * sxy) / det;
    let var = sxx / det;
    Some((intercept, var))
}

/// Parameters `(ω_c, ν, shape)` in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseParams {
    pub omega_c: f64,
    pub nu: f64,
    pub shape_exponent: f64,
}

impl CollapseParams {
    fn to_array(self) -> [f64; 3] {
        [self.omega_c, self.nu, self.shape_exponent]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            omega_c: a[0],
            nu: a[1],
            shape_exponent: a[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseBounds {
    pub lower: CollapseParams,
    pub upper: CollapseParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    pub centering: Centering,
    pub max_iterations: usize,
    /// Spread of quality values across the simplex at convergence.
    pub tolerance: f64,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        Self {
            centering: Centering::Critical,
            max_iterations: 2000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseFit {
    pub kind: ObservableKind,
    pub omega_c: f64,
    pub nu: f64,
    /// `β` for magnetization, `η` for QFI.
    pub shape_exponent: f64,
    pub quality: f64,
    /// Half-widths of the `quality + 1` interval, in parameter order.
    pub uncertainties: CollapseParams,
    /// Parameters that ended within 1e−6 of the bound range of a bound.
    pub pinned: [bool; 3],
    pub iterations: usize,
    pub centering: Centering,
    pub sizes: Vec<usize>,
}

struct Objective<'a> {
    dataset: &'a ScalingDataset,
    centering: &'a Centering,
    lower: [f64; 3],
    upper: [f64; 3],
    free: [bool; 3],
    origin: [f64; 3],
}

impl Objective<'_> {
    fn clamp(&self, mut p: [f64; 3]) -> [f64; 3] {
        for k in 0..3 {
            p[k] = if self.free[k] {
                p[k].clamp(self.lower[k], self.upper[k])
            } else {
                self.origin[k]
            };
        }
        p
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        let p = self.clamp(p);
        scale_with(self.dataset, self.centering, p[0], p[1], p[2])
            .and_then(|pts| collapse_quality(&pts))
            .unwrap_or(f64::INFINITY)
    }
}

/// Nelder–Mead on the free coordinates with standard coefficients.
/// Returns the best point, its value and the iteration count.
fn nelder_mead(obj: &Objective, start: [f64; 3], max_iter: usize, tol: f64) -> Result<([f64; 3], f64, usize), ScalingError> {
    let free: Vec<usize> = (0..3).filter(|&k| obj.free[k]).collect();
    let dim = free.len();
    let mut simplex: Vec<[f64; 3]> = vec![start];
    for &k in &free {
        let mut p = start;
        let range = obj.upper[k] - obj.lower[k];
        let step = (0.1 * start[k].abs()).max(0.05 * range).min(0.25 * range);
        p[k] = if p[k] + step <= obj.upper[k] { p[k] + step } else { p[k] - step };
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|&p| obj.eval(p)).collect();
    let mut iter = 0;
    loop {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i]).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = values[dim] - values[0];
        if spread.is_finite() && spread <= tol {
            return Ok((obj.clamp(simplex[0]), values[0], iter));
        }
        if iter >= max_iter {
            return Err(ScalingError::NotConverged(max_iter));
        }
        iter += 1;

        let mut centroid = [0.0; 3];
        for p in &simplex[..dim] {
            for k in 0..3 {
                centroid[k] += p[k] / dim as f64;
            }
        }
        let along = |t: f64| -> [f64; 3] {
            let mut q = [0.0; 3];
            for k in 0..3 {
                q[k] = centroid[k] + t * (simplex[dim][k] - centroid[k]);
            }
            obj.clamp(q)
        };
        let xr = along(-1.0);
        let fr = obj.eval(xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = obj.eval(xe);
            if fe < fr {
                simplex[dim] = xe;
                values[dim] = fe;
            } else {
                simplex[dim] = xr;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = xr;
            values[dim] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[dim] {
            let x = along(-0.5);
            (x, obj.eval(x))
        } else {
            let x = along(0.5);
            (x, obj.eval(x))
        };
        if fc < values[dim].min(fr) {
            simplex[dim] = xc;
            values[dim] = fc;
            continue;
        }
        // shrink towards the best vertex
        for i in 1..=dim {
            let mut q = simplex[i];
            for k in 0..3 {
                q[k] = simplex[0][k] + 0.5 * (q[k] - simplex[0][k]);
            }
            simplex[i] = obj.clamp(q);
            values[i] = obj.eval(simplex[i]);
        }
    }
}

/// Distance along coordinate `k`, in direction `sign`, at which the quality
/// first exceeds `target`; the distance to the bound if it never does.
fn crossing(obj: &Objective, best: [f64; 3], k: usize, sign: f64, target: f64) -> f64 {
    let limit = if sign > 0.0 { obj.upper[k] - best[k] } else { best[k] - obj.lower[k] };
    if limit <= 0.0 {
        return 0.0;
    }
    let at = |d: f64| {
        let mut p = best;
        p[k] += sign * d;
        obj.eval(p)
    };
    let mut lo = 0.0;
    let mut hi = (1e-4 * (obj.upper[k] - obj.lower[k])).min(limit);
    while at(hi) < target {
        lo = hi;
        if hi >= limit {
            return limit;
        }
        hi = (2.0 * hi).min(limit);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimizes [`collapse_quality`] over `(ω_c, ν, shape)` inside `bounds`.
pub fn fit_collapse(
    dataset: &ScalingDataset,
    initial_guess: CollapseParams,
    bounds: CollapseBounds,
) -> Result<CollapseFit, ScalingError> {
    fit_collapse_with(dataset, initial_guess, bounds, &CollapseOptions::default())
}

pub fn fit_collapse_with(
    dataset: &ScalingDataset,
    initial_guess: CollapseParams,
    bounds: CollapseBounds,
    opts: &CollapseOptions,
) -> Result<CollapseFit, ScalingError> {
    let sizes = dataset.sizes();
    if sizes.len() < 4 {
        return Err(ScalingError::TooFewSizes {
            needed: 4,
            got: sizes.len(),
        });
    }
    let lower = bounds.lower.to_array();
    let upper = bounds.upper.to_array();
    let start = initial_guess.to_array();
    let per_size = matches!(opts.centering, Centering::PerSize(_));
    let free = [!per_size, true, true];
    for k in 0..3 {
        if !(lower[k] <= start[k] && start[k] <= upper[k]) || (free[k] && !(lower[k] < upper[k])) {
            return Err(ScalingError::BadBounds);
        }
    }
    if !(lower[1] > 0.0) {
        return Err(ScalingError::BadNu(lower[1]));
    }
    let obj = Objective {
        dataset,
        centering: &opts.centering,
        lower,
        upper,
        free,
        origin: start,
    };
    if !obj.eval(start).is_finite() {
        // surface the underlying reason
        let pts = scale_with(dataset, &opts.centering, start[0], start[1], start[2])?;
        collapse_quality(&pts)?;
    }
    let (first, _, it1) = nelder_mead(&obj, start, opts.max_iterations, opts.tolerance)?;
    // one restart guards against a collapsed simplex
    let (best, quality, it2) = nelder_mead(&obj, first, opts.max_iterations, opts.tolerance)?;

    let mut unc = [0.0; 3];
    let mut pinned = [false; 3];
    for k in 0..3 {
        if !free[k] {
            continue;
        }
        let range = upper[k] - lower[k];
        pinned[k] = best[k] - lower[k] <= 1e-6 * range || upper[k] - best[k] <= 1e-6 * range;
        let up = crossing(&obj, best, k, 1.0, quality + 1.0);
        let down = crossing(&obj, best, k, -1.0, quality + 1.0);
        unc[k] = 0.5 * (up + down);
    }
    Ok(CollapseFit {
        kind: dataset.kind,
        omega_c: best[0],
        nu: best[1],
        shape_exponent: best[2],
        quality,
        uncertainties: CollapseParams::from_array(unc),
        pinned,
        iterations: it1 + it2,
        centering: opts.centering.clone(),
        sizes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub x_max: f64,
    pub y_max: f64,
    /// The largest sample sits at an end of the grid; no refinement done.
    pub at_boundary: bool,
}

/// Maximum of sampled data refined by a parabola through the best sample
/// and its two neighbours.
pub fn find_peak(x: &[f64], y: &[f64]) -> Result<Peak, ScalingError> {
    if x.len() != y.len() || x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ScalingError::BadGrid);
    }
    if x.len() < 3 {
        return Err(ScalingError::TooFewPoints { needed: 3, got: x.len() });
    }
    let i = (0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b });
    if i == 0 || i + 1 == y.len() {
        return Ok(Peak {
            x_max: x[i],
            y_max: y[i],
            at_boundary: true,
        });
    }
    let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
    let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
    // Lagrange form: y = a(x − x1)² + b(x − x1) + y1
    let (h0, h2) = (x0 - x1, x2 - x1);
    let (d0, d2) = (y0 - y1, y2 - y1);
    let det = h0 * h2 * (h0 - h2);
    let a = (d0 * h2 - d2 * h0) / det;
    let b = (d2 * h0 * h0 - d0 * h2 * h2) / det;
    if !(a < 0.0) {
        return Ok(Peak {
            x_max: x1,
            y_max: y1,
            at_boundary: false,
        });
    }
    let dx = (-b / (2.0 * a)).clamp(h0, h2);
    Ok(Peak {
        x_max: x1 + dx,
        y_max: y1 + a * dx * dx + b * dx,
        at_boundary: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum PowerLawModel {
    /// `a·N^b`, fitted linearly in log-log.
    Power,
    /// `κ(1 − N^{−c})` with `κ` fixed.
    Saturating { kappa: f64 },
    /// `a′·N^{−b′} + c′`.
    OffsetPower,
}

impl PowerLawModel {
    pub fn name(&self) -> &'static str {
        match self {
            PowerLawModel::Power => "power",
            PowerLawModel::Saturating { .. } => "saturating",
            PowerLawModel::OffsetPower => "offset-power",
        }
    }

    pub fn eval(&self, params: &[f64], n: f64) -> f64 {
        match self {
            PowerLawModel::Power => params[0] * n.powf(params[1]),
            PowerLawModel::Saturating { kappa } => kappa * (1.0 - n.powf(-params[0])),
            PowerLawModel::OffsetPower => params[0] * n.powf(-params[1]) + params[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub model: PowerLawModel,
    pub parameters: Vec<FitParameter>,
    pub r_squared: f64,
    /// `y − model(N)` at each input point.
    pub residuals: Vec<f64>,
    pub dof: usize,
    pub iterations: usize,
}

impl PowerLawFit {
    pub fn parameter(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let rss: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    if tss == 0.0 {
        return if rss == 0.0 { 1.0 } else { 0.0 };
    }
    (1.0 - rss / tss).clamp(0.0, 1.0)
}

/// `(JᵀJ)⁻¹` when well conditioned.
fn normal_inverse(j: &Mat<f64>) -> Result<Mat<f64>, ScalingError> {
    let jtj = j.transpose() * j;
    let sv = jtj.singular_values().map_err(|_| ScalingError::Singular)?;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-14 * max {
        return Err(ScalingError::Singular);
    }
    Ok(jtj.partial_piv_lu().inverse())
}

fn jacobian(model: &PowerLawModel, p: &[f64], ns: &[f64]) -> Mat<f64> {
    match model {
        PowerLawModel::Power => Mat::from_fn(ns.len(), 2, |i, k| {
            let f = ns[i].powf(p[1]);
            if k == 0 { f } else { p[0] * f * ns[i].ln() }
        }),
        PowerLawModel::Saturating { kappa } => {
            Mat::from_fn(ns.len(), 1, |i, _| kappa * ns[i].powf(-p[0]) * ns[i].ln())
        }
        PowerLawModel::OffsetPower => Mat::from_fn(ns.len(), 3, |i, k| {
            let f = ns[i].powf(-p[1]);
            match k {
                0 => f,
                1 => -p[0] * f * ns[i].ln(),
                _ => 1.0,
            }
        }),
    }
}

/// Levenberg–Marquardt with analytic Jacobians.
fn levenberg_marquardt(model: &PowerLawModel, ns: &[f64], ys: &[f64], mut p: Vec<f64>) -> Result<(Vec<f64>, usize), ScalingError> {
    let rss = |p: &[f64]| -> f64 { ns.iter().zip(ys).map(|(&n, &y)| (y - model.eval(p, n)).powi(2)).sum() };
    let mut cost = rss(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for _ in 0..500 {
        iterations += 1;
        let j = jacobian(model, &p, ns);
        let r = Mat::from_fn(ns.len(), 1, |i, _| ys[i] - model.eval(&p, ns[i]));
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..p.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = a.partial_piv_lu().solve(&jtr);
            let trial: Vec<f64> = (0..p.len()).map(|k| p[k] + step[(k, 0)]).collect();
            let c = rss(&trial);
            if c.is_finite() && c <= cost {
                let rel = (0..p.len())
                    .map(|k| step[(k, 0)].abs() / p[k].abs().max(1e-12))
                    .fold(0.0, f64::max);
                p = trial;
                let done = rel < 1e-14 || cost - c <= 1e-30 * cost.max(1e-300);
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if done {
                    return Ok((p, iterations));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            return Ok((p, iterations));
        }
    }
    Ok((p, iterations))
}

/// Least-squares fit of one of the three size-scaling models.
pub fn fit_power_law(ns: &[usize], ys: &[f64], model: PowerLawModel) -> Result<PowerLawFit, ScalingError> {
    if ns.len() != ys.len() {
        return Err(ScalingError::BadGrid);
    }
    if ns.len() < 4 {
        return Err(ScalingError::TooFewPoints { needed: 4, got: ns.len() });
    }
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    if nf.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(ScalingError::BadGrid);
    }
    match model {
        PowerLawModel::Power => fit_log_log(&nf, ys),
        PowerLawModel::Saturating { kappa } => {
            if nf.iter().any(|&n| n <= 0.0) {
                return Err(ScalingError::NonPositive(0.0));
            }
            // start from a log-log line through the points with y < κ
            let pts: Vec<(f64, f64)> = nf
                .iter()
                .zip(ys)
                .filter(|(_, &y)| y < kappa)
                .map(|(&n, &y)| (n.ln(), (1.0 - y / kappa).ln()))
                .collect();
            let c0 = if pts.len() >= 2 { -line_fit(&pts).1 } else { 1.0 };
            let c0 = if c0.is_finite() && c0 > 0.0 { c0 } else { 1.0 };
            let (p, it) = levenberg_marquardt(&model, &nf, ys, vec![c0])?;
            finish_nonlinear(model, &nf, ys, p, &["c"], it)
        }
        PowerLawModel::OffsetPower => {
            if nf.iter().any(|&n| n <= 0.0) {
                return Err(ScalingError::NonPositive(0.0));
            }
            // profile over b′: for fixed b′ the model is linear in (a′, c′)
            let mut best = (f64::INFINITY, vec![1.0, 1.0, 0.0]);
            for i in 1..=300 {
                let b = 0.01 * i as f64;
                let x: Vec<f64> = nf.iter().map(|n| n.powf(-b)).collect();
                let pts: Vec<(f64, f64)> = x.iter().copied().zip(ys.iter().copied()).collect();
                let (c, a) = line_fit(&pts);
                let rss: f64 = x.iter().zip(ys).map(|(xi, y)| (y - a * xi - c).powi(2)).sum();
                if rss < best.0 {
                    best = (rss, vec![a, b, c]);
                }
            }
            let (p, it) = levenberg_marquardt(&model, &nf, ys, best.1)?;
            finish_nonlinear(model, &nf, ys, p, &["a", "b", "c"], it)
        }
    }
}

/// Intercept and slope of an unweighted line.
fn line_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

fn fit_log_log(ns: &[f64], ys: &[f64]) -> Result<PowerLawFit, ScalingError> {
    if let Some(&bad) = ns.iter().chain(ys).find(|&&v| v <= 0.0) {
        return Err(ScalingError::NonPositive(bad));
    }
    let lx: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let design = Mat::from_fn(ns.len(), 2, |i, k| if k == 0 { 1.0 } else { lx[i] });
    let cov = normal_inverse(&design)?;
    let pts: Vec<(f64, f64)> = lx.iter().copied().zip(ly.iter().copied()).collect();
    let (ln_a, b) = line_fit(&pts);
    let fitted_log: Vec<f64> = lx.iter().map(|x| ln_a + b * x).collect();
    let dof = ns.len() - 2;
    let s2 = ly.iter().zip(&fitted_log).map(|(a, f)| (a - f).powi(2)).sum::<f64>() / dof as f64;
    let a = ln_a.exp();
    let se_ln_a = (s2 * cov[(0, 0)]).sqrt();
    let se_b = (s2 * cov[(1, 1)]).sqrt();
    let model = PowerLawModel::Power;
    Ok(PowerLawFit {
        model,
        parameters: vec![
            FitParameter {
                name: "a".into(),
                value: a,
                stderr: a * se_ln_a,
            },
            FitParameter {
                name: "b".into(),
                value: b,
                stderr: se_b,
            },
        ],
        r_squared: r_squared(&ly, &fitted_log),
        residuals: ns.iter().zip(ys).map(|(&n, &y)| y - model.eval(&[a, b], n)).collect(),
        dof,
        iterations: 1,
    })
}

fn finish_nonlinear(
    model: PowerLawModel,
    ns: &[f64],
    ys: &[f64],
    p: Vec<f64>,
    names: &[&str],
    iterations: usize,
) -> Result<PowerLawFit, ScalingError> {
    let j = jacobian(&model, &p, ns);
    let cov = normal_inverse(&j)?;
    let fitted: Vec<f64> = ns.iter().map(|&n| model.eval(&p, n)).collect();
    let dof = ns.len() - p.len();
    let rss: f64 = ys.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
    let s2 = rss / dof as f64;
    Ok(PowerLawFit {
        model,
        parameters: names
            .iter()
            .enumerate()
            .map(|(k, name)| FitParameter {
                name: (*name).into(),
                value: p[k],
                stderr: (s2 * cov[(k, k)]).max(0.0).sqrt(),
            })
            .collect(),
        r_squared: r_squared(ys, &fitted),
        residuals: ys.iter().zip(&fitted).map(|(a, b)| a - b).collect(),
        dof,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub b: f64,
    pub b_stderr: f64,
    pub eta_over_nu: f64,
    pub eta_over_nu_stderr: f64,
    pub difference: f64,
    pub combined_error: f64,
    pub passed: bool,
}

/// Compares the peak exponent `b` with `η/ν` from a QFI collapse.
pub fn check_exponent_consistency(fit_b: &PowerLawFit, collapse: &CollapseFit) -> Result<ConsistencyReport, ScalingError> {
    if fit_b.model != PowerLawModel::Power {
        return Err(ScalingError::WrongModel);
    }
    let b = fit_b.parameter("b").ok_or(ScalingError::WrongModel)?;
    let (eta, nu) = (collapse.shape_exponent, collapse.nu);
    let (s_eta, s_nu) = (collapse.uncertainties.shape_exponent, collapse.uncertainties.nu);
    let ratio = eta / nu;
    let ratio_err = ((s_eta / nu).powi(2) + (eta * s_nu / (nu * nu)).powi(2)).sqrt();
    let difference = (b.value - ratio).abs();
    let combined_error = (b.stderr.powi(2) + ratio_err.powi(2)).sqrt();
    Ok(ConsistencyReport {
        b: b.value,
        b_stderr: b.stderr,
        eta_over_nu: ratio,
        eta_over_nu_stderr: ratio_err,
        difference,
        combined_error,
        passed: difference <= combined_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plug_in_scaling() {
        let ds = ScalingDataset::new(
            vec![
                ScalingRecord { n_spins: 10, x: 0.3, y: 2.0, dy: 0.1 },
                ScalingRecord { n_spins: 20, x: 0.0, y: 4.0, dy: 0.1 },
            ],
            ObservableKind::Magnetization,
        )
        .unwrap();
        let pts = scale_dataset(&ds, 0.0, 1.0, 0.0).unwrap();
        assert!((pts[0].u - 3.0).abs() < 1e-15 && (pts[0].v - 0.2).abs() < 1e-15);
        assert_eq!(pts[1].u, 0.0);
        assert!(matches!(scale_dataset(&ds, 0.0, 0.0, 0.0), Err(ScalingError::BadNu(_))));
    }

    #[test]
    fn dataset_validation() {
        let r = ScalingRecord { n_spins: 4, x: 0.5, y: 1.0, dy: 0.0 };
        assert!(matches!(
            ScalingDataset::new(vec![r, r], ObservableKind::Qfi),
            Err(ScalingError::Duplicate { .. })
        ));
        let ds = ScalingDataset::new(vec![r], ObservableKind::Qfi).unwrap();
        assert_eq!(ds.records()[0].dy, 1e-9);
    }

    #[test]
    fn single_size_has_no_quality() {
        let pts: Vec<ScaledPoint> = (0..5)
            .map(|i| ScaledPoint { n_spins: 8, u: i as f64, v: 1.0, dv: 0.1 })
            .collect();
        assert!(matches!(collapse_quality(&pts), Err(ScalingError::TooFewSizes { .. })));
    }

    #[test]
    fn peak_of_exact_parabola() {
        let x: Vec<f64> = (0..11).map(|i| 0.1 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - (v - 0.7f64).powi(2)).collect();
        let p = find_peak(&x, &y).unwrap();
        assert!((p.x_max - 0.7).abs() < 1e-12 && (p.y_max - 1.0).abs() < 1e-12);
        assert!(!p.at_boundary);
        let mono: Vec<f64> = x.clone();
        assert!(find_peak(&x, &mono).unwrap().at_boundary);
        assert!(find_peak(&x[..2], &y[..2]).is_err());
    }

    #[test]
    fn exact_power_law() {
        let ns = [4usize, 8, 16, 32, 64];
        let ys: Vec<f64> = ns.iter().map(|&n| 2.0 * (n as f64).powf(1.5)).collect();
        let fit = fit_power_law(&ns, &ys, PowerLawModel::Power).unwrap();
        assert!((fit.parameter("a").unwrap().value - 2.0).abs() < 1e-12);
        assert!((fit.parameter("b").unwrap().value - 1.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let bad = [1.0, -1.0, 2.0, 3.0, 4.0];
        assert!(matches!(fit_power_law(&ns, &bad, PowerLawModel::Power), Err(ScalingError::NonPositive(_))));
        assert!(matches!(
            fit_power_law(&[4, 4, 4, 4], &[1.0; 4], PowerLawModel::Power),
            Err(ScalingError::Singular)
        ));
    }

    #[test]
    fn consistency_report() {
        let fit = |b: f64| PowerLawFit {
            model: PowerLawModel::Power,
            parameters: vec![
                FitParameter { name: "a".into(), value: 1.0, stderr: 0.0 },
                FitParameter { name: "b".into(), value: b, stderr: 0.01 },
            ],
            r_squared: 1.0,
            residuals: vec![],
            dof: 2,
            iterations: 1,
        };
        let collapse = CollapseFit {
            kind: ObservableKind::Qfi,
            omega_c: 1.0,
            nu: 1.5,
            shape_exponent: 3.0,
            quality: 1.0,
            uncertainties: CollapseParams { omega_c: 0.0, nu: 0.01, shape_exponent: 0.01 },
            pinned: [false; 3],
            iterations: 0,
            centering: Centering::Critical,
            sizes: vec![],
        };
        let same = check_exponent_consistency(&fit(2.0), &collapse).unwrap();
        assert_eq!(same.difference, 0.0);
        assert!(same.passed);
        assert!(!check_exponent_consistency(&fit(1.0), &collapse).unwrap().passed);
    }
}
