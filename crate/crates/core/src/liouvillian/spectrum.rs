use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::arnoldi::{shift_invert_eigs, ArnoldiOptions};
use super::{LiouvillianError, Superoperator};
use crate::linalg::LinalgError;

/// Imaginary parts below this are treated as real when pairing modes.
const PAIR_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumMethod {
    /// Dense below `dense_limit`, shift-invert above.
    Auto,
    Dense,
    ShiftInvert,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub method: SpectrumMethod,
    /// Largest vectorized dimension handled densely by `Auto`.
    pub dense_limit: usize,
    /// Real shift in units of κ. Must be nonzero since `L` is singular.
    pub shift: f64,
    /// Relative Ritz residual accepted by the iterative solver.
    pub tol: f64,
    /// Extra eigenvalues computed by the iterative solver before sorting
    /// by real part.
    pub oversample: usize,
    pub max_krylov: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            method: SpectrumMethod::Auto,
            dense_limit: 4096,
            shift: 0.05,
            tol: 1e-11,
            oversample: 24,
            max_krylov: 400,
        }
    }
}

/// Slowest Liouvillian eigenvalues, sorted by descending real part with
/// conjugate pairs kept adjacent (positive imaginary part first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiouvillianSpectrum {
    pub eigenvalues: Vec<C64>,
    pub count_requested: usize,
    pub method: SpectrumMethod,
    /// Largest `‖L x − λ x‖/‖x‖` over the returned values; `None` for the
    /// dense solver.
    pub max_residual: Option<f64>,
}

impl LiouvillianSpectrum {
    /// `(re, im)` pairs, the on-disk layout.
    pub fn pairs(&self) -> Vec<[f64; 2]> {
        self.eigenvalues.iter().map(|e| [e.re, e.im]).collect()
    }
}

/// Groups values into real singletons and conjugate pairs, sorts the groups
/// by descending real part and truncates at group granularity, so the
/// result may hold `k + 1` values when a pair straddles the cut.
fn select_slowest(mut values: Vec<C64>, k: usize) -> Vec<C64> {
    values.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let mut used = vec![false; values.len()];
    let mut groups: Vec<(f64, Vec<C64>)> = Vec::new();
    for i in 0..values.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let v = values[i];
        let tol = PAIR_TOL * v.norm().max(1.0);
        if v.im.abs() <= tol {
            groups.push((v.re, vec![v]));
            continue;
        }
        let partner = (0..values.len())
            .filter(|&j| !used[j])
            .map(|j| (j, (values[j] - v.conj()).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match partner {
            Some((j, dist)) if dist <= tol.max(1e-6 * v.norm()) => {
                used[j] = true;
                let w = values[j];
                let pair = if v.im > 0.0 { vec![v, w] } else { vec![w, v] };
                groups.push((0.5 * (v.re + w.re), pair));
            }
            // the spectrum is closed under conjugation, so a partner cut
            // off at the edge of the computed set is restored
            _ => {
                let pair = if v.im > 0.0 { vec![v, v.conj()] } else { vec![v.conj(), v] };
                groups.push((v.re, pair));
            }
        }
    }
    groups.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::with_capacity(k + 1);
    for (_, g) in groups {
        if out.len() >= k {
            break;
        }
        out.extend(g);
    }
    out
}

pub fn spectrum(superop: &Superoperator, k: usize) -> Result<LiouvillianSpectrum, LiouvillianError> {
    spectrum_with(superop, k, &SpectrumOptions::default())
}

pub fn spectrum_with(
    superop: &Superoperator,
    k: usize,
    opts: &SpectrumOptions,
) -> Result<LiouvillianSpectrum, LiouvillianError> {
    let dim = superop.dim();
    if k == 0 || k > dim {
        return Err(LiouvillianError::BadEigenCount { requested: k, dim });
    }
    let method = match opts.method {
        SpectrumMethod::Auto if dim <= opts.dense_limit => SpectrumMethod::Dense,
        SpectrumMethod::Auto => SpectrumMethod::ShiftInvert,
        m => m,
    };
    // the iterative solver needs spare room for the Krylov basis
    let method = if method == SpectrumMethod::ShiftInvert && k + 2 >= dim {
        SpectrumMethod::Dense
    } else {
        method
    };
    match method {
        SpectrumMethod::Dense => {
            let values = superop
                .real_gauge_dense()
                .eigenvalues()
                .map_err(|_| LinalgError::EigenNotConverged)?;
            Ok(LiouvillianSpectrum {
                eigenvalues: select_slowest(values, k),
                count_requested: k,
                method,
                max_residual: None,
            })
        }
        _ => {
            let kappa = superop.params().kappa;
            let nev = (k + opts.oversample).min(dim - 2);
            let arnoldi = ArnoldiOptions {
                shift: C64::new(opts.shift * kappa, 0.0),
                nev,
                tol: opts.tol,
                max_dim: opts.max_krylov.max(2 * nev + 10),
                check_every: 10,
            };
            let res = shift_invert_eigs(superop.matrix(), &arnoldi)?;
            let chosen = select_slowest(res.values.clone(), k);
            let max_residual = chosen
                .iter()
                .filter_map(|c| res.values.iter().position(|v| v == c).map(|i| res.residuals[i]))
                .fold(0.0, f64::max);
            Ok(LiouvillianSpectrum {
                eigenvalues: chosen,
                count_requested: k,
                method,
                max_residual: Some(max_residual),
            })
        }
    }
}

/// The slowest nonzero decay mode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayRate {
    /// `E₂`, the eigenvalue with the largest real part after the zero mode.
    pub e2: C64,
    /// `|Re E₂|`.
    pub rate: f64,
    /// `τ = 1/|Re E₂|`.
    pub tau: f64,
}

pub fn dominant_decay_rate(superop: &Superoperator) -> Result<DecayRate, LiouvillianError> {
    dominant_decay_rate_with(superop, &SpectrumOptions::default())
}

pub fn dominant_decay_rate_with(
    superop: &Superoperator,
    opts: &SpectrumOptions,
) -> Result<DecayRate, LiouvillianError> {
    let k = 6.min(superop.dim());
    let spec = spectrum_with(superop, k, opts)?;
    let zero = spec
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, _)| i)
        .ok_or(LiouvillianError::BadEigenCount { requested: k, dim: superop.dim() })?;
    let e2 = spec
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != zero)
        .map(|(_, e)| *e)
        .max_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)))
        .ok_or(LiouvillianError::BadEigenCount { requested: 2, dim: superop.dim() })?;
    let rate = e2.re.abs();
    Ok(DecayRate { e2, rate, tau: 1.0 / rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::ModelParams;

    fn superop(omega: f64, n: usize) -> Superoperator {
        Superoperator::new(ModelParams::new(omega, 1.0, n).unwrap()).unwrap()
    }

    #[test]
    fn select_keeps_pairs_together() {
        let v = vec![
            C64::new(0.0, 0.0),
            C64::new(-0.1, 1.0),
            C64::new(-0.1, -1.0),
            C64::new(-0.3, 0.0),
        ];
        let s = select_slowest(v, 2);
        assert_eq!(s.len(), 3);
        assert_eq!(s[1], C64::new(-0.1, 1.0));
        assert_eq!(s[2], C64::new(-0.1, -1.0));
        let lone = select_slowest(vec![C64::new(0.0, 0.0), C64::new(-0.2, -2.0)], 3);
        assert_eq!(lone, vec![C64::new(0.0, 0.0), C64::new(-0.2, 2.0), C64::new(-0.2, -2.0)]);
    }

    #[test]
    fn rejects_bad_counts() {
        let l = superop(1.0, 2);
        assert!(matches!(spectrum(&l, 0), Err(LiouvillianError::BadEigenCount { .. })));
        assert!(matches!(spectrum(&l, 10), Err(LiouvillianError::BadEigenCount { .. })));
    }

    #[test]
    fn dense_and_shift_invert_agree() {
        for (omega, n) in [(0.5, 20), (1.5, 20), (0.9, 16)] {
            let l = superop(omega, n);
            let dense = spectrum_with(
                &l,
                8,
                &SpectrumOptions {
                    method: SpectrumMethod::Dense,
                    ..Default::default()
                },
            )
            .unwrap();
            let iter = spectrum_with(
                &l,
                8,
                &SpectrumOptions {
                    method: SpectrumMethod::ShiftInvert,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(dense.eigenvalues.len(), iter.eigenvalues.len());
            for (a, b) in dense.eigenvalues.iter().zip(&iter.eigenvalues) {
                assert!((a - b).norm() < 1e-8, "ω={omega} N={n}: {a} vs {b}");
            }
            assert!(iter.max_residual.unwrap() < 1e-8);
        }
    }

    #[test]
    fn exactly_one_zero_mode() {
        for (omega, n) in [(0.0, 5), (0.5, 12), (1.5, 12)] {
            let l = superop(omega, n);
            let s = spectrum(&l, 9).unwrap();
            assert!(s.eigenvalues[0].norm() <= 1e-9);
            assert_eq!(s.eigenvalues.iter().filter(|e| e.norm() <= 1e-9).count(), 1);
            assert!(s.eigenvalues.iter().all(|e| e.re <= 1e-9));
        }
    }

    #[test]
    fn single_spin_decay_rates() {
        // N = 1, ω = 0: amplitude damping at rate κ/S = 2κ; populations
        // decay at 2κ and coherences at κ.
        let l = superop(0.0, 1);
        let s = spectrum(&l, 4).unwrap();
        let mut re: Vec<f64> = s.eigenvalues.iter().map(|e| e.re).collect();
        re.sort_by(|a, b| b.total_cmp(a));
        let expect = [0.0, -1.0, -1.0, -2.0];
        for (a, b) in re.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let d = dominant_decay_rate(&l).unwrap();
        assert!((d.rate - 1.0).abs() < 1e-12);
        assert!((d.tau - 1.0).abs() < 1e-12);
    }
}
