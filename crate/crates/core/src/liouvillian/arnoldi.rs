//! Shift-invert Arnoldi for the eigenvalues of a sparse matrix closest to a
//! complex shift.
//!
//! The Krylov basis grows until the wanted Ritz pairs of `(A − σI)⁻¹`
//! converge; no restarts. Factorizations are cheap relative to the basis
//! for the sizes used here, so growing the basis is the simpler choice.

use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64 as C64;

use super::LiouvillianError;
use crate::linalg::{CsrMatrix, LinalgError, ZERO};

#[derive(Debug, Clone)]
pub(crate) struct ArnoldiOptions {
    pub shift: C64,
    pub nev: usize,
    pub tol: f64,
    pub max_dim: usize,
    pub check_every: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct EigenPairs {
    /// Eigenvalues of `A`, nearest the shift first.
    pub values: Vec<C64>,
    /// `‖A x − λ x‖ / ‖x‖` for each returned value.
    pub residuals: Vec<f64>,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Deterministic, dense start vector.
fn start_vector(n: usize) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n)
        .map(|i| {
            let t = i as f64 + 1.0;
            C64::new(1.0 + 0.3 * (0.7 * t).sin(), 0.2 * (1.3 * t).cos())
        })
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

pub(crate) fn shift_invert_eigs(a: &CsrMatrix, opts: &ArnoldiOptions) -> Result<EigenPairs, LiouvillianError> {
    let n = a.nrows();
    let nev = opts.nev.min(n);
    let max_dim = opts.max_dim.min(n).max(nev + 1);
    let shifted = a.to_faer(opts.shift, None)?;
    let lu = shifted
        .sp_lu()
        .map_err(|e| LinalgError::Factorization(format!("shifted LU: {e}")))?;

    let mut basis: Vec<Vec<C64>> = vec![start_vector(n)];
    // column-major Hessenberg entries, h[j] has length j + 2
    let mut h: Vec<Vec<C64>> = Vec::new();
    let mut rhs = Mat::<C64>::zeros(n, 1);
    let mut worst = f64::INFINITY;

    for j in 0..max_dim {
        for i in 0..n {
            rhs[(i, 0)] = basis[j][i];
        }
        let sol = lu.solve(&rhs);
        let mut w: Vec<C64> = (0..n).map(|i| sol[(i, 0)]).collect();
        let mut col = vec![ZERO; j + 2];
        // classical Gram-Schmidt, applied twice
        for _ in 0..2 {
            for (k, v) in basis.iter().enumerate() {
                let c = dot(v, &w);
                col[k] += c;
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let beta = norm(&w);
        col[j + 1] = C64::new(beta, 0.0);
        h.push(col);
        let m = j + 1;
        let breakdown = beta <= 1e-14 * h[j].iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
        if !breakdown {
            w.iter_mut().for_each(|x| *x /= beta);
            basis.push(w);
        }

        let at_check = m >= nev + 2 && (m % opts.check_every == 0 || m == max_dim || breakdown);
        if !at_check {
            continue;
        }
        let hm = Mat::from_fn(m, m, |r, c| if r < h[c].len() { h[c][r] } else { ZERO });
        let evd = hm.eigen().map_err(|_| LinalgError::EigenNotConverged)?;
        let s = evd.S().column_vector();
        let u = evd.U();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&p, &q| s[q].norm().total_cmp(&s[p].norm()).then(p.cmp(&q)));
        let wanted = &order[..nev.min(m)];
        let beta_m = if breakdown { 0.0 } else { beta };
        let mut all_ok = wanted.len() == nev;
        worst = 0.0;
        for &p in wanted {
            let ynorm = (0..m).map(|r| u[(r, p)].norm_sqr()).sum::<f64>().sqrt();
            let est = beta_m * u[(m - 1, p)].norm() / ynorm;
            worst = worst.max(est / s[p].norm());
            if est > opts.tol * s[p].norm() {
                all_ok = false;
            }
        }
        if all_ok || breakdown {
            let mut values = Vec::with_capacity(nev);
            let mut residuals = Vec::with_capacity(nev);
            for &p in wanted {
                let theta = s[p];
                let lambda = opts.shift + C64::new(1.0, 0.0) / theta;
                let mut x = vec![ZERO; n];
                for (r, v) in basis.iter().take(m).enumerate() {
                    let c = u[(r, p)];
                    x.iter_mut().zip(v).for_each(|(xi, vi)| *xi += c * vi);
                }
                let ax = a.matvec(&x);
                let res = ax.iter().zip(&x).map(|(p, q)| (p - lambda * q).norm_sqr()).sum::<f64>().sqrt() / norm(&x);
                values.push(lambda);
                residuals.push(res);
            }
            return Ok(EigenPairs {
                values,
                residuals,
            });
        }
    }
    Err(LiouvillianError::EigenNotConverged {
        iterations: max_dim,
        worst_residual: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_eigenvalues_nearest_shift() {
        // nonnormal upper bidiagonal plus diagonal 0, -1, -2, ...
        let n = 60;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(-(i as f64), 0.1 * i as f64)));
            if i + 1 < n {
                t.push((i, i + 1, C64::new(0.5, 0.0)));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, t);
        let opts = ArnoldiOptions {
            shift: C64::new(0.3, 0.0),
            nev: 4,
            tol: 1e-12,
            max_dim: 60,
            check_every: 5,
        };
        let res = shift_invert_eigs(&a, &opts).unwrap();
        for (k, v) in res.values.iter().enumerate() {
            let expect = C64::new(-(k as f64), 0.1 * k as f64);
            assert!((v - expect).norm() < 1e-8, "{v} vs {expect}");
            assert!(res.residuals[k] < 1e-8);
        }
    }
}
