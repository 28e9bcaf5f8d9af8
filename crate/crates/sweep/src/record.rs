//! Sweep rows and their CSV form.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Column order of `sweep.csv`.
pub const SWEEP_HEADER: [&str; 8] = [
    "n",
    "omega_over_kappa",
    "sz_ss_per_n",
    "qfi",
    "cfi_max",
    "theta_opt",
    "phi_opt",
    "e2_abs",
];

/// A task that failed at one point; the sweep carries on without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task: String,
    pub message: String,
}

/// Results at one `(N, ω/κ)`; a field is `None` unless its task ran there.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub n_spins: usize,
    pub omega_over_kappa: f64,
    pub sz_ss_per_n: Option<f64>,
    pub qfi: Option<f64>,
    pub cfi_max: Option<f64>,
    pub theta_opt: Option<f64>,
    pub phi_opt: Option<f64>,
    pub e2_abs: Option<f64>,
    /// Solver notes such as the eigensolver used or the CFI settings.
    pub diagnostics: Vec<String>,
    pub failures: Vec<TaskFailure>,
}

impl SweepRecord {
    pub fn new(n_spins: usize, omega_over_kappa: f64) -> Self {
        Self {
            n_spins,
            omega_over_kappa,
            ..Self::default()
        }
    }

    fn cells(&self) -> [String; 8] {
        let opt = |v: Option<f64>| v.map(format_number).unwrap_or_default();
        [
            self.n_spins.to_string(),
            format_number(self.omega_over_kappa),
            opt(self.sz_ss_per_n),
            opt(self.qfi),
            opt(self.cfi_max),
            opt(self.theta_opt),
            opt(self.phi_opt),
            opt(self.e2_abs),
        ]
    }
}

/// `%.12g`: twelve significant digits, trailing zeros dropped, exponent
/// form outside `[1e−4, 1e12)`.
pub fn format_number(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= DIGITS {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Records as CSV, sorted by `(N, ω)`.
pub fn sweep_csv(records: &[SweepRecord]) -> Vec<u8> {
    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.n_spins.cmp(&b.n_spins).then(a.omega_over_kappa.total_cmp(&b.omega_over_kappa)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).expect("in-memory write");
    for r in sorted {
        w.write_record(r.cells()).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_sweep_csv(path: &Path, records: &[SweepRecord]) -> std::io::Result<()> {
    write_atomic(path, &sweep_csv(records))
}

/// Reads a CSV produced by [`write_sweep_csv`]; empty cells become `None`.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>, csv::Error> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(SWEEP_HEADER) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected header in {}", path.display()),
        )));
    }
    let bad = |what: &str| csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, what.to_string()));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<Option<f64>, csv::Error> {
            let s = row.get(i).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| bad(&format!("bad number {s:?}")))
        };
        let n = row.get(0).unwrap_or("").trim().parse().map_err(|_| bad("bad n"))?;
        let omega = num(1)?.ok_or_else(|| bad("missing omega_over_kappa"))?;
        out.push(SweepRecord {
            sz_ss_per_n: num(2)?,
            qfi: num(3)?,
            cfi_max: num(4)?,
            theta_opt: num(5)?,
            phi_opt: num(6)?,
            e2_abs: num(7)?,
            ..SweepRecord::new(n, omega)
        });
    }
    Ok(out)
}

/// Reads columns `x` and `y` of any headed CSV, skipping rows where
/// either cell is empty.
pub fn read_columns(path: &Path, x: &str, y: &str) -> Result<Vec<(f64, f64)>, csv::Error> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let missing = |c: &str| {
        csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("column {c:?} not found in {}", path.display()),
        ))
    };
    let ix = headers.iter().position(|h| h == x).ok_or_else(|| missing(x))?;
    let iy = headers.iter().position(|h| h == y).ok_or_else(|| missing(y))?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let (sx, sy) = (row.get(ix).unwrap_or("").trim(), row.get(iy).unwrap_or("").trim());
        if sx.is_empty() || sy.is_empty() {
            continue;
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| {
                csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad number {s:?}")))
            })
        };
        out.push((parse(sx)?, parse(sy)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(0.5), "0.5");
        assert_eq!(format_number(20.0), "20");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_number(-2.0 / 3.0), "-0.666666666667");
        assert_eq!(format_number(123456.789), "123456.789");
        assert_eq!(format_number(1.5e-7), "1.5e-07");
        assert_eq!(format_number(2.5e15), "2.5e+15");
        assert_eq!(format_number(0.0001), "0.0001");
        assert_eq!(format_number(999999999999.5), "1e+12");
        assert_eq!(format_number(0.2 + 1.4 * 3.0 / 80.0), "0.2525");
    }

    #[test]
    fn csv_round_trip_and_sorting() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let mut a = SweepRecord::new(40, 0.5);
        a.qfi = Some(12.25);
        let mut b = SweepRecord::new(20, 0.9);
        b.sz_ss_per_n = Some(-0.25);
        b.e2_abs = Some(1e-5);
        write_sweep_csv(&path, &[a.clone(), b.clone()]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "20,0.9,-0.25,,,,,1e-05");
        assert_eq!(lines.next().unwrap(), "40,0.5,,12.25,,,,");
        let back = read_sweep_csv(&path).unwrap();
        assert_eq!(back, vec![b, a]);
        let cols = read_columns(&path, "n", "qfi").unwrap();
        assert_eq!(cols, vec![(40.0, 12.25)]);
    }
}
