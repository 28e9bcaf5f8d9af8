//! On-disk dump of spectra and steady states keyed by `(N, ω/κ)`.
//!
//! Each entry is a little-endian `f64` payload of interleaved `(re, im)`
//! pairs plus a JSON sidecar with the metadata:
//!
//! ```text
//! <dir>/<kind>_N<n>_w<omega>.bin
//! <dir>/<kind>_N<n>_w<omega>.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{unvectorize, vectorize, DensityMatrix, LiouvillianError, LiouvillianSpectrum, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Spectrum,
    SteadyState,
}

impl EntryKind {
    fn stem(self) -> &'static str {
        match self {
            EntryKind::Spectrum => "spectrum",
            EntryKind::SteadyState => "steady",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: EntryKind,
    pub params: ModelParams,
    pub solver: String,
    pub tolerances: serde_json::Value,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

fn io(e: impl std::fmt::Display) -> LiouvillianError {
    LiouvillianError::Cache(e.to_string())
}

/// Stable textual key for `ω/κ`, e.g. `0.95` → `0.950000000000`.
pub fn omega_key(omega_over_kappa: f64) -> String {
    format!("{omega_over_kappa:.12}")
}

impl Cache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, LiouvillianError> {
        fs::create_dir_all(dir.as_ref()).map_err(io)?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    fn paths(&self, kind: EntryKind, params: &ModelParams) -> (PathBuf, PathBuf) {
        let stem = format!(
            "{}_N{}_w{}",
            kind.stem(),
            params.n_spins,
            omega_key(params.omega_over_kappa())
        );
        (self.dir.join(format!("{stem}.bin")), self.dir.join(format!("{stem}.json")))
    }

    fn write(
        &self,
        kind: EntryKind,
        params: &ModelParams,
        solver: &str,
        tolerances: serde_json::Value,
        data: &[C64],
    ) -> Result<(), LiouvillianError> {
        let (bin, json) = self.paths(kind, params);
        let mut bytes = Vec::with_capacity(16 * data.len());
        for z in data {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
        fs::write(&bin, bytes).map_err(io)?;
        let sidecar = Sidecar {
            kind,
            params: *params,
            solver: solver.to_string(),
            tolerances,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            len: data.len(),
        };
        fs::write(&json, serde_json::to_vec_pretty(&sidecar).map_err(io)?).map_err(io)?;
        Ok(())
    }

    fn read(&self, kind: EntryKind, params: &ModelParams) -> Result<Option<(Sidecar, Vec<C64>)>, LiouvillianError> {
        let (bin, json) = self.paths(kind, params);
        if !bin.exists() || !json.exists() {
            return Ok(None);
        }
        let sidecar: Sidecar = serde_json::from_slice(&fs::read(&json).map_err(io)?).map_err(io)?;
        let bytes = fs::read(&bin).map_err(io)?;
        if bytes.len() != 16 * sidecar.len || sidecar.params != *params || sidecar.kind != kind {
            return Err(LiouvillianError::Cache(format!("{} is inconsistent with its sidecar", bin.display())));
        }
        let data = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                C64::new(re, im)
            })
            .collect();
        Ok(Some((sidecar, data)))
    }

    pub fn store_spectrum(
        &self,
        params: &ModelParams,
        spectrum: &LiouvillianSpectrum,
        tolerances: serde_json::Value,
    ) -> Result<(), LiouvillianError> {
        let solver = serde_json::to_value(spectrum.method).map_err(io)?;
        let solver = format!("{}:k={}", solver.as_str().unwrap_or("unknown"), spectrum.count_requested);
        self.write(EntryKind::Spectrum, params, &solver, tolerances, &spectrum.eigenvalues)
    }

    /// Eigenvalues and sidecar, if present.
    pub fn load_spectrum(&self, params: &ModelParams) -> Result<Option<(Sidecar, Vec<C64>)>, LiouvillianError> {
        self.read(EntryKind::Spectrum, params)
    }

    pub fn store_steady_state(
        &self,
        params: &ModelParams,
        rho: &DensityMatrix,
        tolerances: serde_json::Value,
    ) -> Result<(), LiouvillianError> {
        let data = vectorize(&rho.matrix().to_owned());
        self.write(EntryKind::SteadyState, params, "sparse-lu", tolerances, &data)
    }

    pub fn load_steady_state(&self, params: &ModelParams) -> Result<Option<DensityMatrix>, LiouvillianError> {
        match self.read(EntryKind::SteadyState, params)? {
            None => Ok(None),
            Some((_, data)) => {
                let basis = params.basis();
                if data.len() != basis.dim() * basis.dim() {
                    return Err(LiouvillianError::Cache("steady-state payload has the wrong size".into()));
                }
                Ok(Some(DensityMatrix::new(basis, unvectorize(&data, basis.dim()))?))
            }
        }
    }
}
