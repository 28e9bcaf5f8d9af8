//! Per-job JSON results keyed by `(N, ω/κ, task, fingerprint)`.

use std::fs;
use std::path::{Path, PathBuf};

use btc_core::liouvillian::cache::omega_key;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::Task;
use crate::record::write_atomic;

#[derive(Debug, Clone)]
pub struct ResultCache {
    root: PathBuf,
}

impl ResultCache {
    pub fn new(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
        }
    }

    pub fn path(&self, task: Task, n: usize, omega: f64, fingerprint: &str) -> PathBuf {
        self.root
            .join(task.name())
            .join(format!("N{n}_w{}_{fingerprint}.json", omega_key(omega)))
    }

    /// `None` when absent or unreadable; a corrupt entry is recomputed.
    pub fn load<T: DeserializeOwned>(&self, task: Task, n: usize, omega: f64, fingerprint: &str) -> Option<T> {
        let bytes = fs::read(self.path(task, n, omega, fingerprint)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn store<T: Serialize>(&self, task: Task, n: usize, omega: f64, fingerprint: &str, value: &T) -> std::io::Result<()> {
        let path = self.path(task, n, omega, fingerprint);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        write_atomic(&path, &bytes)
    }
}
