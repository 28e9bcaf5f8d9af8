//! Parameter sweeps over `(N, ω/κ)` with per-job caching, plus the
//! aggregate fits and figure pipelines built on them.

pub mod analysis;
pub mod cache;
pub mod config;
pub mod figures;
pub mod jobs;
pub mod pool;
pub mod record;
pub mod sweep;

pub use config::{ConfigError, SweepConfig, Task};
pub use record::{SweepRecord, SWEEP_HEADER};
pub use sweep::{run_sweep, SweepError, SweepOutcome};
