//! Batch interface tying the segmentation stages together.
//!
//! Every stage writes its outputs with a `<name>.prov.json` record of input
//! content hashes and parameters; a rerun skips stages whose record still
//! matches unless forced.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod provenance;
pub mod stage;

pub use commands::{run, Cli, Command};
pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, Artifacts, PipelineRun};
pub use provenance::{hash_artifact, Provenance};
pub use stage::Outcome;

use std::io::Write;

/// Line-delimited JSON log records on stderr.
pub fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .format(|buf, r| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": r.level().as_str(),
                "target": r.target(),
                "msg": r.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .try_init();
}

/// Caps the global worker pool. Only effective before the pool first runs.
pub fn set_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(CliError::Validation("--jobs must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Validation(format!("--jobs: {e}")))
}
