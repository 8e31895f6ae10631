//! Config-driven experiment runner: `run`, `compare` and `sweep`.
//!
//! Each run writes a bundle directory:
//!
//! | file | contents |
//! |---|---|
//! | `config.toml` | the parsed config with defaults filled in; re-running it reproduces the bundle |
//! | `result.json` | status, exit code, `J`, iteration and timestep counts, gain metrics |
//! | `trajectory.csv` | closed-loop evaluation run |
//! | `learning.csv`, `log.json` | per-iteration learning records |
//! | `learning_data.csv` | plant data the learner consumed |
//! | `gain.json`, `bandwidth.json`, `mask.json` | the synthesized gain and its metrics |

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub mod compare;
pub mod config;
pub mod runner;
pub mod sweep;

pub use config::{ExperimentConfig, Mode};
pub use runner::{run_experiment, RunResult, Status};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Bad command line, config or argument; exits with status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit status for an error that aborted a command.
pub fn exit_code_of(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<carleman_core::Error>() {
        Some(carleman_core::Error::InvalidArgument(_)) => EXIT_USAGE,
        Some(carleman_core::Error::Diverged { .. }) => 3,
        Some(_) => 4,
        None => EXIT_FAILURE,
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Where a config's bundle goes: `out` itself for a single run, `out/<name>`
/// for several, else the config's `output_dir`, else `runs/<name>`.
pub fn bundle_dir(cfg: &ExperimentConfig, out: Option<&Path>, several: bool) -> PathBuf {
    match (out, &cfg.output_dir) {
        (Some(out), _) if several => out.join(&cfg.name),
        (Some(out), _) => out.to_path_buf(),
        (None, Some(dir)) => dir.clone(),
        (None, None) => Path::new("runs").join(&cfg.name),
    }
}

/// Run several configs, concurrently when `batch` is set (and the
/// `parallel` feature is on). Output directories must be distinct.
pub fn run_many(jobs: &[(ExperimentConfig, PathBuf)], batch: bool) -> anyhow::Result<Vec<RunResult>> {
    let mut dirs: Vec<&PathBuf> = jobs.iter().map(|(_, d)| d).collect();
    dirs.sort();
    if let Some(w) = dirs.windows(2).find(|w| w[0] == w[1]) {
        return Err(UsageError(format!("two runs would write into {}", w[0].display())).into());
    }
    let run = |(cfg, dir): &(ExperimentConfig, PathBuf)| run_experiment(cfg, dir);
    #[cfg(feature = "parallel")]
    if batch {
        use rayon::prelude::*;
        return jobs.par_iter().map(run).collect();
    }
    let _ = batch;
    jobs.iter().map(run).collect()
}
