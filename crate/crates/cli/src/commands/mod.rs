//! One module per subcommand.

use std::path::PathBuf;

use crate::cache::TrajectoryCache;
use crate::config::ExperimentConfig;
use crate::error::CliError;

pub mod assumption;
pub mod bound_sweep;
pub mod optimistic;
pub mod selftest;

/// Command-line overrides shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for independent runs; `None` uses one per core.
    pub workers: Option<usize>,
    /// Replaces the config's `outputs` directory.
    pub out: Option<PathBuf>,
}

impl RunOptions {
    pub fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.outputs.clone())
    }

    pub fn cache(&self, cfg: &ExperimentConfig) -> TrajectoryCache {
        TrajectoryCache::new(cfg.cache_dir.clone().unwrap_or_else(|| self.out_dir(cfg).join("cache")))
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            b = b.num_threads(n.max(1));
        }
        b.build().map_err(|e| CliError::Compute(format!("thread pool: {e}")))
    }
}

/// Writes `value` as pretty JSON to `path`.
pub(crate) fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    crate::cache::write_atomic(path, text.as_bytes())
}
