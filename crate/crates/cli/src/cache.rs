//! Content hashes and the on-disk trajectory cache.

use std::path::{Path, PathBuf};

use nearlin_core::netflow::Trajectory;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Bumped whenever the trainer's output for a given key could change.
const TRAJECTORY_FORMAT: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Cache key from the dataset hash and any serializable run description.
pub fn trajectory_key<T: Serialize>(dataset_hash: &str, run: &T) -> String {
    let desc = serde_json::json!({
        "format": TRAJECTORY_FORMAT,
        "version": env!("CARGO_PKG_VERSION"),
        "dataset": dataset_hash,
        "run": run,
    });
    sha256_hex(desc.to_string().as_bytes())
}

pub struct TrajectoryCache {
    dir: Option<PathBuf>,
}

impl TrajectoryCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn disabled() -> Self {
        Self { dir: None }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("traj-{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<Trajectory> {
        let path = self.path(key)?;
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, key: &str, traj: &Trajectory) -> Result<(), CliError> {
        let Some(path) = self.path(key) else {
            return Ok(());
        };
        write_atomic(&path, serde_json::to_string(traj)?.as_bytes())
    }

    /// Cached trajectory for `key`, or the result of `run` stored under it.
    pub fn get_or_train(
        &self,
        key: &str,
        run: impl FnOnce() -> Result<Trajectory, CliError>,
    ) -> Result<Trajectory, CliError> {
        if let Some(t) = self.get(key) {
            return Ok(t);
        }
        let t = run()?;
        self.put(key, &t)?;
        Ok(t)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
