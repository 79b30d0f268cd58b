//! Run-directory bookkeeping: a lock against concurrent runs, phase
//! timings, and the manifest inventorying every artifact.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::{Error, Result};

use super::{ExperimentConfig, ExperimentKind};

const LOCK: &str = "lock";

/// Recorded in every manifest: targets are rendered from a reference
/// texture set rather than described by a text prompt, so results must not
/// be read as text-conditioned.
const CONDITIONING: &str =
    "targets derive from a reference texture set; no text prompt or pretrained model is involved";

#[derive(Clone, Serialize)]
struct Timing {
    phase: String,
    seconds: f64,
}

#[derive(Serialize)]
struct RunManifest<'c> {
    experiment: ExperimentKind,
    conditioning: &'static str,
    package: &'static str,
    version: &'static str,
    config: &'c ExperimentConfig,
    timings: Vec<Timing>,
    outputs: Vec<String>,
    metrics: Value,
}

/// One run's output directory. Files register as they are produced;
/// [`RunDir::finish`] writes the manifest and verifies the inventory.
pub(super) struct RunDir {
    root: PathBuf,
    files: Vec<String>,
    timings: Vec<Timing>,
    started: Instant,
    locked: bool,
}

impl RunDir {
    /// Creates (or reuses) the directory and takes its lock.
    pub fn create(root: &Path) -> Result<RunDir> {
        std::fs::create_dir_all(root)?;
        match std::fs::OpenOptions::new().write(true).create_new(true).open(root.join(LOCK)) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::Config(format!(
                    "output directory {} is locked by another run (delete `{LOCK}` if that run is gone)",
                    root.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(RunDir {
            root: root.to_path_buf(),
            files: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
            locked: true,
        })
    }

    /// Registers `rel` as an artifact and returns its absolute path.
    pub fn file(&mut self, rel: impl Into<String>) -> PathBuf {
        let rel = rel.into();
        let path = self.root.join(&rel);
        self.files.push(rel);
        path
    }

    /// Creates a subdirectory whose files are registered individually.
    pub fn subdir(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        std::fs::create_dir_all(&path)?;
        Ok(path)
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings.push(Timing { phase: phase.into(), seconds: start.elapsed().as_secs_f64() });
        Ok(out)
    }

    /// Writes `manifest.json`, verifies every registered artifact exists on
    /// disk, and releases the lock.
    pub fn finish(mut self, config: &ExperimentConfig, metrics: Value) -> Result<()> {
        self.timings
            .push(Timing { phase: "total".into(), seconds: self.started.elapsed().as_secs_f64() });
        let path = self.file("manifest.json");
        let manifest = RunManifest {
            experiment: config.experiment,
            conditioning: CONDITIONING,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            timings: std::mem::take(&mut self.timings),
            outputs: self.files.clone(),
            metrics,
        };
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        for rel in &self.files {
            if !self.root.join(rel).is_file() {
                return Err(Error::Config(format!(
                    "artifact `{rel}` is listed in the manifest but missing on disk"
                )));
            }
        }
        self.unlock();
        Ok(())
    }

    fn unlock(&mut self) {
        if self.locked {
            let _ = std::fs::remove_file(self.root.join(LOCK));
            self.locked = false;
        }
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        self.unlock();
    }
}
