//! File layout of an experiment directory.

use std::path::{Path, PathBuf};

use super::manifest::ClipSplit;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn corpus_manifest(&self) -> PathBuf {
        self.data_dir().join("corpus.jsonl")
    }

    /// Validation clips live in the train manifest.
    pub fn clip_manifest(&self, split: ClipSplit) -> PathBuf {
        let name = match split {
            ClipSplit::Train | ClipSplit::Val => "train",
            s => s.name(),
        };
        self.data_dir().join(format!("manifest_{name}.jsonl"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn report_json(&self) -> PathBuf {
        self.eval_dir().join("report.json")
    }

    /// Timestamped sidecar log; the only artifact that varies between runs.
    pub fn run_log(&self) -> PathBuf {
        self.logs_dir().join("run.log")
    }

    pub fn resolve_data(&self, rel: &str) -> PathBuf {
        self.data_dir().join(rel)
    }

    pub fn ensure(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }
}

/// Appends one timestamped line to the sidecar log.
pub fn log_event(layout: &Layout, msg: &str) {
    use std::io::Write;
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    if layout.ensure(&layout.logs_dir()).is_ok() {
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(layout.run_log()) {
            let _ = writeln!(f, "{ts:.3} {msg}");
        }
    }
    log::info!("{msg}");
}
