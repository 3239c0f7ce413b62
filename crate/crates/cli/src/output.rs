//! The single writer of an output directory. Episodes may run on many
//! threads; every file they produce is written here, one at a time, via a
//! temporary file and a rename.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;
use serde::Serialize;

use aware_flight::gp::Dataset;
use aware_flight::harness::export::steps_csv;
use aware_flight::harness::EpisodeResult;

pub struct OutputDir {
    path: PathBuf,
    guard: Mutex<()>,
}

impl OutputDir {
    pub fn open(path: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            guard: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_at(&self, target: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        let _lock = self.guard.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let mut tmp = target.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, target).with_context(|| format!("renaming onto {}", target.display()))?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, text: &str) -> anyhow::Result<()> {
        self.write_at(&self.path.join(name), text.as_bytes())
    }

    pub fn write_json_at<T: Serialize>(&self, target: &Path, value: &T) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write_at(target, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write_json_at(&self.path.join(name), value)
    }

    pub fn write_steps(&self, name: &str, r: &EpisodeResult) -> anyhow::Result<()> {
        self.write_at(&self.path.join(name), steps_csv(r).as_bytes())
    }

    /// Dataset CSV plus its JSON sidecar.
    pub fn write_dataset(&self, target: &Path, data: &Dataset) -> anyhow::Result<()> {
        let _lock = self.guard.lock().unwrap_or_else(|p| p.into_inner());
        data.write_csv(target)?;
        Ok(())
    }

    /// Files in the directory named `prefix…suffix`, sorted by name.
    pub fn files_with_prefix(&self, prefix: &str, suffix: &str) -> anyhow::Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.path).with_context(|| format!("listing {}", self.path.display()))? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with(prefix) && name.ends_with(suffix) {
                out.push(path);
            }
        }
        out.sort();
        Ok(out)
    }
}
