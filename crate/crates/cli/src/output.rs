//! Output directory handling: atomic file writes and the run summary.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;
use serde::Serialize;

use crate::manifest::SplitSummary;

/// Writes files under one root directory, each via a temp file renamed into place, and
/// remembers every relative path written.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Mutex<BTreeSet<String>>,
}

impl OutputDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Mutex::new(BTreeSet::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `rel` uses `/` separators.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.root.join(rel);
        write_atomic(&path, bytes)?;
        self.written.lock().expect("output registry poisoned").insert(rel.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    pub fn written(&self) -> Vec<String> {
        self.written.lock().expect("output registry poisoned").iter().cloned().collect()
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemReport {
    pub image_id: String,
    pub status: ItemStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub split: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_summary: Option<SplitSummary>,
    pub items: Vec<ItemReport>,
    /// Files written by the command, relative to the output directory.
    pub outputs: Vec<String>,
}

pub const RUN_SUMMARY: &str = "run_summary.json";

impl RunSummary {
    pub fn failures(&self) -> usize {
        self.items.iter().filter(|i| i.status != ItemStatus::Ok).count()
    }
}
