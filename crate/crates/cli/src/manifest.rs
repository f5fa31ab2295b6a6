//! Dataset manifest: one JSON document listing every image with its optional masks and its
//! task/domain/split tags. Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub image_id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map_path: Option<PathBuf>,
    pub task: String,
    pub domain: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {} line {line}, column {column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("manifest {} is invalid:\n  {}", path.display(), problems.join("\n  "))]
    Invalid { path: PathBuf, problems: Vec<String> },
}

/// Image ids double as output file stems, so they must be plain file names.
fn id_problem(id: &str) -> Option<&'static str> {
    if id.is_empty() {
        Some("empty image_id")
    } else if id == "." || id == ".." || id.contains(['/', '\\']) {
        Some("image_id must be usable as a file name")
    } else {
        None
    }
}

impl Manifest {
    /// Parses and validates; every violation is reported, not just the first.
    pub fn load(path: &Path) -> Result<Manifest, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| ManifestError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let root = path.parent().unwrap_or(Path::new("."));
        manifest.resolve_paths(root);
        let problems = manifest.problems();
        if !problems.is_empty() {
            return Err(ManifestError::Invalid {
                path: path.to_path_buf(),
                problems,
            });
        }
        Ok(manifest)
    }

    fn resolve_paths(&mut self, root: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        for e in &mut self.entries {
            resolve(&mut e.image_path);
            for p in [&mut e.mask_path, &mut e.gt_mask_path, &mut e.label_map_path]
                .into_iter()
                .flatten()
            {
                resolve(p);
            }
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(p) = id_problem(&e.image_id) {
                problems.push(format!("entry {i}: {p} ({:?})", e.image_id));
            }
            if !seen.insert(e.image_id.as_str()) {
                problems.push(format!("entry {i}: duplicate image_id {:?}", e.image_id));
            }
            let paths = [
                ("image_path", Some(&e.image_path)),
                ("mask_path", e.mask_path.as_ref()),
                ("gt_mask_path", e.gt_mask_path.as_ref()),
                ("label_map_path", e.label_map_path.as_ref()),
            ];
            for (field, path) in paths {
                if let Some(path) = path {
                    if !path.is_file() {
                        problems.push(format!(
                            "entry {i} ({}): {field} {} does not exist",
                            e.image_id,
                            path.display()
                        ));
                    }
                }
            }
        }
        problems
    }

    /// Entries in the given split, or all of them for `None`.
    pub fn select(&self, split: Option<Split>) -> Vec<&Entry> {
        self.entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .collect()
    }

    pub fn split_summary(&self) -> SplitSummary {
        let mut counts: BTreeMap<Split, usize> = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.split).or_default() += 1;
        }
        let total = self.entries.len();
        let fraction = |s| {
            if total == 0 {
                0.0
            } else {
                counts.get(&s).copied().unwrap_or(0) as f64 / total as f64
            }
        };
        SplitSummary {
            total,
            train: counts.get(&Split::Train).copied().unwrap_or(0),
            val: counts.get(&Split::Val).copied().unwrap_or(0),
            test: counts.get(&Split::Test).copied().unwrap_or(0),
            train_fraction: fraction(Split::Train),
            val_fraction: fraction(Split::Val),
            test_fraction: fraction(Split::Test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub total: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

/// Deterministic 80/10/10 assignment of `n` items: position `i` of a seeded shuffle goes to
/// train while below 80% of `n`, then val up to 90%, then test.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    // splitmix64-keyed ordering; stable for a given (n, seed).
    let key = |i: usize| {
        let mut z = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (key(i), i));
    let train_end = (n * 8).div_ceil(10);
    let val_end = (n * 9).div_ceil(10);
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < train_end {
            Split::Train
        } else if rank < val_end {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}
