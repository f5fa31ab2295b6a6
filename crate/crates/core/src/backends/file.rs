use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{ensure_matching, Detector};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::{read_mask, RgbImage, DEFAULT_MASK_THRESHOLD};

/// Serves precomputed masks from disk, keyed by image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDetector {
    pub masks: BTreeMap<String, PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: u8,
}

fn default_threshold() -> u8 {
    DEFAULT_MASK_THRESHOLD
}

impl FileDetector {
    pub fn new(masks: BTreeMap<String, PathBuf>) -> Self {
        Self {
            masks,
            threshold: DEFAULT_MASK_THRESHOLD,
        }
    }

    /// Checks that every mapped path exists, reporting all missing ones together.
    pub fn validate(&self) -> Result<()> {
        let mut missing: Vec<String> = self
            .masks
            .iter()
            .filter(|(_, p)| !p.is_file())
            .map(|(id, p)| format!("{id} -> {}", p.display()))
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        missing.sort();
        Err(Error::Lookup(format!("missing mask files: {}", missing.join(", "))))
    }
}

impl Detector for FileDetector {
    fn detect(&self, image_id: &str, image: &RgbImage) -> Result<BinaryMask> {
        let path = self
            .masks
            .get(image_id)
            .ok_or_else(|| Error::Lookup(format!("no mask mapped for image {image_id:?}")))?;
        if !path.is_file() {
            return Err(Error::Lookup(format!(
                "mask for {image_id:?} not found at {}",
                path.display()
            )));
        }
        let mask = read_mask(path, self.threshold)?;
        ensure_matching(image, &mask).map_err(|e| Error::Protocol(format!("{image_id}: {e}")))?;
        Ok(mask)
    }
}
