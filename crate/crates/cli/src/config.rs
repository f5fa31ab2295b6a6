//! Pipeline configuration, read from a JSON file. Every field has a default, so `{}` is a
//! valid config that runs the built-in stub backends.

use std::path::Path;

use anyhow::{bail, Context};
use pal_core::backends::{default_rules, DetectorSpec, InpainterSpec, PromptRule};
use pal_core::mask::dilation_radius_for;
use pal_core::raster::DEFAULT_MASK_THRESHOLD;
use pal_core::refine::{DEFAULT_CROP_SCALE, DEFAULT_FEATHER};
use pal_core::Connectivity;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// How far the detected mask is grown before inpainting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DilationRule {
    Fixed(usize),
    /// `max(1, round(p/100 × longest side))`.
    PercentOfLongestSide(f64),
}

impl Default for DilationRule {
    fn default() -> Self {
        DilationRule::PercentOfLongestSide(1.0)
    }
}

impl DilationRule {
    pub fn radius_for(&self, width: usize, height: usize) -> usize {
        match *self {
            DilationRule::Fixed(r) => r,
            DilationRule::PercentOfLongestSide(p) => dilation_radius_for(width, height, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector: DetectorSpec,
    pub inpainter: InpainterSpec,
    pub dilation: DilationRule,
    pub crop_scale: f64,
    pub feather: usize,
    pub connectivity: Connectivity,
    pub prompt_rules: Vec<PromptRule>,
    pub parallelism: usize,
    pub mask_threshold: u8,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorSpec::default(),
            inpainter: InpainterSpec::default(),
            dilation: DilationRule::default(),
            crop_scale: DEFAULT_CROP_SCALE,
            feather: DEFAULT_FEATHER,
            connectivity: Connectivity::default(),
            prompt_rules: default_rules(),
            parallelism: 1,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.crop_scale >= 1.0 && self.crop_scale.is_finite()) {
            bail!("crop_scale must be >= 1, got {}", self.crop_scale);
        }
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if let DilationRule::PercentOfLongestSide(p) = self.dilation {
            if !(p >= 0.0 && p.is_finite()) {
                bail!("dilation percentage must be non-negative, got {p}");
            }
        }
        for rule in &self.prompt_rules {
            rule.validate()?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every setting that can change outputs
    /// (worker count is excluded).
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("parallelism");
        }
        let bytes = serde_json::to_vec(&value).expect("value serialises");
        hex::encode(Sha256::digest(bytes))
    }
}
