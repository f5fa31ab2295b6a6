//! Pluggable artifact detectors and inpainters.
//!
//! Backends are described by serialisable specs ([`DetectorSpec`], [`InpainterSpec`]) and
//! instantiated into [`DetectorBackend`] / [`InpainterBackend`], which implement the
//! [`Detector`] and [`Inpainter`] traits the pipeline consumes.

mod file;
mod prompt;
mod remote;
mod stub;

pub use file::FileDetector;
pub use prompt::{default_prompt, default_rules, PromptRule, SCENE_PROMPT, WILDCARD_DOMAIN};
pub use remote::{
    downsample_any, fit_within, RemoteClient, RemoteConfig, RemoteDetector, RemoteInpainter,
    DEFAULT_MAX_SIDE, TOKEN_ENV,
};
pub use stub::{laplacian_magnitude, StubDetector, StubInpainter};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::RgbImage;

/// Produces an artifact mask with the image's dimensions.
pub trait Detector: Send + Sync {
    fn detect(&self, image_id: &str, image: &RgbImage) -> Result<BinaryMask>;

    /// Upper bound on concurrent calls the backend tolerates; `None` means unbounded.
    fn max_concurrency(&self) -> Option<usize> {
        None
    }
}

/// Fills the masked region of an image. Implementations must return an image of the input's
/// dimensions.
pub trait Inpainter: Send + Sync {
    fn inpaint(&self, image: &RgbImage, mask: &BinaryMask, prompt: &str) -> Result<RgbImage>;

    fn max_concurrency(&self) -> Option<usize> {
        None
    }
}

impl<T: Detector + ?Sized> Detector for &T {
    fn detect(&self, image_id: &str, image: &RgbImage) -> Result<BinaryMask> {
        (**self).detect(image_id, image)
    }

    fn max_concurrency(&self) -> Option<usize> {
        (**self).max_concurrency()
    }
}

impl<T: Inpainter + ?Sized> Inpainter for &T {
    fn inpaint(&self, image: &RgbImage, mask: &BinaryMask, prompt: &str) -> Result<RgbImage> {
        (**self).inpaint(image, mask, prompt)
    }

    fn max_concurrency(&self) -> Option<usize> {
        (**self).max_concurrency()
    }
}

pub(crate) fn ensure_matching(image: &RgbImage, mask: &BinaryMask) -> Result<()> {
    if image.dims() != mask.dims() {
        return Err(Error::invalid(format!(
            "image is {}x{} but mask is {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DetectorSpec {
    File(FileDetector),
    Remote(RemoteConfig),
    Stub(StubDetector),
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec::Stub(StubDetector::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum InpainterSpec {
    Remote {
        #[serde(flatten)]
        remote: RemoteConfig,
        #[serde(default = "default_max_side")]
        max_side: usize,
    },
    Stub(StubInpainter),
}

fn default_max_side() -> usize {
    DEFAULT_MAX_SIDE
}

impl Default for InpainterSpec {
    fn default() -> Self {
        InpainterSpec::Stub(StubInpainter::default())
    }
}

#[derive(Debug)]
pub enum DetectorBackend {
    File(FileDetector),
    Remote(RemoteDetector),
    Stub(StubDetector),
}

impl DetectorBackend {
    /// Validates the settings and builds the backend. `token` is sent as a bearer token by
    /// remote backends.
    pub fn from_spec(spec: &DetectorSpec, token: Option<String>) -> Result<Self> {
        Ok(match spec {
            DetectorSpec::File(f) => {
                f.validate()?;
                DetectorBackend::File(f.clone())
            }
            DetectorSpec::Remote(cfg) => DetectorBackend::Remote(RemoteDetector {
                client: RemoteClient::new(cfg.clone(), token)?,
            }),
            DetectorSpec::Stub(s) => DetectorBackend::Stub(*s),
        })
    }
}

impl Detector for DetectorBackend {
    fn detect(&self, image_id: &str, image: &RgbImage) -> Result<BinaryMask> {
        match self {
            DetectorBackend::File(d) => d.detect(image_id, image),
            DetectorBackend::Remote(d) => d.detect(image_id, image),
            DetectorBackend::Stub(d) => d.detect(image_id, image),
        }
    }

    fn max_concurrency(&self) -> Option<usize> {
        match self {
            DetectorBackend::Remote(d) => d.max_concurrency(),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub enum InpainterBackend {
    Remote(RemoteInpainter),
    Stub(StubInpainter),
}

impl InpainterBackend {
    pub fn from_spec(spec: &InpainterSpec, token: Option<String>) -> Result<Self> {
        Ok(match spec {
            InpainterSpec::Remote { remote, max_side } => InpainterBackend::Remote(
                RemoteInpainter::new(RemoteClient::new(remote.clone(), token)?, *max_side)?,
            ),
            InpainterSpec::Stub(s) => InpainterBackend::Stub(*s),
        })
    }
}

impl Inpainter for InpainterBackend {
    fn inpaint(&self, image: &RgbImage, mask: &BinaryMask, prompt: &str) -> Result<RgbImage> {
        match self {
            InpainterBackend::Remote(b) => b.inpaint(image, mask, prompt),
            InpainterBackend::Stub(b) => b.inpaint(image, mask, prompt),
        }
    }

    fn max_concurrency(&self) -> Option<usize> {
        match self {
            InpainterBackend::Remote(b) => b.max_concurrency(),
            InpainterBackend::Stub(_) => None,
        }
    }
}

/// Runs a detector and checks the mask matches the image.
pub fn detect(backend: &dyn Detector, image_id: &str, image: &RgbImage) -> Result<BinaryMask> {
    let mask = backend.detect(image_id, image)?;
    if mask.dims() != image.dims() {
        return Err(Error::Protocol(format!(
            "detector returned {}x{} mask for {}x{} image {image_id}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    Ok(mask)
}

/// Runs an inpainter; an empty mask short-circuits to the input without calling the backend.
pub fn inpaint(backend: &dyn Inpainter, image: &RgbImage, mask: &BinaryMask, prompt: &str) -> Result<RgbImage> {
    ensure_matching(image, mask)?;
    if mask.is_empty() {
        return Ok(image.clone());
    }
    let out = backend.inpaint(image, mask, prompt)?;
    if out.dims() != image.dims() {
        return Err(Error::Protocol(format!(
            "inpainter returned {}x{} image for {}x{} input",
            out.width(),
            out.height(),
            image.width(),
            image.height()
        )));
    }
    Ok(out)
}
