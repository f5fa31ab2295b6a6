//! Deterministic in-process detector and inpainter.

use serde::{Deserialize, Serialize};

use super::{ensure_matching, Detector, Inpainter};
use crate::error::Result;
use crate::mask::{dilate, open, BinaryMask};
use crate::raster::RgbImage;

/// Marks pixels where the absolute 4-neighbour Laplacian of Rec. 601 luma exceeds a
/// threshold, then opens the result with a 3×3 square to drop isolated responses.
/// Borders replicate the edge pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubDetector {
    pub laplacian_threshold: f64,
}

impl Default for StubDetector {
    fn default() -> Self {
        Self {
            laplacian_threshold: 48.0,
        }
    }
}

pub fn laplacian_magnitude(image: &RgbImage) -> Vec<f64> {
    let (w, h) = image.dims();
    let luma: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| image.luma(x, y))
        .collect();
    let at = |x: usize, y: usize| luma[y * w + x];
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let left = at(x.saturating_sub(1), y);
            let right = at((x + 1).min(w - 1), y);
            let up = at(x, y.saturating_sub(1));
            let down = at(x, (y + 1).min(h - 1));
            out.push((4.0 * at(x, y) - left - right - up - down).abs());
        }
    }
    out
}

impl StubDetector {
    pub fn new(laplacian_threshold: f64) -> Self {
        Self {
            laplacian_threshold,
        }
    }

    pub fn segment(&self, image: &RgbImage) -> BinaryMask {
        let (w, h) = image.dims();
        let bits = laplacian_magnitude(image)
            .into_iter()
            .map(|v| v > self.laplacian_threshold)
            .collect();
        let raw = BinaryMask::from_bits(w, h, bits).expect("image dims are valid");
        open(&raw, 1)
    }
}

impl Detector for StubDetector {
    fn detect(&self, _image_id: &str, image: &RgbImage) -> Result<BinaryMask> {
        Ok(self.segment(image))
    }
}

/// Fills the mask with one flat colour: the mean of the unmasked pixels within
/// `boundary_ring` of the mask, falling back to the mean of all unmasked pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubInpainter {
    pub boundary_ring: usize,
}

impl Default for StubInpainter {
    fn default() -> Self {
        Self { boundary_ring: 3 }
    }
}

fn mean_rgb(image: &RgbImage, select: &[bool]) -> Option<[u8; 3]> {
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    let (w, _) = image.dims();
    for (i, _) in select.iter().enumerate().filter(|(_, &s)| s) {
        let px = image.get(i % w, i / w);
        for c in 0..3 {
            sum[c] += px[c] as u64;
        }
        n += 1;
    }
    (n > 0).then(|| sum.map(|s| ((s + n / 2) / n) as u8))
}

impl StubInpainter {
    pub fn new(boundary_ring: usize) -> Self {
        Self { boundary_ring }
    }

    pub fn fill(&self, image: &RgbImage, mask: &BinaryMask) -> RgbImage {
        if mask.is_empty() {
            return image.clone();
        }
        let ring: Vec<bool> = dilate(mask, self.boundary_ring)
            .bits()
            .iter()
            .zip(mask.bits())
            .map(|(&d, &m)| d && !m)
            .collect();
        let unmasked: Vec<bool> = mask.bits().iter().map(|&m| !m).collect();
        let Some(colour) = mean_rgb(image, &ring).or_else(|| mean_rgb(image, &unmasked)) else {
            return image.clone();
        };
        let mut out = image.clone();
        for (x, y) in mask.foreground() {
            out.put(x, y, colour);
        }
        out
    }
}

impl Inpainter for StubInpainter {
    fn inpaint(&self, image: &RgbImage, mask: &BinaryMask, _prompt: &str) -> Result<RgbImage> {
        ensure_matching(image, mask)?;
        Ok(self.fill(image, mask))
    }
}
