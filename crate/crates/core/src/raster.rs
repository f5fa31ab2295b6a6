//! 8-bit RGB images and the PNG codecs used for images, masks and label maps.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryMask};

/// Default luminance threshold for binarising mask files.
pub const DEFAULT_MASK_THRESHOLD: u8 = 127;

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage {}x{}", self.width, self.height)
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                3 * width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma as a real value in [0, 255].
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.get(x, y);
        0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
    }

    pub fn crop(&self, bbox: &BBox) -> Result<RgbImage> {
        if !bbox.fits_within(self.width, self.height) {
            return Err(Error::invalid(format!(
                "box {bbox:?} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(3 * bbox.width() * bbox.height());
        for y in bbox.y0..=bbox.y1 {
            let start = 3 * (y * self.width + bbox.x0);
            pixels.extend_from_slice(&self.pixels[start..start + 3 * bbox.width()]);
        }
        RgbImage::new(bbox.width(), bbox.height(), pixels)
    }

    /// Bilinear resample (triangle filter).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<RgbImage> {
        if (width, height) == self.dims() {
            return Ok(self.clone());
        }
        let resized = image::imageops::resize(
            &self.to_buffer(),
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        RgbImage::new(width, height, resized.into_raw())
    }

    fn to_buffer(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked on construction")
    }
}

fn decode_dynamic(bytes: &[u8], name: &str) -> Result<DynamicImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode {
        name: name.to_string(),
        message: e.to_string(),
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::invalid(format!("{name}: zero-area image")));
    }
    Ok(img)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn decode_image(bytes: &[u8], name: &str) -> Result<RgbImage> {
    let img = decode_dynamic(bytes, name)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbImage::new(w, h, img.into_raw())
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    decode_image(&read_file(path)?, &path.display().to_string())
}

pub fn encode_image(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    image
        .to_buffer()
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Decodes a grayscale or colour image and binarises it: a pixel is foreground iff its
/// Rec. 601 luminance exceeds `threshold`. Alpha is ignored.
pub fn decode_mask(bytes: &[u8], threshold: u8, name: &str) -> Result<BinaryMask> {
    let img = decode_dynamic(bytes, name)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bits = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v > threshold).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] > threshold).collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| (v >> 8) as u8 > threshold)
            .collect(),
        other => {
            // 299R + 587G + 114B > 1000 t, evaluated exactly in integers.
            let limit = 1000 * threshold as u32;
            other
                .to_rgb8()
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    299 * r as u32 + 587 * g as u32 + 114 * b as u32 > limit
                })
                .collect()
        }
    };
    BinaryMask::from_bits(w, h, bits)
}

pub fn read_mask(path: &Path, threshold: u8) -> Result<BinaryMask> {
    decode_mask(&read_file(path)?, threshold, &path.display().to_string())
}

/// Encodes a mask as 8-bit grayscale PNG with values {0, 255}.
pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    let raw = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_gray(mask.width(), mask.height(), raw)
}

pub fn encode_gray(width: usize, height: usize, raw: Vec<u8>) -> Result<Vec<u8>> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::Encode("gray buffer length mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Per-pixel class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::invalid(format!(
                "label map {width}x{height} with {} entries",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn uniform(width: usize, height: usize, class: u32) -> Result<Self> {
        Self::new(width, height, vec![class; width * height])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Label maps are single-channel PNGs (8- or 16-bit) whose pixel value is the class id.
pub fn decode_label_map(bytes: &[u8], name: &str) -> Result<LabelMap> {
    let img = decode_dynamic(bytes, name)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        _ => {
            return Err(Error::Decode {
                name: name.to_string(),
                message: "label map must be a single-channel image".into(),
            })
        }
    };
    LabelMap::new(w, h, labels)
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    decode_label_map(&read_file(path)?, &path.display().to_string())
}
