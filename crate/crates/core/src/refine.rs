//! Zoom-in refinement: crop a square context around each artifact component, inpaint the
//! crop at native resolution, and composite the result back inside the component's region.

use rayon::prelude::*;

use crate::backends::Inpainter;
use crate::error::{Error, Result};
use crate::mask::{connected_components, dilate, BBox, BinaryMask, Connectivity};
use crate::raster::RgbImage;

/// Crop side relative to the longest axis of a component's bounding box.
pub const DEFAULT_CROP_SCALE: f64 = 1.5;
pub const DEFAULT_FEATHER: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub component_label: u32,
    /// Crop rectangle in source coordinates.
    pub bbox: BBox,
    /// Tight box of the dilated component.
    pub component_bbox: BBox,
    /// The dilated component restricted to `bbox`, in crop coordinates.
    pub region_mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropPlan {
    /// Ordered by ascending component label.
    pub crops: Vec<Crop>,
    pub source_dims: (usize, usize),
    pub scale: f64,
    pub dilation_radius: usize,
}

impl CropPlan {
    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    /// Union of all region masks in source coordinates.
    pub fn region_union(&self) -> BinaryMask {
        let (w, h) = self.source_dims;
        let mut union = BinaryMask::new(w, h).expect("plan dims are valid");
        for crop in &self.crops {
            for (x, y) in crop.region_mask.foreground() {
                union.set(crop.bbox.x0 + x, crop.bbox.y0 + y, true);
            }
        }
        union
    }
}

/// Side length of the square crop for a component of the given extent.
pub fn crop_side(extent: usize, scale: f64) -> usize {
    // The epsilon keeps exact products such as 1.1 × 10 from rounding up a whole pixel.
    ((scale * extent as f64 - 1e-9).ceil() as usize).max(extent)
}

/// Centres a span of `side` pixels on `[lo, hi]`, then shifts it to fit in `[0, limit)`.
/// Falls back to the whole axis when `side >= limit`.
fn place(lo: usize, hi: usize, side: usize, limit: usize) -> (usize, usize) {
    if side >= limit {
        return (0, limit - 1);
    }
    let slack = side - (hi - lo + 1);
    let start = (lo as isize - (slack / 2) as isize).clamp(0, (limit - side) as isize) as usize;
    (start, start + side - 1)
}

pub fn plan_crops(
    mask: &BinaryMask,
    dims: (usize, usize),
    scale: f64,
    dilation_radius: usize,
    connectivity: Connectivity,
) -> Result<CropPlan> {
    if mask.dims() != dims {
        return Err(Error::invalid(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width(),
            mask.height(),
            dims.0,
            dims.1
        )));
    }
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("crop scale must be >= 1, got {scale}")));
    }
    let (w, h) = dims;
    let dilated = dilate(mask, dilation_radius);
    let components = connected_components(&dilated, connectivity);
    let crops = components
        .iter()
        .map(|c| {
            let side = crop_side(c.bbox.width().max(c.bbox.height()), scale);
            let (x0, x1) = place(c.bbox.x0, c.bbox.x1, side, w);
            let (y0, y1) = place(c.bbox.y0, c.bbox.y1, side, h);
            let bbox = BBox { x0, y0, x1, y1 };
            let mut region_mask = BinaryMask::new(bbox.width(), bbox.height())?;
            for &(x, y) in &c.pixels {
                region_mask.set(x - x0, y - y0, true);
            }
            Ok(Crop {
                component_label: c.label,
                bbox,
                component_bbox: c.bbox,
                region_mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CropPlan {
        crops,
        source_dims: dims,
        scale,
        dilation_radius,
    })
}

/// Chebyshev distance from `(x, y)` to the nearest pixel outside `region` (pixels beyond the
/// mask's edge count as outside), capped at `cap + 1`.
fn distance_to_edge(region: &BinaryMask, x: usize, y: usize, cap: usize) -> usize {
    let (w, h) = region.dims();
    let outside = |px: isize, py: isize| {
        px < 0 || py < 0 || px >= w as isize || py >= h as isize || !region.get(px as usize, py as usize)
    };
    let (cx, cy) = (x as isize, y as isize);
    for r in 1..=cap as isize {
        let ring_hit = (-r..=r).any(|d| {
            outside(cx + d, cy - r) || outside(cx + d, cy + r) || outside(cx - r, cy + d) || outside(cx + r, cy + d)
        });
        if ring_hit {
            return r as usize;
        }
    }
    cap + 1
}

/// Blend weight of the patch at a region pixel: `min(1, d / (feather + 1))`, with `d` the
/// distance to the region edge.
pub fn feather_alpha(region: &BinaryMask, x: usize, y: usize, feather: usize) -> f64 {
    if feather == 0 {
        return 1.0;
    }
    let d = distance_to_edge(region, x, y, feather);
    (d as f64 / (feather + 1) as f64).min(1.0)
}

/// Writes `patch` into `base` at `bbox`, but only where `region_mask` is set. Within
/// `feather` pixels of the region edge the patch is linearly blended over the base.
pub fn composite_patch(
    base: &RgbImage,
    patch: &RgbImage,
    bbox: &BBox,
    region_mask: &BinaryMask,
    feather: usize,
) -> Result<RgbImage> {
    let box_dims = (bbox.width(), bbox.height());
    if !bbox.fits_within(base.width(), base.height()) {
        return Err(Error::invalid(format!(
            "box {bbox:?} exceeds {}x{} image",
            base.width(),
            base.height()
        )));
    }
    if patch.dims() != box_dims || region_mask.dims() != box_dims {
        return Err(Error::invalid(format!(
            "patch {}x{} and region {}x{} must both match box {}x{}",
            patch.width(),
            patch.height(),
            region_mask.width(),
            region_mask.height(),
            box_dims.0,
            box_dims.1
        )));
    }
    let mut out = base.clone();
    for (x, y) in region_mask.foreground() {
        let (sx, sy) = (bbox.x0 + x, bbox.y0 + y);
        let alpha = feather_alpha(region_mask, x, y, feather);
        let p = patch.get(x, y);
        let value = if alpha >= 1.0 {
            p
        } else {
            let b = base.get(sx, sy);
            std::array::from_fn(|c| (alpha * p[c] as f64 + (1.0 - alpha) * b[c] as f64).round() as u8)
        };
        out.put(sx, sy, value);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOptions {
    pub scale: f64,
    pub dilation_radius: usize,
    pub feather: usize,
    pub connectivity: Connectivity,
    pub prompt: String,
    /// Inpaint crops concurrently. Compositing still happens in label order, and every crop
    /// is cut from the unmodified input, so the result does not depend on this flag.
    pub parallel_crops: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            scale: DEFAULT_CROP_SCALE,
            dilation_radius: 1,
            feather: DEFAULT_FEATHER,
            connectivity: Connectivity::default(),
            prompt: crate::backends::SCENE_PROMPT.to_string(),
            parallel_crops: false,
        }
    }
}

fn inpaint_crop(image: &RgbImage, crop: &Crop, inpainter: &dyn Inpainter, prompt: &str) -> Result<RgbImage> {
    let patch = image.crop(&crop.bbox)?;
    let out = inpainter
        .inpaint(&patch, &crop.region_mask, prompt)
        .map_err(|e| Error::Pipeline {
            label: crop.component_label,
            source: Box::new(e),
        })?;
    if out.dims() != patch.dims() {
        return Err(Error::Protocol(format!(
            "component {}: inpainter returned {}x{} patch for {}x{} crop",
            crop.component_label,
            out.width(),
            out.height(),
            patch.width(),
            patch.height()
        )));
    }
    Ok(out)
}

/// Zoom-in refinement of `image` given its raw artifact `mask`.
pub fn refine(
    image: &RgbImage,
    mask: &BinaryMask,
    inpainter: &dyn Inpainter,
    options: &RefineOptions,
) -> Result<RgbImage> {
    let plan = plan_crops(
        mask,
        image.dims(),
        options.scale,
        options.dilation_radius,
        options.connectivity,
    )?;
    refine_with_plan(image, &plan, inpainter, options)
}

pub fn refine_with_plan(
    image: &RgbImage,
    plan: &CropPlan,
    inpainter: &dyn Inpainter,
    options: &RefineOptions,
) -> Result<RgbImage> {
    if plan.source_dims != image.dims() {
        return Err(Error::invalid("crop plan was made for a different image size"));
    }
    if plan.is_empty() {
        return Ok(image.clone());
    }
    let parallel = options.parallel_crops && inpainter.max_concurrency() != Some(1);
    let patches: Vec<RgbImage> = if parallel {
        plan.crops
            .par_iter()
            .map(|c| inpaint_crop(image, c, inpainter, &options.prompt))
            .collect::<Result<_>>()?
    } else {
        plan.crops
            .iter()
            .map(|c| inpaint_crop(image, c, inpainter, &options.prompt))
            .collect::<Result<_>>()?
    };
    let mut out = image.clone();
    for (crop, patch) in plan.crops.iter().zip(&patches) {
        out = composite_patch(&out, patch, &crop.bbox, &crop.region_mask, options.feather)?;
    }
    Ok(out)
}

/// Single-pass baseline: one inpainter call on the whole image with the dilated mask.
pub fn naive_refine(
    image: &RgbImage,
    mask: &BinaryMask,
    inpainter: &dyn Inpainter,
    dilation_radius: usize,
    prompt: &str,
) -> Result<RgbImage> {
    if mask.dims() != image.dims() {
        return Err(Error::invalid(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    let dilated = dilate(mask, dilation_radius);
    if dilated.is_empty() {
        return Ok(image.clone());
    }
    let out = inpainter
        .inpaint(image, &dilated, prompt)
        .map_err(|e| Error::Pipeline {
            label: 0,
            source: Box::new(e),
        })?;
    if out.dims() != image.dims() {
        return Err(Error::Protocol(format!(
            "inpainter returned {}x{} image for {}x{} input",
            out.width(),
            out.height(),
            image.width(),
            image.height()
        )));
    }
    let (w, h) = image.dims();
    composite_patch(image, &out, &BBox::full(w, h), &dilated, 0)
}
