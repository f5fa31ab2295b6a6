//! Binary artifact masks and the morphology the refinement pipeline needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel artifact indicator over a `width × height` grid, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.width, self.height)?;
        if self.width * self.height <= 4096 {
            for row in self.bits.chunks(self.width) {
                let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
                writeln!(f, "  {line}")?;
            }
        }
        Ok(())
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "mask dimensions must be at least 1x1, got {width}x{height}"
        )));
    }
    Ok(())
}

impl BinaryMask {
    /// An all-background mask.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![false; width * height],
        })
    }

    /// An all-foreground mask.
    pub fn full(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![true; width * height],
        })
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask of {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Builds a mask with the given pixels set. Out-of-range pixels are an error.
    pub fn from_pixels(
        width: usize,
        height: usize,
        pixels: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut mask = Self::new(width, height)?;
        for (x, y) in pixels {
            if x >= width || y >= height {
                return Err(Error::invalid(format!(
                    "pixel ({x},{y}) outside {width}x{height} mask"
                )));
            }
            mask.set(x, y, true);
        }
        Ok(mask)
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

    #[inline]
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when no pixel is set.
    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground pixel coordinates in raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        ensure_same_dims(self, other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Copies the pixels covered by `bbox` into a new mask of the box's size.
    pub fn crop(&self, bbox: &BBox) -> Result<BinaryMask> {
        if !bbox.fits_within(self.width, self.height) {
            return Err(Error::invalid(format!(
                "box {bbox:?} exceeds {}x{} mask",
                self.width, self.height
            )));
        }
        BinaryMask::from_fn(bbox.width(), bbox.height(), |x, y| {
            self.get(bbox.x0 + x, bbox.y0 + y)
        })
    }

    /// Nearest-neighbour resampling: target cell `(gx, gy)` samples the source pixel whose
    /// extent contains the cell centre.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<BinaryMask> {
        check_dims(width, height)?;
        let (sw, sh) = (self.width, self.height);
        BinaryMask::from_fn(width, height, |gx, gy| {
            let sx = ((2 * gx + 1) * sw / (2 * width)).min(sw - 1);
            let sy = ((2 * gy + 1) * sh / (2 * height)).min(sh - 1);
            self.get(sx, sy)
        })
    }
}

pub(crate) fn ensure_same_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "mask dimensions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Inclusive pixel rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x1 < x0 || y1 < y0 {
            return Err(Error::invalid(format!(
                "degenerate box ({x0},{y0})-({x1},{y1})"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// The box covering a whole `width × height` grid.
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width - 1,
            y1: height - 1,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && self.x1 < width && self.y1 < height
    }

    pub fn contains_point(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }
}

/// Tight bounding box of a pixel set.
pub fn bounding_box<'a>(pixels: impl IntoIterator<Item = &'a (usize, usize)>) -> Result<BBox> {
    let mut it = pixels.into_iter();
    let &(x, y) = it
        .next()
        .ok_or_else(|| Error::invalid("bounding box of an empty pixel set"))?;
    Ok(it.fold(BBox { x0: x, y0: y, x1: x, y1: y }, |b, &(x, y)| BBox {
        x0: b.x0.min(x),
        y0: b.y0.min(y),
        x1: b.x1.max(x),
        y1: b.y1.max(y),
    }))
}

/// Which neighbours of a pixel count as adjacent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// N, S, E and W neighbours.
    Four,
    /// All eight surrounding pixels.
    #[default]
    Eight,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// 1-based, assigned in raster order of each component's first pixel.
    pub label: u32,
    pub area: usize,
    pub bbox: BBox,
    /// Member pixels in raster order.
    pub pixels: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSet {
    pub components: Vec<Component>,
    pub connectivity: Connectivity,
    pub width: usize,
    pub height: usize,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Component> {
        self.components.iter()
    }

    /// Rasterises one component back into a full-size mask.
    pub fn component_mask(&self, component: &Component) -> BinaryMask {
        let mut mask = BinaryMask::new(self.width, self.height).expect("dims validated on construction");
        for &(x, y) in &component.pixels {
            mask.set(x, y, true);
        }
        mask
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let next = parent[i as usize];
        parent[i as usize] = parent[next as usize];
        i = next;
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    // Keep the smaller provisional label as root so roots follow raster order.
    if ra < rb {
        parent[rb as usize] = ra;
    } else if rb < ra {
        parent[ra as usize] = rb;
    }
}

/// Labels the foreground of `mask` with a two-pass union-find scan.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentSet {
    let (w, h) = mask.dims();
    let mut provisional = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |label: u32| {
                if label != 0 {
                    neighbours[n] = label;
                    n += 1;
                }
            };
            if x > 0 {
                push(provisional[y * w + x - 1]);
            }
            if y > 0 {
                push(provisional[(y - 1) * w + x]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(provisional[(y - 1) * w + x - 1]);
                    }
                    if x + 1 < w {
                        push(provisional[(y - 1) * w + x + 1]);
                    }
                }
            }
            let label = if n == 0 {
                let fresh = parent.len() as u32;
                parent.push(fresh);
                fresh
            } else {
                let min = *neighbours[..n].iter().min().unwrap();
                for &other in &neighbours[..n] {
                    union(&mut parent, min, other);
                }
                min
            };
            provisional[y * w + x] = label;
        }
    }

    // Final labels in raster order of first-encountered pixel.
    let mut final_label = vec![0u32; parent.len()];
    let mut components: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p) as usize;
            if final_label[root] == 0 {
                components.push(Component {
                    label: components.len() as u32 + 1,
                    area: 0,
                    bbox: BBox { x0: x, y0: y, x1: x, y1: y },
                    pixels: Vec::new(),
                });
                final_label[root] = components.len() as u32;
            }
            let c = &mut components[final_label[root] as usize - 1];
            c.pixels.push((x, y));
            c.area += 1;
            c.bbox.x0 = c.bbox.x0.min(x);
            c.bbox.x1 = c.bbox.x1.max(x);
            c.bbox.y1 = y;
        }
    }

    ComponentSet {
        components,
        connectivity,
        width: w,
        height: h,
    }
}

/// Sliding-window count along one axis: `out[i]` is the number of set entries of `line`
/// in `[i - r, i + r]` clipped to the line, together with the clipped window length.
fn window_counts(line: &[bool], radius: usize, out: &mut Vec<(usize, usize)>) {
    out.clear();
    let n = line.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &b in line {
        prefix.push(prefix.last().unwrap() + b as usize);
    }
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        out.push((prefix[hi + 1] - prefix[lo], hi - lo + 1));
    }
}

/// Applies a separable square-window filter: `keep(count, window_len)` decides each output bit.
fn separable(mask: &BinaryMask, radius: usize, keep: impl Fn(usize, usize) -> bool) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut counts = Vec::new();
    let mut horizontal = vec![false; w * h];
    for y in 0..h {
        window_counts(&mask.bits[y * w..(y + 1) * w], radius, &mut counts);
        for (x, &(c, n)) in counts.iter().enumerate() {
            horizontal[y * w + x] = keep(c, n);
        }
    }
    let mut bits = vec![false; w * h];
    let mut column = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = horizontal[y * w + x];
        }
        window_counts(&column, radius, &mut counts);
        for (y, &(c, n)) in counts.iter().enumerate() {
            bits[y * w + x] = keep(c, n);
        }
    }
    BinaryMask {
        width: w,
        height: h,
        bits,
    }
}

/// Dilation by the square structuring element of side `2r + 1`: a pixel is set iff some
/// input pixel within Chebyshev distance `radius` is set.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    separable(mask, radius, |count, _| count > 0)
}

/// Erosion by the square structuring element. Pixels outside the grid are ignored, so the
/// border does not eat into the mask.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    separable(mask, radius, |count, len| count == len)
}

/// Morphological opening (erode, then dilate).
pub fn open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

/// `max(1, round(percent/100 × longest side))`.
pub fn dilation_radius_for(width: usize, height: usize, percent: f64) -> usize {
    let r = (percent / 100.0 * width.max(height) as f64).round();
    (r as usize).max(1)
}

/// Pixel counts for the artifact class of a prediction against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Artifact-class IoU; 1 when the class is absent from both masks.
    pub fn iou_artifact(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp + self.fn_)
    }

    /// Background-class IoU; 1 when the class is absent from both masks.
    pub fn iou_background(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fp + self.fn_)
    }

    pub fn miou(&self) -> f64 {
        (self.iou_artifact() + self.iou_background()) / 2.0
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, rhs: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
            tn: self.tn + rhs.tn,
        }
    }
}

impl std::iter::Sum for Confusion {
    fn sum<I: Iterator<Item = Confusion>>(iter: I) -> Self {
        iter.fold(Confusion::default(), |a, b| a + b)
    }
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<Confusion> {
    ensure_same_dims(pred, gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}
