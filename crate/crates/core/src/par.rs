//! Perceptual Artifacts Ratio (PAR): artifact area over image area, plus the corpus-level
//! statistics, ranking and selection built on it. Lower PAR means fewer artifacts.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::LabelMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParRecord {
    pub image_id: String,
    pub par: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl ParRecord {
    pub fn new(image_id: impl Into<String>, par: f64) -> Result<Self> {
        let record = Self {
            image_id: image_id.into(),
            par,
            task: None,
            domain: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task = Some(task.into());
        self
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::invalid("record with empty image_id"));
        }
        if !(0.0..=1.0).contains(&self.par) {
            return Err(Error::invalid(format!(
                "record {}: par {} outside [0, 1]",
                self.image_id, self.par
            )));
        }
        Ok(())
    }
}

/// Foreground pixels divided by grid area.
pub fn par(mask: &BinaryMask) -> f64 {
    mask.foreground_count() as f64 / mask.area() as f64
}

fn ensure_unique_ids(records: &[ParRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.image_id.as_str()) {
            return Err(Error::invalid(format!("duplicate image_id {:?}", r.image_id)));
        }
    }
    Ok(())
}

fn best_first(a: &ParRecord, b: &ParRecord) -> std::cmp::Ordering {
    a.par.total_cmp(&b.par).then_with(|| a.image_id.cmp(&b.image_id))
}

/// Best-first ordering: ascending PAR, ties by ascending `image_id`.
pub fn rank_by_par(records: &[ParRecord]) -> Result<Vec<ParRecord>> {
    ensure_unique_ids(records)?;
    let mut ranked = records.to_vec();
    ranked.sort_by(best_first);
    Ok(ranked)
}

/// Index picked by nearest-rank selection: `round(p/100 × (n−1))`, clamped.
pub fn percentile_index(n: usize, percentile: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("percentile of an empty ranking"));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::invalid(format!("percentile {percentile} outside [0, 100]")));
    }
    let idx = (percentile / 100.0 * (n - 1) as f64).round() as usize;
    Ok(idx.min(n - 1))
}

/// Picks corpus members at the given percentiles of an already ranked list; the 0th is
/// the best (lowest PAR), the 100th the worst.
pub fn percentile_samples(ranked: &[ParRecord], percentiles: &[f64]) -> Result<Vec<ParRecord>> {
    percentiles
        .iter()
        .map(|&p| Ok(ranked[percentile_index(ranked.len(), p)?].clone()))
        .collect()
}

/// argmin-PAR selection among alternative outputs.
pub fn select_best(candidates: &[ParRecord]) -> Result<ParRecord> {
    candidates
        .iter()
        .min_by(|a, b| best_first(a, b))
        .cloned()
        .ok_or_else(|| Error::invalid("no candidates to select from"))
}

/// Per-cell artifact frequency of a set of masks resampled onto a common grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParHeatmap {
    pub grid_width: usize,
    pub grid_height: usize,
    pub values: Vec<f64>,
    pub count: usize,
}

impl ParHeatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.grid_width + x]
    }

    /// Values scaled to 0..=255 for writing as a grayscale image.
    pub fn to_gray(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round() as u8).collect()
    }
}

pub const DEFAULT_HEATMAP_SIDE: usize = 512;

pub fn par_heatmap(masks: &[BinaryMask], grid_width: usize, grid_height: usize) -> Result<ParHeatmap> {
    if masks.is_empty() {
        return Err(Error::invalid("heatmap of an empty mask list"));
    }
    let mut counts = vec![0u64; grid_width * grid_height];
    for mask in masks {
        let resampled = mask.resize_nearest(grid_width, grid_height)?;
        for (c, &b) in counts.iter_mut().zip(resampled.bits()) {
            *c += b as u64;
        }
    }
    let n = masks.len() as f64;
    Ok(ParHeatmap {
        grid_width,
        grid_height,
        values: counts.into_iter().map(|c| c as f64 / n).collect(),
        count: masks.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParRow {
    pub class_id: u32,
    pub class_name: String,
    pub artifact_pixels: u64,
    pub class_pixels: u64,
    pub par: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassParTable {
    /// Sorted by descending PAR, ties by ascending class id.
    pub rows: Vec<ClassParRow>,
}

impl ClassParTable {
    pub fn get(&self, class_id: u32) -> Option<&ClassParRow> {
        self.rows.iter().find(|r| r.class_id == class_id)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(["class_id", "class_name", "artifact_pixels", "class_pixels", "par"])
            .map_err(csv_err)?;
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Encode(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Encode(e.to_string())
}

/// Corpus-wide PAR per semantic class, as a ratio of summed pixel counts.
/// Classes absent from every label map are omitted; unnamed classes get `class_<id>`.
pub fn per_class_par(
    pairs: &[(BinaryMask, LabelMap)],
    class_names: &BTreeMap<u32, String>,
) -> Result<ClassParTable> {
    let mut totals: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for (i, (mask, labels)) in pairs.iter().enumerate() {
        if mask.dims() != labels.dims() {
            return Err(Error::invalid(format!(
                "pair {i}: mask {}x{} vs label map {}x{}",
                mask.width(),
                mask.height(),
                labels.width,
                labels.height
            )));
        }
        for (&bit, &class) in mask.bits().iter().zip(&labels.labels) {
            let entry = totals.entry(class).or_default();
            entry.0 += bit as u64;
            entry.1 += 1;
        }
    }
    let mut rows: Vec<ClassParRow> = totals
        .into_iter()
        .filter(|(_, (_, total))| *total > 0)
        .map(|(class_id, (artifact_pixels, class_pixels))| ClassParRow {
            class_id,
            class_name: class_names
                .get(&class_id)
                .cloned()
                .unwrap_or_else(|| format!("class_{class_id}")),
            artifact_pixels,
            class_pixels,
            par: artifact_pixels as f64 / class_pixels as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.par.total_cmp(&a.par).then(a.class_id.cmp(&b.class_id)));
    Ok(ClassParTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaskPar {
    pub mean_par: f64,
    pub count: usize,
}

/// Sum with fixed pairwise association, so the result does not depend on how work was split.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Mean PAR per task tag.
pub fn par_histogram(records: &[ParRecord]) -> Result<BTreeMap<String, TaskPar>> {
    let mut by_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let task = r
            .task
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("record {} has no task tag", r.image_id)))?;
        by_task.entry(task.clone()).or_default().push(r.par);
    }
    Ok(by_task
        .into_iter()
        .map(|(task, pars)| {
            let stat = TaskPar {
                mean_par: pairwise_sum(&pars) / pars.len() as f64,
                count: pars.len(),
            };
            (task, stat)
        })
        .collect())
}

pub fn write_histogram_csv<W: Write>(hist: &BTreeMap<String, TaskPar>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "mean_par", "count"]).map_err(csv_err)?;
    for (task, stat) in hist {
        w.write_record([task.clone(), stat.mean_par.to_string(), stat.count.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Encode(e.to_string()))
}

pub fn write_jsonl<W: Write>(records: &[ParRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Encode(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::Encode(e.to_string()))?;
    }
    Ok(())
}

/// Reads JSON-lines records; blank lines are skipped. Errors carry the 1-based line number.
pub fn read_jsonl<R: BufRead>(input: R, name: &str) -> Result<Vec<ParRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Decode {
            name: name.to_string(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ParRecord = serde_json::from_str(&line).map_err(|e| Error::Decode {
            name: name.to_string(),
            message: format!("line {}: {e}", i + 1),
        })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}
