//! Subcommand implementations. Each command maps manifest entries through a worker pool,
//! writes its per-item and aggregate outputs, and returns a run summary.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _};
use pal_core::backends::{self, default_prompt, DetectorBackend, InpainterBackend};
use pal_core::eval::{read_votes_csv, significance_report, EvalReport, ImageConfusion};
use pal_core::par::{
    par, par_heatmap, par_histogram, per_class_par, percentile_index, read_jsonl, select_best, write_histogram_csv,
    write_jsonl,
};
use pal_core::raster::{encode_gray, encode_image, encode_mask, read_image, read_label_map, read_mask, LabelMap};
use pal_core::refine::{naive_refine, plan_crops, refine_with_plan, RefineOptions};
use pal_core::{confusion_counts, rank_by_par, BBox, BinaryMask, ParRecord, RgbImage};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::manifest::{Entry, Manifest, Split};
use crate::output::{ItemReport, ItemStatus, OutputDir, RunSummary};

/// Why a command stopped before producing its summary.
#[derive(Debug, Error)]
pub enum CommandError {
    /// Bad flags, config, manifest or backend settings; nothing was processed.
    #[error("{0:#}")]
    Config(anyhow::Error),
    /// Aggregate outputs could not be produced.
    #[error("{0:#}")]
    Fatal(anyhow::Error),
}

fn config_err(e: impl Into<anyhow::Error>) -> CommandError {
    CommandError::Config(e.into())
}

fn fatal(e: impl Into<anyhow::Error>) -> CommandError {
    CommandError::Fatal(e.into())
}

/// Where `par`, `rank`, `select` and `stats` take artifact masks from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    /// `mask_path` when the entry has one, otherwise the configured detector.
    #[default]
    Pred,
    /// `gt_mask_path`, required on every entry.
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum GroupBy {
    #[default]
    All,
    Task,
    Domain,
}

/// Shared state for one invocation.
pub struct Context {
    pub command: String,
    pub manifest: Option<Manifest>,
    pub config: PipelineConfig,
    pub out: OutputDir,
    pub split: Option<Split>,
    pub seed: u64,
    pub parallelism: usize,
    pub strict: bool,
    pub token: Option<String>,
}

struct ItemOutcome<T> {
    report: ItemReport,
    value: Option<T>,
}

impl Context {
    fn entries(&self) -> Result<Vec<&Entry>, CommandError> {
        let manifest = self
            .manifest
            .as_ref()
            .ok_or_else(|| config_err(anyhow!("{} needs --manifest", self.command)))?;
        Ok(manifest.select(self.split))
    }

    fn detector(&self) -> Result<DetectorBackend, CommandError> {
        DetectorBackend::from_spec(&self.config.detector, self.token.clone()).map_err(config_err)
    }

    fn inpainter(&self) -> Result<InpainterBackend, CommandError> {
        InpainterBackend::from_spec(&self.config.inpainter, self.token.clone()).map_err(config_err)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CommandError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()
            .map_err(fatal)
    }

    /// Runs `f` on every entry. Results come back in manifest order whatever the worker
    /// count. With `strict`, entries not yet started when one fails are skipped.
    fn for_each<T, F>(&self, entries: &[&Entry], f: F) -> Result<Vec<ItemOutcome<T>>, CommandError>
    where
        T: Send,
        F: Fn(&Entry) -> anyhow::Result<T> + Sync,
    {
        let abort = AtomicBool::new(false);
        let run = |e: &&Entry| {
            let start = Instant::now();
            if abort.load(Ordering::SeqCst) {
                return ItemOutcome {
                    report: ItemReport {
                        image_id: e.image_id.clone(),
                        status: ItemStatus::Skipped,
                        error: None,
                        elapsed_ms: 0,
                    },
                    value: None,
                };
            }
            let result = f(e);
            let elapsed_ms = start.elapsed().as_millis() as u64;
            match result {
                Ok(v) => ItemOutcome {
                    report: ItemReport {
                        image_id: e.image_id.clone(),
                        status: ItemStatus::Ok,
                        error: None,
                        elapsed_ms,
                    },
                    value: Some(v),
                },
                Err(err) => {
                    log::error!("{}: {err:#}", e.image_id);
                    if self.strict {
                        abort.store(true, Ordering::SeqCst);
                    }
                    ItemOutcome {
                        report: ItemReport {
                            image_id: e.image_id.clone(),
                            status: ItemStatus::Failed,
                            error: Some(format!("{err:#}")),
                            elapsed_ms,
                        },
                        value: None,
                    }
                }
            }
        };
        let pool = self.pool()?;
        Ok(pool.install(|| entries.par_iter().map(run).collect()))
    }

    fn summary(&self, items: Vec<ItemReport>) -> RunSummary {
        RunSummary {
            command: self.command.clone(),
            config_hash: self.config.hash(),
            seed: self.seed,
            split: self.split.map_or_else(|| "all".to_string(), |s| s.to_string()),
            split_summary: self.manifest.as_ref().map(Manifest::split_summary),
            items,
            outputs: self.out.written(),
        }
    }

    /// Artifact mask for an entry. Reads the image only when the detector must run.
    fn load_mask(&self, entry: &Entry, source: MaskSource, detector: &DetectorBackend) -> anyhow::Result<BinaryMask> {
        match (source, &entry.mask_path, &entry.gt_mask_path) {
            (MaskSource::Gt, _, Some(gt)) => Ok(read_mask(gt, self.config.mask_threshold)?),
            (MaskSource::Gt, _, None) => bail!("entry has no gt_mask_path"),
            (MaskSource::Pred, Some(p), _) => Ok(read_mask(p, self.config.mask_threshold)?),
            (MaskSource::Pred, None, _) => {
                let image = read_image(&entry.image_path)?;
                Ok(backends::detect(detector, &entry.image_id, &image)?)
            }
        }
    }

    fn par_records(&self, entries: &[&Entry], source: MaskSource) -> Result<(Vec<ParRecord>, Vec<ItemReport>), CommandError> {
        let detector = self.detector()?;
        let outcomes = self.for_each(entries, |e| {
            let mask = self.load_mask(e, source, &detector)?;
            Ok(ParRecord::new(&e.image_id, par(&mask))?
                .with_task(&e.task)
                .with_domain(&e.domain))
        })?;
        Ok(split_outcomes(outcomes))
    }
}

fn split_outcomes<T>(outcomes: Vec<ItemOutcome<T>>) -> (Vec<T>, Vec<ItemReport>) {
    let mut values = Vec::new();
    let mut reports = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        values.extend(o.value);
        reports.push(o.report);
    }
    (values, reports)
}

fn jsonl(records: &[ParRecord]) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf)?;
    Ok(buf)
}

fn jsonl_of<T: Serialize>(rows: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn detect(ctx: &Context) -> Result<RunSummary, CommandError> {
    let entries = ctx.entries()?;
    let detector = ctx.detector()?;
    let outcomes = ctx.for_each(&entries, |e| {
        let image = read_image(&e.image_path)?;
        let mask = backends::detect(&detector, &e.image_id, &image)?;
        ctx.out.write(&format!("masks/{}.png", e.image_id), &encode_mask(&mask)?)
    })?;
    let (_, reports) = split_outcomes(outcomes);
    Ok(ctx.summary(reports))
}

pub fn par_cmd(ctx: &Context, source: MaskSource) -> Result<RunSummary, CommandError> {
    let entries = ctx.entries()?;
    let (records, reports) = ctx.par_records(&entries, source)?;
    ctx.out.write("par.jsonl", &jsonl(&records).map_err(fatal)?).map_err(fatal)?;
    Ok(ctx.summary(reports))
}

#[derive(Serialize)]
struct PercentileSample {
    percentile: f64,
    rank: usize,
    record: ParRecord,
}

fn load_or_compute(
    ctx: &Context,
    records: Option<&Path>,
    source: MaskSource,
) -> Result<(Vec<ParRecord>, Vec<ItemReport>), CommandError> {
    match records {
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))
                .map_err(config_err)?;
            let records = read_jsonl(BufReader::new(file), &path.display().to_string()).map_err(config_err)?;
            Ok((records, Vec::new()))
        }
        None => {
            let entries = ctx.entries()?;
            ctx.par_records(&entries, source)
        }
    }
}

pub fn rank(
    ctx: &Context,
    records: Option<&Path>,
    source: MaskSource,
    percentiles: &[f64],
) -> Result<RunSummary, CommandError> {
    if let Some(bad) = percentiles.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(config_err(anyhow!("percentile {bad} outside [0, 100]")));
    }
    let (records, reports) = load_or_compute(ctx, records, source)?;
    let ranked = rank_by_par(&records).map_err(fatal)?;
    ctx.out.write("ranked.jsonl", &jsonl(&ranked).map_err(fatal)?).map_err(fatal)?;
    let samples = if ranked.is_empty() {
        Vec::new()
    } else {
        percentiles
            .iter()
            .map(|&p| {
                let rank = percentile_index(ranked.len(), p)?;
                Ok(PercentileSample {
                    percentile: p,
                    rank,
                    record: ranked[rank].clone(),
                })
            })
            .collect::<pal_core::Result<Vec<_>>>()
            .map_err(fatal)?
    };
    ctx.out.write_json("percentiles.json", &samples).map_err(fatal)?;
    Ok(ctx.summary(reports))
}

#[derive(Serialize)]
struct Selected {
    group: String,
    #[serde(flatten)]
    record: ParRecord,
}

pub fn select(
    ctx: &Context,
    records: Option<&Path>,
    source: MaskSource,
    group_by: GroupBy,
) -> Result<RunSummary, CommandError> {
    let (records, reports) = load_or_compute(ctx, records, source)?;
    let mut groups: BTreeMap<String, Vec<ParRecord>> = BTreeMap::new();
    for r in records {
        let key = match group_by {
            GroupBy::All => Some("all".to_string()),
            GroupBy::Task => r.task.clone(),
            GroupBy::Domain => r.domain.clone(),
        }
        .ok_or_else(|| fatal(anyhow!("record {} has no {group_by:?} tag", r.image_id)))?;
        groups.entry(key).or_default().push(r);
    }
    let selected = groups
        .into_iter()
        .map(|(group, candidates)| {
            Ok(Selected {
                group,
                record: select_best(&candidates)?,
            })
        })
        .collect::<pal_core::Result<Vec<_>>>()
        .map_err(fatal)?;
    ctx.out.write("selected.jsonl", &jsonl_of(&selected).map_err(fatal)?).map_err(fatal)?;
    Ok(ctx.summary(reports))
}

#[derive(Serialize)]
struct PlannedCrop {
    component_label: u32,
    bbox: BBox,
    component_bbox: BBox,
    region_pixels: usize,
}

#[derive(Serialize)]
struct RefinePlanRow {
    image_id: String,
    mode: &'static str,
    prompt: String,
    dilation_radius: usize,
    mask_pixels: usize,
    crops: Vec<PlannedCrop>,
}

pub fn refine(ctx: &Context, naive: bool) -> Result<RunSummary, CommandError> {
    let entries = ctx.entries()?;
    let detector = ctx.detector()?;
    let inpainter = ctx.inpainter()?;
    let cfg = &ctx.config;
    let outcomes = ctx.for_each(&entries, |e| {
        let image: RgbImage = read_image(&e.image_path)?;
        let mask = ctx.load_mask(e, MaskSource::Pred, &detector)?;
        if mask.dims() != image.dims() {
            bail!(
                "mask is {}x{} but image is {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            );
        }
        let radius = cfg.dilation.radius_for(image.width(), image.height());
        let prompt = default_prompt(&cfg.prompt_rules, &e.domain).to_string();
        let (refined, crops) = if naive {
            (naive_refine(&image, &mask, &inpainter, radius, &prompt)?, Vec::new())
        } else {
            let options = RefineOptions {
                scale: cfg.crop_scale,
                dilation_radius: radius,
                feather: cfg.feather,
                connectivity: cfg.connectivity,
                prompt: prompt.clone(),
                parallel_crops: false,
            };
            let plan = plan_crops(&mask, image.dims(), options.scale, radius, options.connectivity)?;
            let crops = plan
                .crops
                .iter()
                .map(|c| PlannedCrop {
                    component_label: c.component_label,
                    bbox: c.bbox,
                    component_bbox: c.component_bbox,
                    region_pixels: c.region_mask.foreground_count(),
                })
                .collect();
            (refine_with_plan(&image, &plan, &inpainter, &options)?, crops)
        };
        ctx.out.write(&format!("refined/{}.png", e.image_id), &encode_image(&refined)?)?;
        Ok(RefinePlanRow {
            image_id: e.image_id.clone(),
            mode: if naive { "naive" } else { "zoom" },
            prompt,
            dilation_radius: radius,
            mask_pixels: mask.foreground_count(),
            crops,
        })
    })?;
    let done: Vec<&Entry> = entries
        .iter()
        .zip(&outcomes)
        .filter(|(_, o)| o.value.is_some())
        .map(|(e, _)| *e)
        .collect();
    let (rows, reports) = split_outcomes(outcomes);
    ctx.out.write("refine_plan.jsonl", &jsonl_of(&rows).map_err(fatal)?).map_err(fatal)?;
    // A manifest over the refined images, so they can be fed straight back into
    // `detect`, `par` or `rank`.
    let refined = Manifest {
        entries: done
            .into_iter()
            .map(|e| Entry {
                image_id: e.image_id.clone(),
                image_path: PathBuf::from(format!("{}.png", e.image_id)),
                mask_path: None,
                gt_mask_path: None,
                label_map_path: None,
                task: e.task.clone(),
                domain: e.domain.clone(),
                split: e.split,
            })
            .collect(),
    };
    ctx.out.write_json("refined/manifest.json", &refined).map_err(fatal)?;
    Ok(ctx.summary(reports))
}

#[derive(Serialize)]
struct TaskEval {
    task: String,
    images: usize,
    iou_artifact: f64,
    iou_background: f64,
    miou: f64,
}

pub fn eval(
    ctx: &Context,
    votes: Option<&Path>,
    alpha: f64,
    permutations: u64,
) -> Result<RunSummary, CommandError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(config_err(anyhow!("alpha must be in (0, 1), got {alpha}")));
    }
    if permutations == 0 {
        return Err(config_err(anyhow!("permutations must be positive")));
    }
    let votes = match votes {
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))
                .map_err(config_err)?;
            Some(read_votes_csv(file, &path.display().to_string()).map_err(config_err)?)
        }
        None => None,
    };
    if votes.is_none() && ctx.manifest.is_none() {
        return Err(config_err(anyhow!("eval needs --manifest, --votes or both")));
    }

    let mut reports = Vec::new();
    if ctx.manifest.is_some() {
        let entries = ctx.entries()?;
        let detector = ctx.detector()?;
        let outcomes = ctx.for_each(&entries, |e| {
            let gt = ctx.load_mask(e, MaskSource::Gt, &detector)?;
            let pred = ctx.load_mask(e, MaskSource::Pred, &detector)?;
            let confusion = confusion_counts(&pred, &gt)?;
            Ok((
                e.task.clone(),
                ImageConfusion {
                    image_id: e.image_id.clone(),
                    confusion,
                },
            ))
        })?;
        let (values, item_reports) = split_outcomes(outcomes);
        reports = item_reports;
        let mut by_task: BTreeMap<String, Vec<ImageConfusion>> = BTreeMap::new();
        for (task, c) in &values {
            by_task.entry(task.clone()).or_default().push(c.clone());
        }
        let report = EvalReport::from_confusions(values.into_iter().map(|(_, c)| c).collect());
        ctx.out.write_json("eval_report.json", &report).map_err(fatal)?;
        let rows: Vec<TaskEval> = by_task
            .into_iter()
            .map(|(task, confusions)| {
                let r = EvalReport::from_confusions(confusions);
                TaskEval {
                    task,
                    images: r.per_image.len(),
                    iou_artifact: r.iou_artifact,
                    iou_background: r.iou_background,
                    miou: r.miou,
                }
            })
            .collect();
        ctx.out.write("eval_by_task.csv", &csv_bytes(&rows).map_err(fatal)?).map_err(fatal)?;
    }
    if let Some(votes) = votes {
        let pool = ctx.pool()?;
        let report = pool
            .install(|| significance_report(&votes, permutations, ctx.seed, alpha))
            .map_err(fatal)?;
        ctx.out.write_json("significance.json", &report).map_err(fatal)?;
    }
    Ok(ctx.summary(reports))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| anyhow!("{}", e.error()))
}

/// Domain names become file names; anything but `[A-Za-z0-9_-]` maps to `_`.
pub fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn stats(
    ctx: &Context,
    source: MaskSource,
    classes: Option<&Path>,
    heatmap_side: usize,
) -> Result<RunSummary, CommandError> {
    if heatmap_side == 0 {
        return Err(config_err(anyhow!("heatmap size must be positive")));
    }
    let class_names: BTreeMap<u32, String> = match classes {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(config_err)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing class names {}", path.display()))
                .map_err(config_err)?
        }
        None => BTreeMap::new(),
    };
    let entries = ctx.entries()?;
    let detector = ctx.detector()?;
    struct Item {
        record: ParRecord,
        domain: String,
        mask: BinaryMask,
        labels: Option<LabelMap>,
    }
    let outcomes = ctx.for_each(&entries, |e| {
        let mask = ctx.load_mask(e, source, &detector)?;
        let labels = match &e.label_map_path {
            Some(p) => Some(read_label_map(p)?),
            None => None,
        };
        Ok(Item {
            record: ParRecord::new(&e.image_id, par(&mask))?
                .with_task(&e.task)
                .with_domain(&e.domain),
            domain: e.domain.clone(),
            mask,
            labels,
        })
    })?;
    let (items, reports) = split_outcomes(outcomes);

    let records: Vec<ParRecord> = items.iter().map(|i| i.record.clone()).collect();
    let hist = par_histogram(&records).map_err(fatal)?;
    let mut csv = Vec::new();
    write_histogram_csv(&hist, &mut csv).map_err(fatal)?;
    ctx.out.write("par_by_task.csv", &csv).map_err(fatal)?;

    let mut by_domain: BTreeMap<String, Vec<BinaryMask>> = BTreeMap::new();
    for item in &items {
        by_domain.entry(file_safe(&item.domain)).or_default().push(item.mask.clone());
    }
    let all: Vec<BinaryMask> = items.iter().map(|i| i.mask.clone()).collect();
    let heatmaps: Vec<(String, &[BinaryMask])> = by_domain
        .iter()
        .map(|(d, m)| (format!("heatmap_{d}.png"), m.as_slice()))
        .chain((!all.is_empty()).then(|| ("heatmap_all.png".to_string(), all.as_slice())))
        .collect();
    for (name, masks) in heatmaps {
        let heat = par_heatmap(masks, heatmap_side, heatmap_side).map_err(fatal)?;
        let png = encode_gray(heat.grid_width, heat.grid_height, heat.to_gray()).map_err(fatal)?;
        ctx.out.write(&name, &png).map_err(fatal)?;
    }

    let pairs: Vec<(BinaryMask, LabelMap)> = items
        .into_iter()
        .filter_map(|i| i.labels.map(|l| (i.mask, l)))
        .collect();
    if !pairs.is_empty() {
        let table = per_class_par(&pairs, &class_names).map_err(fatal)?;
        let mut csv = Vec::new();
        table.write_csv(&mut csv).map_err(fatal)?;
        ctx.out.write("class_par.csv", &csv).map_err(fatal)?;
    }
    Ok(ctx.summary(reports))
}

/// Probes every configured remote backend.
pub fn health(ctx: &Context) -> Result<RunSummary, CommandError> {
    let mut reports = Vec::new();
    let mut probe = |name: &str, client: Option<&pal_core::backends::RemoteClient>| {
        if let Some(client) = client {
            let start = Instant::now();
            let result = client.health();
            if let Err(e) = &result {
                log::error!("{name}: {e}");
            }
            reports.push(ItemReport {
                image_id: name.to_string(),
                status: if result.is_ok() { ItemStatus::Ok } else { ItemStatus::Failed },
                error: result.err().map(|e| e.to_string()),
                elapsed_ms: start.elapsed().as_millis() as u64,
            });
        }
    };
    let detector = ctx.detector()?;
    let inpainter = ctx.inpainter()?;
    probe(
        "detector",
        match &detector {
            DetectorBackend::Remote(d) => Some(&d.client),
            _ => None,
        },
    );
    probe(
        "inpainter",
        match &inpainter {
            InpainterBackend::Remote(i) => Some(&i.client),
            _ => None,
        },
    );
    Ok(ctx.summary(reports))
}
