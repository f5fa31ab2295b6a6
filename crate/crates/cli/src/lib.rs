//! Batch front end for the artifact-localization pipeline.
//!
//! Every subcommand reads a JSON manifest and a JSON pipeline config, processes the
//! selected entries on a worker pool, writes outputs atomically under `--out`, and ends
//! with `run_summary.json`. Exit status is 0 on success, 1 when any item failed and 2 on
//! configuration errors.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use pal_core::backends::TOKEN_ENV;
use pal_core::eval::{DEFAULT_ALPHA, DEFAULT_PERMUTATIONS};
use pal_core::par::DEFAULT_HEATMAP_SIDE;

use crate::commands::{CommandError, Context, GroupBy, MaskSource};
use crate::config::PipelineConfig;
use crate::manifest::{Manifest, Split};
use crate::output::{OutputDir, RUN_SUMMARY};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ITEM_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pal", version, about = "Perceptual artifact localization and refinement")]
pub struct Cli {
    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Pipeline config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "all")]
    pub split: SplitArg,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker count; overrides the config file.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Abort after the first failed item.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a predicted artifact mask per image to masks/.
    Detect,
    /// Write per-image PAR records to par.jsonl.
    Par {
        #[arg(long, value_enum, default_value = "pred")]
        mask_source: MaskSource,
    },
    /// Rank images by PAR (best first) and sample percentiles.
    Rank {
        /// PAR records (JSONL) to rank instead of computing them from the manifest.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "pred")]
        mask_source: MaskSource,
        #[arg(long, value_delimiter = ',', default_value = "0,25,50,75,100")]
        percentiles: Vec<f64>,
    },
    /// Pick the lowest-PAR image per group.
    Select {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "pred")]
        mask_source: MaskSource,
        #[arg(long, value_enum, default_value = "all")]
        group_by: GroupBy,
    },
    /// Inpaint detected artifacts and write refined/ images.
    Refine {
        /// One inpainting call on the whole image instead of per-region crops.
        #[arg(long)]
        naive: bool,
    },
    /// Score predicted masks against ground truth and/or test preference votes.
    Eval {
        /// CSV with columns task,vote.
        #[arg(long)]
        votes: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
        permutations: u64,
    },
    /// PAR per task, artifact heatmaps per domain and PAR per semantic class.
    Stats {
        #[arg(long, value_enum, default_value = "pred")]
        mask_source: MaskSource,
        /// JSON object mapping class id to name.
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HEATMAP_SIDE)]
        heatmap_size: usize,
    },
    /// Check that configured remote backends answer.
    Health,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Detect => "detect",
            Command::Par { .. } => "par",
            Command::Rank { .. } => "rank",
            Command::Select { .. } => "select",
            Command::Refine { .. } => "refine",
            Command::Eval { .. } => "eval",
            Command::Stats { .. } => "stats",
            Command::Health => "health",
        }
    }
}

fn context(cli: &Cli) -> anyhow::Result<Context> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = cli.parallelism {
        config.parallelism = p;
    }
    config.validate()?;
    let manifest = cli.manifest.as_deref().map(Manifest::load).transpose()?;
    let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    Ok(Context {
        command: cli.command.name().to_string(),
        manifest,
        parallelism: config.parallelism,
        config,
        out: OutputDir::create(&cli.out)?,
        split: cli.split.split(),
        seed: cli.seed,
        strict: cli.strict,
        token,
    })
}

/// Runs one invocation and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let ctx = match context(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            return EXIT_CONFIG;
        }
    };
    let result = match &cli.command {
        Command::Detect => commands::detect(&ctx),
        Command::Par { mask_source } => commands::par_cmd(&ctx, *mask_source),
        Command::Rank {
            records,
            mask_source,
            percentiles,
        } => commands::rank(&ctx, records.as_deref(), *mask_source, percentiles),
        Command::Select {
            records,
            mask_source,
            group_by,
        } => commands::select(&ctx, records.as_deref(), *mask_source, *group_by),
        Command::Refine { naive } => commands::refine(&ctx, *naive),
        Command::Eval {
            votes,
            alpha,
            permutations,
        } => commands::eval(&ctx, votes.as_deref(), *alpha, *permutations),
        Command::Stats {
            mask_source,
            classes,
            heatmap_size,
        } => commands::stats(&ctx, *mask_source, classes.as_deref(), *heatmap_size),
        Command::Health => commands::health(&ctx),
    };
    let summary = match result {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                CommandError::Config(_) => EXIT_CONFIG,
                CommandError::Fatal(_) => EXIT_ITEM_FAILURE,
            };
        }
    };
    if let Err(e) = ctx.out.write_json(RUN_SUMMARY, &summary) {
        eprintln!("error: writing run summary: {e:#}");
        return EXIT_ITEM_FAILURE;
    }
    let failures = summary.failures();
    if failures > 0 {
        eprintln!("{failures} of {} items did not complete", summary.items.len());
        EXIT_ITEM_FAILURE
    } else {
        EXIT_OK
    }
}

/// Parses `args` (including the program name) and runs. Usage errors exit 2.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}
