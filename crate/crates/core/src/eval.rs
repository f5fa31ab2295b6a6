//! Corpus segmentation scores and user-study significance tests.

use std::collections::BTreeMap;
use std::io::Read;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{confusion_counts, BinaryMask, Confusion};
use crate::par::pairwise_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageConfusion {
    pub image_id: String,
    #[serde(flatten)]
    pub confusion: Confusion,
}

/// Confusion counts summed over a corpus and the IoU scores derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageConfusion>,
    pub aggregate: Confusion,
    pub iou_artifact: f64,
    pub iou_background: f64,
    pub miou: f64,
    /// Mean of per-image artifact IoU, for comparison with the dataset-level score.
    pub mean_image_iou_artifact: f64,
    /// Mean of per-image mIoU.
    pub mean_image_miou: f64,
}

impl EvalReport {
    pub fn from_confusions(per_image: Vec<ImageConfusion>) -> Self {
        let aggregate: Confusion = per_image.iter().map(|p| p.confusion).sum();
        let mean_of = |f: fn(&Confusion) -> f64| {
            if per_image.is_empty() {
                1.0
            } else {
                let values: Vec<f64> = per_image.iter().map(|p| f(&p.confusion)).collect();
                pairwise_sum(&values) / values.len() as f64
            }
        };
        let mean_image_iou_artifact = mean_of(Confusion::iou_artifact);
        let mean_image_miou = mean_of(Confusion::miou);
        Self {
            iou_artifact: aggregate.iou_artifact(),
            iou_background: aggregate.iou_background(),
            miou: aggregate.miou(),
            aggregate,
            per_image,
            mean_image_iou_artifact,
            mean_image_miou,
        }
    }
}

/// Dataset-level mIoU: confusions are summed over the corpus before any IoU is taken.
pub fn evaluate_miou<'a, I>(pairs: I) -> Result<EvalReport>
where
    I: IntoIterator<Item = (&'a str, &'a BinaryMask, &'a BinaryMask)>,
{
    let per_image = pairs
        .into_iter()
        .map(|(id, pred, gt)| {
            let confusion = confusion_counts(pred, gt).map_err(|e| Error::invalid(format!("{id}: {e}")))?;
            Ok(ImageConfusion {
                image_id: id.to_string(),
                confusion,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_confusions(per_image))
}

/// Preference votes for one task: −1 original preferred, 0 no preference, +1 refined preferred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceVotes {
    pub task: String,
    pub votes: Vec<i8>,
}

impl PreferenceVotes {
    pub fn new(task: impl Into<String>, votes: Vec<i8>) -> Result<Self> {
        let v = Self {
            task: task.into(),
            votes,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.votes.is_empty() {
            return Err(Error::invalid(format!("task {:?} has no votes", self.task)));
        }
        if let Some(bad) = self.votes.iter().find(|v| !(-1..=1).contains(*v)) {
            return Err(Error::invalid(format!("task {:?}: vote {bad} not in {{-1,0,1}}", self.task)));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.votes.iter().map(|&v| v as i64).sum::<i64>() as f64 / self.votes.len() as f64
    }
}

#[derive(Deserialize)]
struct VoteRow {
    task: String,
    vote: i8,
}

/// Reads `task,vote` CSV into per-task vote lists (tasks in name order, votes in file order).
pub fn read_votes_csv<R: Read>(input: R, name: &str) -> Result<Vec<PreferenceVotes>> {
    let mut by_task: BTreeMap<String, Vec<i8>> = BTreeMap::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    for (i, row) in reader.deserialize::<VoteRow>().enumerate() {
        let row = row.map_err(|e| Error::Decode {
            name: name.to_string(),
            message: format!("row {}: {e}", i + 1),
        })?;
        by_task.entry(row.task).or_default().push(row.vote);
    }
    by_task
        .into_iter()
        .map(|(task, votes)| PreferenceVotes::new(task, votes))
        .collect()
}

/// Vote vectors up to this length are tested by full enumeration of sign flips.
pub const EXACT_MAX_VOTES: usize = 20;
pub const DEFAULT_PERMUTATIONS: u64 = 1_000_000;

/// Monte Carlo permutations are drawn in fixed-size blocks, block `k` from ChaCha stream `k`,
/// so the result is independent of how blocks are spread over threads.
const BLOCK: u64 = 1 << 14;

/// Under random sign flips only the magnitudes matter, so the test reduces to the number of
/// non-zero votes and the observed |sum|.
fn reduce(votes: &PreferenceVotes) -> (u32, u64) {
    let nonzero = votes.votes.iter().filter(|&&v| v != 0).count() as u32;
    let sum: i64 = votes.votes.iter().map(|&v| v as i64).sum();
    (nonzero, sum.unsigned_abs())
}

/// Exact two-sided p-value over all 2^n sign-flip assignments (n ≤ 30).
pub fn exact_p_value(votes: &PreferenceVotes) -> Result<f64> {
    votes.validate()?;
    let n = votes.votes.len();
    if n > 30 {
        return Err(Error::invalid(format!("exact enumeration of {n} votes is infeasible")));
    }
    let (_, observed) = reduce(votes);
    let nonzero_bits: u64 = votes
        .votes
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .fold(0, |acc, (i, _)| acc | (1 << i));
    let k = nonzero_bits.count_ones() as i64;
    let total: u64 = 1 << n;
    // Bit i set in `flip` negates vote i; the permuted |sum| is |k − 2·flipped non-zeros|.
    let hits = (0..total)
        .into_par_iter()
        .filter(|&flip| (k - 2 * (flip & nonzero_bits).count_ones() as i64).unsigned_abs() >= observed)
        .count();
    Ok(hits as f64 / total as f64)
}

/// Monte Carlo p-value `(1 + hits) / (1 + permutations)` from seeded sign flips.
pub fn monte_carlo_p_value(votes: &PreferenceVotes, permutations: u64, seed: u64) -> Result<f64> {
    votes.validate()?;
    if permutations == 0 {
        return Err(Error::invalid("at least one permutation is required"));
    }
    let (k, observed) = reduce(votes);
    let blocks = permutations.div_ceil(BLOCK);
    let hits: u64 = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(block);
            let draws = BLOCK.min(permutations - block * BLOCK);
            let mut hits = 0u64;
            for _ in 0..draws {
                let mut positives = 0u32;
                let mut left = k;
                while left > 0 {
                    let take = left.min(64);
                    let bits = rng.next_u64();
                    let bits = if take == 64 { bits } else { bits & ((1u64 << take) - 1) };
                    positives += bits.count_ones();
                    left -= take;
                }
                let stat = (2 * positives as i64 - k as i64).unsigned_abs();
                hits += (stat >= observed) as u64;
            }
            hits
        })
        .sum();
    Ok((1 + hits) as f64 / (1 + permutations) as f64)
}

/// One-sample sign-flip permutation test of mean preference = 0, statistic |mean|.
/// Exact for up to [`EXACT_MAX_VOTES`] votes, Monte Carlo otherwise.
pub fn permutation_test(votes: &PreferenceVotes, permutations: u64, seed: u64) -> Result<f64> {
    votes.validate()?;
    if permutations == 0 {
        return Err(Error::invalid("at least one permutation is required"));
    }
    if votes.votes.len() <= EXACT_MAX_VOTES {
        exact_p_value(votes)
    } else {
        monte_carlo_p_value(votes, permutations, seed)
    }
}

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Holm's step-down procedure. Returns, per task, whether its null hypothesis is rejected.
pub fn holm_bonferroni(p_values: &BTreeMap<String, f64>, alpha: f64) -> Result<BTreeMap<String, bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} not in (0, 1)")));
    }
    if let Some((task, p)) = p_values.iter().find(|(_, &p)| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::invalid(format!("p-value {p} for {task:?} not in (0, 1]")));
    }
    let mut order: Vec<(&String, f64)> = p_values.iter().map(|(t, &p)| (t, p)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let m = order.len();
    let mut decisions: BTreeMap<String, bool> = p_values.keys().map(|t| (t.clone(), false)).collect();
    for (i, (task, p)) in order.into_iter().enumerate() {
        if p > alpha / (m - i) as f64 {
            break;
        }
        decisions.insert(task.clone(), true);
    }
    Ok(decisions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSignificance {
    pub task: String,
    pub n_votes: usize,
    pub mean_preference: f64,
    pub p_value: f64,
    pub exact: bool,
    pub reject_null: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub alpha: f64,
    pub permutations: u64,
    pub seed: u64,
    pub tasks: Vec<TaskSignificance>,
    /// All votes pooled into one test.
    pub pooled: TaskSignificance,
}

/// Per-task tests with Holm correction, plus one test on all votes pooled.
pub fn significance_report(
    votes: &[PreferenceVotes],
    permutations: u64,
    seed: u64,
    alpha: f64,
) -> Result<SignificanceReport> {
    if votes.is_empty() {
        return Err(Error::invalid("no votes"));
    }
    let test = |v: &PreferenceVotes| -> Result<TaskSignificance> {
        Ok(TaskSignificance {
            task: v.task.clone(),
            n_votes: v.votes.len(),
            mean_preference: v.mean(),
            p_value: permutation_test(v, permutations, seed)?,
            exact: v.votes.len() <= EXACT_MAX_VOTES,
            reject_null: false,
        })
    };
    let mut tasks = votes.iter().map(test).collect::<Result<Vec<_>>>()?;
    let p_values = tasks.iter().map(|t| (t.task.clone(), t.p_value)).collect();
    let decisions = holm_bonferroni(&p_values, alpha)?;
    for t in &mut tasks {
        t.reject_null = decisions[&t.task];
    }
    let all = PreferenceVotes::new("all", votes.iter().flat_map(|v| v.votes.iter().copied()).collect())?;
    let mut pooled = test(&all)?;
    pooled.reject_null = pooled.p_value <= alpha;
    Ok(SignificanceReport {
        alpha,
        permutations,
        seed,
        tasks,
        pooled,
    })
}
