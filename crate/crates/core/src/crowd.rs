//! Crowd-label simulation: sampling annotations from reference vote counts,
//! entropy-tiered budget allocation, target construction and the
//! checkpointed train/test protocol.
//!
//! Labels are bought in rounds of `3N` draws for `N` training frames. The
//! cycling condition draws 3 labels for every frame. The active condition
//! draws 1 label for every frame, ranks frames by crowd entropy, and tops up
//! the most ambiguous ones: 7 labels for the top 10%, 5 for the next 15%,
//! 3 for the next 40% and 1 for the rest (see [`allocate_budget`]).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, ClassifierModel, TargetMode, TargetSet};
use crate::dataset::{FoldSpec, FrameId, MetricRecord, Pool};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};
use crate::selection::{entropy, LearnerConfig};

/// Labels drawn per frame per round, on average.
pub const LABELS_PER_ROUND: usize = 3;

/// Reference vote counts for one frame plus the labels sampled so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrowdDistribution {
    pub frame_id: FrameId,
    counts: Vec<u32>,
    drawn: Vec<u32>,
    total: u64,
}

impl CrowdDistribution {
    pub fn new(frame_id: FrameId, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if total == 0 {
            return Err(Error::Frame(frame_id.0, "crowd counts sum to zero".into()));
        }
        let drawn = vec![0; counts.len()];
        Ok(CrowdDistribution {
            frame_id,
            counts,
            drawn,
            total,
        })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn drawn(&self) -> &[u32] {
        &self.drawn
    }

    pub fn drawn_total(&self) -> u64 {
        self.drawn.iter().map(|&c| u64::from(c)).sum()
    }

    /// `k` independent draws with replacement from `counts / sum(counts)`,
    /// recorded in `drawn`.
    pub fn sample_with(&mut self, k: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..k)
            .map(|_| {
                let mut ticket = rng.random_range(0..self.total);
                let class = self
                    .counts
                    .iter()
                    .position(|&c| {
                        let c = u64::from(c);
                        if ticket < c {
                            true
                        } else {
                            ticket -= c;
                            false
                        }
                    })
                    .expect("ticket is below the total");
                self.drawn[class] += 1;
                class
            })
            .collect()
    }

    pub fn sample_labels(&mut self, k: usize, seed: u64) -> Vec<usize> {
        self.sample_with(k, &mut seeded_rng(seed))
    }
}

/// Entropy of a vote-count vector after normalization.
pub fn crowd_entropy(counts: &[u32]) -> Result<f64> {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if total == 0 {
        return Err(Error::invalid("crowd entropy of an all-zero count vector"));
    }
    let p: Vec<f64> = counts.iter().map(|&c| f64::from(c) / total as f64).collect();
    entropy(&p)
}

/// Samples per frame for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetPlan {
    pub per_frame_samples: BTreeMap<FrameId, u32>,
    pub total: u64,
}

/// Split a `3N` budget over `N` frames by entropy rank.
///
/// Frames sorted by decreasing entropy (ties: lowest id first) get 7 samples
/// for the first `floor(0.10 N)`, 5 for the next `floor(0.15 N)`, 3 for the
/// next `floor(0.40 N)` and 1 for the rest. Any shortfall from the floors is
/// paid out one sample per frame down the same ranking, wrapping as needed,
/// so the total is exactly `3N`.
pub fn allocate_budget(entropies: &BTreeMap<FrameId, f64>) -> Result<BudgetPlan> {
    let n = entropies.len();
    if n == 0 {
        return Err(Error::Empty("frame set for budget allocation"));
    }
    if let Some((id, _)) = entropies.iter().find(|(_, h)| h.is_nan()) {
        return Err(Error::Frame(id.0.clone(), "entropy is NaN".into()));
    }
    let mut ranked: Vec<(&FrameId, f64)> = entropies.iter().map(|(id, &h)| (id, h)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let tiers = [(n * 10 / 100, 7u32), (n * 15 / 100, 5), (n * 40 / 100, 3)];
    let mut samples = vec![1u32; n];
    let mut at = 0;
    for (size, k) in tiers {
        samples[at..at + size].iter_mut().for_each(|s| *s = k);
        at += size;
    }

    let target = (LABELS_PER_ROUND * n) as u64;
    let mut total: u64 = samples.iter().map(|&s| u64::from(s)).sum();
    let mut i = 0;
    while total < target {
        samples[i % n] += 1;
        total += 1;
        i += 1;
    }
    let mut i = 0;
    while total > target {
        let j = n - 1 - (i % n);
        if samples[j] > 1 {
            samples[j] -= 1;
            total -= 1;
        }
        i += 1;
    }

    Ok(BudgetPlan {
        per_frame_samples: ranked
            .iter()
            .zip(&samples)
            .map(|((id, _), &s)| ((*id).clone(), s))
            .collect(),
        total,
    })
}

/// Targets from per-frame vote vectors: majority vote with uniformly random
/// tie-breaks, or the normalized votes.
pub fn targets_from_votes<'a>(
    votes: impl IntoIterator<Item = (&'a FrameId, &'a [u32])>,
    class_count: usize,
    mode: TargetMode,
    seed: u64,
) -> Result<TargetSet> {
    let mut rng = seeded_rng(seed);
    let mut rows = Vec::new();
    for (id, v) in votes {
        if v.len() != class_count {
            return Err(Error::Frame(
                id.0.clone(),
                format!("{} vote entries for {class_count} classes", v.len()),
            ));
        }
        let total: u64 = v.iter().map(|&c| u64::from(c)).sum();
        if total == 0 {
            return Err(Error::Frame(id.0.clone(), "no labels drawn".into()));
        }
        let row = match mode {
            TargetMode::Soft => v.iter().map(|&c| f64::from(c) / total as f64).collect(),
            TargetMode::OneHot => {
                let max = *v.iter().max().expect("nonempty");
                let tied: Vec<usize> = (0..v.len()).filter(|&k| v[k] == max).collect();
                let winner = if tied.len() == 1 {
                    tied[0]
                } else {
                    tied[rng.random_range(0..tied.len())]
                };
                let mut row = vec![0.0; class_count];
                row[winner] = 1.0;
                row
            }
        };
        rows.push(row);
    }
    TargetSet::new(mode, rows)
}

/// Training targets from the labels drawn so far.
pub fn build_targets(dists: &[CrowdDistribution], mode: TargetMode, seed: u64) -> Result<TargetSet> {
    let class_count = dists.first().map_or(0, |d| d.drawn.len());
    targets_from_votes(
        dists.iter().map(|d| (&d.frame_id, d.drawn.as_slice())),
        class_count,
        mode,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Equal labels per frame each round.
    Cycling,
    /// Entropy-tiered allocation each round.
    Active,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Cycling, Condition::Active];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Cycling => "cycling",
            Condition::Active => "active",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown condition `{s}`")))
    }
}

/// Which vote vector the active allocator ranks by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySource {
    /// Labels drawn so far in this experiment.
    #[default]
    Drawn,
    /// The full reference counts.
    Reference,
}

pub const DEFAULT_CHECKPOINTS: [usize; 11] = [3, 6, 9, 12, 15, 18, 21, 24, 30, 45, 75];

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdParams {
    /// Cumulative labels-per-frame equivalents (`k` means `k * N` draws in
    /// total); strictly increasing multiples of 3.
    pub checkpoints: Vec<usize>,
    pub train_modes: Vec<TargetMode>,
    pub test_modes: Vec<TargetMode>,
    pub learner: LearnerConfig,
    /// Epochs at the end of training whose test losses are summarized.
    pub final_epochs: usize,
    pub entropy_source: EntropySource,
}

impl Default for CrowdParams {
    fn default() -> Self {
        let mut learner = LearnerConfig::default();
        learner.train.epochs = 200;
        CrowdParams {
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            train_modes: vec![TargetMode::OneHot, TargetMode::Soft],
            test_modes: vec![TargetMode::OneHot, TargetMode::Soft],
            learner,
            final_epochs: 50,
            entropy_source: EntropySource::Drawn,
        }
    }
}

impl CrowdParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.to_owned(),
                reason: reason.to_owned(),
            })
        };
        if self.checkpoints.is_empty() {
            return bad("checkpoints", "must not be empty");
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoints", "must be strictly increasing");
        }
        if self
            .checkpoints
            .iter()
            .any(|&c| c == 0 || c % LABELS_PER_ROUND != 0)
        {
            return bad("checkpoints", "every checkpoint must be a positive multiple of 3");
        }
        if self.train_modes.is_empty() || self.test_modes.is_empty() {
            return bad("train_modes", "train and test modes must not be empty");
        }
        if self.learner.train.epochs == 0 {
            return bad("classifier.epochs", "must be at least 1");
        }
        if self.final_epochs == 0 {
            return bad("final_epochs", "must be at least 1");
        }
        Ok(())
    }
}

/// Per-frame drawn counts at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawnRecord {
    pub fold: usize,
    pub condition: Condition,
    pub checkpoint: usize,
    pub frame_id: FrameId,
    pub drawn: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrowdRun {
    pub records: Vec<MetricRecord>,
    pub drawn: Vec<DrawnRecord>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn draw_round(
    dists: &mut [CrowdDistribution],
    condition: Condition,
    source: EntropySource,
    rng: &mut impl Rng,
) -> Result<()> {
    match condition {
        Condition::Cycling => {
            for d in dists.iter_mut() {
                d.sample_with(LABELS_PER_ROUND, rng);
            }
        }
        Condition::Active => {
            for d in dists.iter_mut() {
                d.sample_with(1, rng);
            }
            let entropies = dists
                .iter()
                .map(|d| {
                    let votes = match source {
                        EntropySource::Drawn => d.drawn(),
                        EntropySource::Reference => d.counts(),
                    };
                    Ok((d.frame_id.clone(), crowd_entropy(votes)?))
                })
                .collect::<Result<BTreeMap<_, _>>>()?;
            let plan = allocate_budget(&entropies)?;
            for d in dists.iter_mut() {
                let k = plan.per_frame_samples[&d.frame_id] - 1;
                d.sample_with(k as usize, rng);
            }
        }
    }
    Ok(())
}

/// One (fold, condition) cell: draw labels up to each checkpoint, train once
/// per train mode and summarize the test loss over the final epochs for
/// every test mode.
///
/// Test targets come from the reference counts of the test frames. Model
/// initialization and training seeds do not depend on the condition, so the
/// two conditions are paired.
pub fn run_crowd_cell(
    pool: &Pool,
    fold: &FoldSpec,
    condition: Condition,
    params: &CrowdParams,
    seed: u64,
) -> Result<CrowdRun> {
    params.validate()?;
    if !pool.has_crowd_counts() {
        let missing = pool
            .frames()
            .iter()
            .find(|f| f.crowd_counts.is_none())
            .map_or_else(|| "<empty pool>".to_owned(), |f| f.id.0.clone());
        return Err(Error::Frame(missing, "missing crowd counts".into()));
    }
    let (train, test) = fold.partition(pool);
    if train.is_empty() {
        return Err(Error::Empty("training fold"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test fold"));
    }
    let c = pool.class_count();
    let fold_tag = format!("fold={}", fold.fold_index);

    let test_features: Vec<&[f64]> = test.frames().iter().map(|f| f.features.as_slice()).collect();
    let test_targets = params
        .test_modes
        .iter()
        .map(|&mode| {
            targets_from_votes(
                test.frames().iter().map(|f| {
                    (&f.id, f.crowd_counts.as_deref().expect("checked above"))
                }),
                c,
                mode,
                derive_seed(seed, &format!("test-targets/{fold_tag}")),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut dists = train
        .frames()
        .iter()
        .map(|f| CrowdDistribution::new(f.id.clone(), f.crowd_counts.clone().expect("checked")))
        .collect::<Result<Vec<_>>>()?;
    let train_features: Vec<&[f64]> =
        train.frames().iter().map(|f| f.features.as_slice()).collect();

    let mut draw_rng = seeded_rng(derive_seed(seed, &format!("draw/{fold_tag}/{condition}")));
    let init = ClassifierModel::new(
        c,
        pool.feature_dim(),
        params.learner.hidden_units,
        params.learner.adam,
        derive_seed(seed, "init"),
    )?;

    let mut run = CrowdRun::default();
    let mut bought = 0;
    for (ci, &checkpoint) in params.checkpoints.iter().enumerate() {
        while bought < checkpoint {
            draw_round(&mut dists, condition, params.entropy_source, &mut draw_rng)?;
            bought += LABELS_PER_ROUND;
        }
        run.drawn.extend(dists.iter().map(|d| DrawnRecord {
            fold: fold.fold_index,
            condition,
            checkpoint,
            frame_id: d.frame_id.clone(),
            drawn: d.drawn.clone(),
        }));

        for &train_mode in &params.train_modes {
            let cell = format!("{fold_tag}/checkpoint={checkpoint}/train={train_mode}");
            let targets = build_targets(&dists, train_mode, derive_seed(seed, &format!("targets/{cell}/{condition}")))?;
            let mut model = init.clone();
            let mut losses: Vec<Vec<f64>> = vec![Vec::new(); params.test_modes.len()];
            let mut eval_err = None;
            model.train_with(
                &train_features,
                &targets,
                &params.learner.train,
                derive_seed(seed, &format!("train/{cell}")),
                |_, m| {
                    for (slot, t) in losses.iter_mut().zip(&test_targets) {
                        match evaluate(m, &test_features, t) {
                            Ok(e) => slot.push(e.mean_cross_entropy),
                            Err(e) => eval_err = Some(e),
                        }
                    }
                },
            )?;
            if let Some(e) = eval_err {
                return Err(e);
            }
            for (&test_mode, series) in params.test_modes.iter().zip(&losses) {
                let tail = &series[series.len().saturating_sub(params.final_epochs)..];
                let (mean, std) = mean_std(tail);
                run.records.push(MetricRecord {
                    iteration: ci + 1,
                    labels_used: checkpoint,
                    strategy: condition.as_str().to_owned(),
                    fold: fold.fold_index,
                    metric: "cross_entropy".to_owned(),
                    mean,
                    std,
                    train_mode: Some(train_mode),
                    test_mode: Some(test_mode),
                    seed: None,
                });
            }
        }
    }
    Ok(run)
}

/// Every fold x condition cell, sequentially, records concatenated in that
/// order.
pub fn run_crowd_experiment(
    pool: &Pool,
    folds: &[FoldSpec],
    conditions: &[Condition],
    params: &CrowdParams,
    seed: u64,
) -> Result<CrowdRun> {
    let mut out = CrowdRun::default();
    for fold in folds {
        for &condition in conditions {
            let cell = run_crowd_cell(pool, fold, condition, params, seed)?;
            out.records.extend(cell.records);
            out.drawn.extend(cell.drawn);
        }
    }
    Ok(out)
}
