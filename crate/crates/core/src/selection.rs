//! Query strategies over an unlabeled pool and the retrain-and-evaluate loop.
//!
//! Three strategies are supported:
//!
//! - `random`: uniform sampling without replacement;
//! - `tuple_cycle`: cycle through `(auto_label, subject)` tuples in a
//!   seed-shuffled order, taking one random remaining frame per visit;
//! - `tuple_cycle_max_entropy`: same cycle, but each visit takes the
//!   remaining frame whose predicted class distribution has the highest
//!   entropy (ties go to the lowest frame id).
//!
//! The tuple order is fixed when the [`Selector`] is created and its cursor
//! carries over between batches, so successive batches keep walking the same
//! cycle instead of restarting at its head.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, ClassifierModel, TargetSet, TrainParams};
use crate::dataset::{FrameId, Pool, SubjectId};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    TupleCycle,
    TupleCycleMaxEntropy,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::Random,
        StrategyKind::TupleCycle,
        StrategyKind::TupleCycleMaxEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::TupleCycle => "tuple_cycle",
            StrategyKind::TupleCycleMaxEntropy => "tuple_cycle_max_entropy",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub seed: u64,
}

/// Shannon entropy (natural log) of a probability vector, with `0 ln 0 = 0`.
pub fn entropy(probabilities: &[f64]) -> Result<f64> {
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || probabilities.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::NotNormalized(sum));
    }
    Ok(0.0
        - probabilities
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>())
}

pub type TupleKey = (usize, SubjectId);

/// Unlabeled frames grouped by `(auto_label, subject)`; ids ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TupleIndex {
    tuples: BTreeMap<TupleKey, Vec<FrameId>>,
}

impl TupleIndex {
    /// Frames without an auto label are left out.
    pub fn build(pool: &Pool) -> Self {
        let mut tuples: BTreeMap<TupleKey, Vec<FrameId>> = BTreeMap::new();
        for f in pool.unlabeled() {
            if let Some(label) = f.auto_label {
                tuples
                    .entry((label, f.subject.clone()))
                    .or_default()
                    .push(f.id.clone());
            }
        }
        for ids in tuples.values_mut() {
            ids.sort();
        }
        TupleIndex { tuples }
    }

    pub fn keys(&self) -> impl Iterator<Item = &TupleKey> {
        self.tuples.keys()
    }

    pub fn get(&self, key: &TupleKey) -> Option<&[FrameId]> {
        self.tuples.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn frame_count(&self) -> usize {
        self.tuples.values().map(Vec::len).sum()
    }
}

/// One emitted frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pick {
    pub frame_id: FrameId,
    pub auto_label: Option<usize>,
    pub subject: SubjectId,
    /// Entropy of the model's prediction for this frame at selection time.
    pub entropy: f64,
}

/// Strategy state carried across batches of one experiment.
#[derive(Debug, Clone)]
pub struct Selector {
    spec: StrategySpec,
    rng: SimRng,
    order: Vec<TupleKey>,
    cursor: usize,
}

impl Selector {
    /// Fix the cyclic tuple order from the pool's current unlabeled frames.
    pub fn new(spec: StrategySpec, pool: &Pool) -> Self {
        let mut rng = seeded_rng(spec.seed);
        let mut order: Vec<TupleKey> = match spec.kind {
            StrategyKind::Random => Vec::new(),
            _ => TupleIndex::build(pool).keys().cloned().collect(),
        };
        order.shuffle(&mut rng);
        Selector {
            spec,
            rng,
            order,
            cursor: 0,
        }
    }

    pub fn spec(&self) -> StrategySpec {
        self.spec
    }

    /// The shuffled tuple cycle.
    pub fn order(&self) -> &[TupleKey] {
        &self.order
    }

    /// Up to `batch_size` distinct unlabeled frames, in emission order.
    pub fn next_batch(
        &mut self,
        pool: &Pool,
        model: &ClassifierModel,
        batch_size: usize,
    ) -> Result<Vec<Pick>> {
        if batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        let entropies: HashMap<&FrameId, f64> = pool
            .unlabeled()
            .map(|f| Ok((&f.id, entropy(&model.predict_proba(&f.features)?)?)))
            .collect::<Result<_>>()?;
        let pick = |id: FrameId| {
            let f = pool.get(&id).expect("selected id comes from the pool");
            Pick {
                entropy: entropies[&f.id],
                auto_label: f.auto_label,
                subject: f.subject.clone(),
                frame_id: id,
            }
        };

        if self.spec.kind == StrategyKind::Random {
            let candidates: Vec<&FrameId> = pool.unlabeled().map(|f| &f.id).collect();
            let n = batch_size.min(candidates.len());
            return Ok(index::sample(&mut self.rng, candidates.len(), n)
                .into_iter()
                .map(|i| pick(candidates[i].clone()))
                .collect());
        }

        let mut index = TupleIndex::build(pool);
        let mut remaining = index.frame_count();
        let mut out = Vec::with_capacity(batch_size.min(remaining));
        while out.len() < batch_size && remaining > 0 && !self.order.is_empty() {
            let key = &self.order[self.cursor % self.order.len()];
            self.cursor += 1;
            let Some(ids) = index.tuples.get_mut(key) else {
                continue;
            };
            if ids.is_empty() {
                continue;
            }
            let at = match self.spec.kind {
                StrategyKind::TupleCycle => self.rng.random_range(0..ids.len()),
                StrategyKind::TupleCycleMaxEntropy => {
                    // ids are ascending, so a strict comparison keeps the
                    // lowest id among equal entropies.
                    let mut best = 0;
                    for (i, id) in ids.iter().enumerate().skip(1) {
                        if entropies[id] > entropies[&ids[best]] {
                            best = i;
                        }
                    }
                    best
                }
                StrategyKind::Random => unreachable!("handled above"),
            };
            out.push(pick(ids.remove(at)));
            remaining -= 1;
        }
        Ok(out)
    }
}

/// Training and evaluation settings for each retrain.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LearnerConfig {
    pub hidden_units: usize,
    pub adam: crate::classifier::AdamConfig,
    pub train: TrainParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub labels_used: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mean_cross_entropy: f64,
}

/// One row of the selected-frame log.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub iteration: usize,
    /// 1-based position within the iteration's batch.
    pub rank: usize,
    pub pick: Pick,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveLearningRun {
    pub metrics: Vec<IterationMetrics>,
    pub selections: Vec<SelectionRecord>,
}

fn one_hot_targets(pool: &Pool, ids: &[&FrameId]) -> Result<TargetSet> {
    let labels = ids
        .iter()
        .map(|id| {
            pool.get(id)
                .and_then(|f| f.true_label)
                .ok_or_else(|| Error::Frame(id.0.clone(), "labeled frame has no true_label".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    TargetSet::one_hot(&labels, pool.class_count())
}

fn train_on_labeled(
    pool: &Pool,
    learner: &LearnerConfig,
    init_seed: u64,
    train_seed: u64,
) -> Result<ClassifierModel> {
    let mut model = ClassifierModel::new(
        pool.class_count(),
        pool.feature_dim(),
        learner.hidden_units,
        learner.adam,
        init_seed,
    )?;
    let labeled: Vec<&FrameId> = pool.labeled().iter().collect();
    if !labeled.is_empty() {
        let targets = one_hot_targets(pool, &labeled)?;
        let features: Vec<&[f64]> = labeled
            .iter()
            .map(|id| pool.get(id).expect("labeled ids are in the pool").features.as_slice())
            .collect();
        model.train(&features, &targets, &learner.train, train_seed)?;
    }
    Ok(model)
}

/// Select, reveal, retrain from scratch and evaluate, `iterations` times.
///
/// Frames already labeled in `pool` act as a warm-start base set. The
/// classifier is re-initialized before every retrain. `labels_used` counts
/// every labeled frame, base set included.
pub fn run_active_learning(
    mut pool: Pool,
    spec: StrategySpec,
    iterations: usize,
    batch_size: usize,
    eval: &Pool,
    learner: &LearnerConfig,
) -> Result<ActiveLearningRun> {
    if iterations < 1 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    if batch_size < 1 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    if eval.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if pool.unlabeled_count() == 0 {
        return Err(Error::Empty("unlabeled pool"));
    }
    let eval_ids: Vec<&FrameId> = eval.frames().iter().map(|f| &f.id).collect();
    let eval_targets = one_hot_targets(eval, &eval_ids)?;
    let eval_features: Vec<&[f64]> = eval.frames().iter().map(|f| f.features.as_slice()).collect();

    let init_seed = derive_seed(spec.seed, "init");
    let mut selector = Selector::new(spec, &pool);
    let mut model = train_on_labeled(&pool, learner, init_seed, derive_seed(spec.seed, "train=0"))?;
    let mut run = ActiveLearningRun::default();

    for iteration in 1..=iterations {
        let picks = selector.next_batch(&pool, &model, batch_size)?;
        pool.mark_labeled(picks.iter().map(|p| &p.frame_id))?;
        run.selections.extend(
            picks
                .into_iter()
                .enumerate()
                .map(|(i, pick)| SelectionRecord {
                    iteration,
                    rank: i + 1,
                    pick,
                }),
        );
        model = train_on_labeled(
            &pool,
            learner,
            init_seed,
            derive_seed(spec.seed, &format!("train={iteration}")),
        )?;
        let m = evaluate(&model, &eval_features, &eval_targets)?;
        run.metrics.push(IterationMetrics {
            iteration,
            labels_used: pool.labeled().len(),
            accuracy: m.accuracy.expect("one-hot evaluation"),
            macro_f1: m.macro_f1.expect("one-hot evaluation"),
            mean_cross_entropy: m.mean_cross_entropy,
        });
    }
    Ok(run)
}

pub const SELECTION_COLUMNS: [&str; 6] = [
    "iteration",
    "rank",
    "frame_id",
    "tuple_auto_label",
    "tuple_subject",
    "entropy",
];

impl SelectionRecord {
    pub fn csv_fields(&self) -> [String; 6] {
        [
            self.iteration.to_string(),
            self.rank.to_string(),
            self.pick.frame_id.0.clone(),
            self.pick.auto_label.map(|l| l.to_string()).unwrap_or_default(),
            self.pick.subject.0.clone(),
            self.pick.entropy.to_string(),
        ]
    }
}

/// Write the selected-frame log of a single run.
pub fn save_selections(rows: &[SelectionRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SELECTION_COLUMNS)?;
    for r in rows {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::classifier::AdamConfig;
    use crate::dataset::Frame;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn zero_model(c: usize, d: usize) -> ClassifierModel {
        ClassifierModel::new(c, d, 0, AdamConfig::default(), 0).unwrap()
    }

    fn grid_pool(subjects: usize, labels: usize, per: usize) -> Pool {
        let mut frames = Vec::new();
        let mut n = 0;
        for s in 0..subjects {
            for l in 0..labels {
                for _ in 0..per {
                    let mut f = Frame::new(n.to_string(), format!("s{s}"), vec![n as f64 / 10.0, 1.0]);
                    f.auto_label = Some(l);
                    f.true_label = Some(l);
                    frames.push(f);
                    n += 1;
                }
            }
        }
        Pool::new(labels.max(2), 2, frames).unwrap()
    }

    #[test]
    fn entropy_cases() {
        assert_abs_diff_eq!(entropy(&[1.0 / 7.0; 7]).unwrap(), 7f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(entropy(&[0.7, 0.2, 0.1]).unwrap(), 0.801_818_7, epsilon = 1e-6);
        assert!(matches!(entropy(&[0.5, 0.6]), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn tuple_cycle_covers_every_tuple_once() {
        let pool = grid_pool(2, 2, 1);
        let mut sel = Selector::new(
            StrategySpec {
                kind: StrategyKind::TupleCycle,
                seed: 3,
            },
            &pool,
        );
        let picks = sel.next_batch(&pool, &zero_model(2, 2), 4).unwrap();
        let tuples: BTreeSet<_> = picks
            .iter()
            .map(|p| (p.auto_label.unwrap(), p.subject.clone()))
            .collect();
        assert_eq!(picks.len(), 4);
        assert_eq!(tuples.len(), 4);
    }

    #[test]
    fn uniform_model_falls_back_to_lowest_id() {
        let pool = grid_pool(2, 2, 3);
        let mut sel = Selector::new(
            StrategySpec {
                kind: StrategyKind::TupleCycleMaxEntropy,
                seed: 1,
            },
            &pool,
        );
        let picks = sel.next_batch(&pool, &zero_model(2, 2), 4).unwrap();
        let index = TupleIndex::build(&pool);
        for p in picks {
            assert_abs_diff_eq!(p.entropy, 2f64.ln(), epsilon = 1e-12);
            let key = (p.auto_label.unwrap(), p.subject.clone());
            assert_eq!(&p.frame_id, &index.get(&key).unwrap()[0]);
        }
    }

    #[test]
    fn saturates_on_small_pool() {
        let pool = grid_pool(1, 3, 1);
        for kind in StrategyKind::ALL {
            let mut sel = Selector::new(StrategySpec { kind, seed: 0 }, &pool);
            let picks = sel.next_batch(&pool, &zero_model(3, 2), 35).unwrap();
            assert_eq!(picks.len(), 3, "{kind}");
        }
    }

    #[test]
    fn empty_pool_gives_empty_batch() {
        let mut pool = grid_pool(1, 2, 1);
        let ids: Vec<FrameId> = pool.frames().iter().map(|f| f.id.clone()).collect();
        pool.mark_labeled(&ids).unwrap();
        let mut sel = Selector::new(
            StrategySpec {
                kind: StrategyKind::Random,
                seed: 0,
            },
            &pool,
        );
        assert!(sel.next_batch(&pool, &zero_model(2, 2), 5).unwrap().is_empty());
        assert!(sel.next_batch(&pool, &zero_model(2, 2), 0).is_err());
    }

    #[test]
    fn frames_without_auto_label_only_for_random() {
        let mut frames = Vec::new();
        for i in 0..4 {
            let mut f = Frame::new(i.to_string(), "s", vec![0.0]);
            f.true_label = Some(i % 2);
            frames.push(f);
        }
        let pool = Pool::new(2, 1, frames).unwrap();
        let m = zero_model(2, 1);
        let mut cyc = Selector::new(
            StrategySpec {
                kind: StrategyKind::TupleCycle,
                seed: 0,
            },
            &pool,
        );
        assert!(cyc.next_batch(&pool, &m, 4).unwrap().is_empty());
        let mut rnd = Selector::new(
            StrategySpec {
                kind: StrategyKind::Random,
                seed: 0,
            },
            &pool,
        );
        assert_eq!(rnd.next_batch(&pool, &m, 4).unwrap().len(), 4);
    }

    #[test]
    fn selection_ignores_true_labels() {
        let pool = grid_pool(3, 3, 4);
        let hidden = Pool::new(
            3,
            2,
            pool.frames()
                .iter()
                .map(|f| Frame {
                    true_label: None,
                    ..f.clone()
                })
                .collect(),
        )
        .unwrap();
        let mut m = zero_model(3, 2);
        m.set_params(vec![0.3, -0.2, 0.1, 0.5, -0.4, 0.2, 0.0, 0.1, -0.1]).unwrap();
        for kind in StrategyKind::ALL {
            let spec = StrategySpec { kind, seed: 21 };
            let a = Selector::new(spec, &pool).next_batch(&pool, &m, 10).unwrap();
            let b = Selector::new(spec, &hidden).next_batch(&hidden, &m, 10).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn cursor_continues_between_batches() {
        let pool = grid_pool(3, 2, 2);
        let mut sel = Selector::new(
            StrategySpec {
                kind: StrategyKind::TupleCycle,
                seed: 8,
            },
            &pool,
        );
        let m = zero_model(2, 2);
        let mut pool = pool;
        let mut seen = Vec::new();
        for _ in 0..3 {
            let picks = sel.next_batch(&pool, &m, 2).unwrap();
            pool.mark_labeled(picks.iter().map(|p| &p.frame_id)).unwrap();
            seen.extend(picks.into_iter().map(|p| (p.auto_label.unwrap(), p.subject)));
        }
        // Six picks over six tuples: the cycle must have visited each once.
        let distinct: BTreeSet<_> = seen.iter().cloned().collect();
        assert_eq!(distinct.len(), 6);
    }

    fn random_pool(seed: u64, n: usize) -> Pool {
        let mut rng = seeded_rng(seed);
        let frames = (0..n)
            .map(|i| {
                let mut f = Frame::new(
                    i.to_string(),
                    format!("s{}", rng.random_range(0..3)),
                    (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
                );
                f.auto_label = Some(rng.random_range(0..3));
                f.true_label = Some(rng.random_range(0..3));
                f
            })
            .collect();
        Pool::new(3, 3, frames).unwrap()
    }

    fn run_learning(seed: u64) -> ActiveLearningRun {
        let pool = random_pool(seed, 60);
        let eval = random_pool(seed + 100, 20);
        run_active_learning(
            pool,
            StrategySpec {
                kind: StrategyKind::TupleCycleMaxEntropy,
                seed,
            },
            4,
            7,
            &eval,
            &LearnerConfig {
                train: TrainParams {
                    epochs: 5,
                    batch_size: 8,
                    jitter_std: 0.0,
                },
                ..LearnerConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn labels_used_grows_by_batch() {
        let run = run_learning(1);
        let used: Vec<usize> = run.metrics.iter().map(|m| m.labels_used).collect();
        assert_eq!(used, vec![7, 14, 21, 28]);
    }

    #[test]
    fn active_learning_is_deterministic() {
        assert_eq!(run_learning(5), run_learning(5));
    }

    #[test]
    fn no_frame_selected_twice() {
        let run = run_learning(2);
        let ids: BTreeSet<_> = run.selections.iter().map(|s| &s.pick.frame_id).collect();
        assert_eq!(ids.len(), run.selections.len());
    }

    #[test]
    fn single_iteration_saturating_pool() {
        let pool = grid_pool(1, 2, 2);
        let eval = grid_pool(1, 2, 1);
        let run = run_active_learning(
            pool,
            StrategySpec {
                kind: StrategyKind::Random,
                seed: 0,
            },
            1,
            35,
            &eval,
            &LearnerConfig::default(),
        )
        .unwrap();
        assert_eq!(run.metrics.len(), 1);
        assert_eq!(run.metrics[0].labels_used, 4);
    }

    #[test]
    fn empty_eval_set_is_error() {
        let pool = grid_pool(1, 2, 2);
        let eval = pool.filter(|_| false);
        assert!(run_active_learning(
            pool,
            StrategySpec {
                kind: StrategyKind::Random,
                seed: 0
            },
            1,
            1,
            &eval,
            &LearnerConfig::default()
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn entropy_is_bounded(raw in prop::collection::vec(0.0f64..1.0, 2..9)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let h = entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn first_picks_come_from_distinct_tuples(seed in 0u64..200, kind in prop::sample::select(vec![StrategyKind::TupleCycle, StrategyKind::TupleCycleMaxEntropy])) {
            let pool = random_pool(seed, 40);
            let tuples = TupleIndex::build(&pool).len();
            let mut sel = Selector::new(StrategySpec { kind, seed }, &pool);
            let picks = sel.next_batch(&pool, &zero_model(3, 3), tuples).unwrap();
            let distinct: BTreeSet<_> = picks.iter().map(|p| (p.auto_label, p.subject.clone())).collect();
            prop_assert_eq!(distinct.len(), picks.len());
        }
    }
}
