//! Pool-based active-learning simulation engine.
//!
//! The crate covers two labeling experiments over feature-vector pools:
//!
//! - entropy-prioritized frame selection driven by noisy metadata labels
//!   ([`selection`]), and
//! - allocation of a fixed crowd-annotation budget by crowd-entropy tiers with
//!   one-hot or soft training targets ([`crowd`]),
//!
//! together with the softmax classifier both experiments train
//! ([`classifier`]), a synthetic pool generator ([`synth`]), power-law
//! learning-curve fitting ([`curvefit`]) and a config-driven runner
//! ([`harness`]).

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod crowd;
pub mod curvefit;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod rng;
pub mod selection;
pub mod synth;

pub use classifier::{
    cross_entropy, evaluate, gradient_check, load_weights, save_weights, AdamConfig, ClassifierModel, EvalMetrics, TargetMode,
    TargetSet, TrainParams, TrainReport,
};
pub use crowd::{
    allocate_budget, build_targets, crowd_entropy, run_crowd_cell, run_crowd_experiment,
    targets_from_votes, BudgetPlan, Condition, CrowdDistribution, CrowdParams, CrowdRun,
    DrawnRecord, EntropySource,
};
pub use curvefit::{
    append_fit, curve_points, fit_power_law, labels_for_target, predict, save_fits, LearningCurve,
    PowerLaw, Reach,
};
pub use dataset::{
    balanced_subset, load_metrics, load_pool, save_metrics, save_pool, split_folds, BalancedSubset,
    FoldSpec, Frame, FrameId, MetricRecord, Pool, PoolSchema, SubjectId,
};
pub use error::{Error, Result};
pub use harness::{validate, ExperimentConfig, ExperimentKind, Problem, RunSummary};
pub use selection::{
    entropy, run_active_learning, save_selections, ActiveLearningRun, IterationMetrics,
    LearnerConfig, Pick, SelectionRecord, Selector, StrategyKind, StrategySpec, TupleIndex,
};
pub use synth::{generate_pool, SynthConfig};
