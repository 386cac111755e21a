use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{AdamConfig, TargetMode, TrainParams};
use crate::crowd::{Condition, CrowdParams, EntropySource, DEFAULT_CHECKPOINTS};
use crate::dataset::{load_pool, PoolSchema};
use crate::selection::{LearnerConfig, StrategyKind};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Exp1Selection,
    Exp2Crowd,
    CurveFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvPool {
    pub path: PathBuf,
    #[serde(default = "default_class_count")]
    pub class_count: usize,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
}

fn default_class_count() -> usize {
    7
}

impl CsvPool {
    pub fn schema(&self) -> PoolSchema {
        PoolSchema {
            class_count: self.class_count,
            class_names: self.class_names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSource {
    Csv(CsvPool),
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub hidden_units: usize,
    /// Defaults to 50 for selection runs and 200 for crowd runs.
    pub epochs: Option<usize>,
    pub batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub jitter_std: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        ClassifierSection {
            hidden_units: 0,
            epochs: None,
            batch: 32,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            jitter_std: 0.0,
        }
    }
}

impl ClassifierSection {
    pub fn learner(&self, default_epochs: usize) -> LearnerConfig {
        LearnerConfig {
            hidden_units: self.hidden_units,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            train: TrainParams {
                epochs: self.epochs.unwrap_or(default_epochs),
                batch_size: self.batch,
                jitter_std: self.jitter_std,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BasePool {
    /// Pre-label this fraction of each training fold, chosen at random.
    Fraction(f64),
    /// Append the frames of another pool CSV as pre-labeled.
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBalance {
    #[serde(default)]
    pub attributes: Vec<String>,
    pub per_cell: usize,
}

pub const EXP1_METRICS: [&str; 3] = ["accuracy", "macro_f1", "cross_entropy"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp1Section {
    pub strategies: Vec<StrategyKind>,
    pub iterations: usize,
    pub batch_size: usize,
    pub base_pool: Option<BasePool>,
    /// Evaluate on a subset balanced by these attributes and true class.
    pub eval_balance: Option<EvalBalance>,
    pub metrics: Vec<String>,
    pub fit: bool,
    pub fit_metrics: Vec<String>,
    pub fit_strategy: StrategyKind,
}

impl Default for Exp1Section {
    fn default() -> Self {
        Exp1Section {
            strategies: StrategyKind::ALL.to_vec(),
            iterations: 10,
            batch_size: 35,
            base_pool: None,
            eval_balance: None,
            metrics: vec!["accuracy".into()],
            fit: false,
            fit_metrics: vec!["accuracy".into()],
            fit_strategy: StrategyKind::TupleCycleMaxEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exp2Section {
    pub conditions: Vec<Condition>,
    pub train_modes: Vec<TargetMode>,
    pub test_modes: Vec<TargetMode>,
    pub checkpoints: Vec<usize>,
    pub final_epochs: usize,
    pub entropy_source: EntropySource,
}

impl Default for Exp2Section {
    fn default() -> Self {
        Exp2Section {
            conditions: Condition::ALL.to_vec(),
            train_modes: vec![TargetMode::OneHot, TargetMode::Soft],
            test_modes: vec![TargetMode::OneHot, TargetMode::Soft],
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            final_epochs: 50,
            entropy_source: EntropySource::Drawn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveFitSection {
    pub metrics_csv: PathBuf,
    #[serde(default = "default_fit_metrics")]
    pub metrics: Vec<String>,
    #[serde(default)]
    pub strategy: Option<String>,
}

fn default_fit_metrics() -> Vec<String> {
    vec!["accuracy".into()]
}

/// A whole run, as read from one JSON document. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub pool_source: Option<PoolSource>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Defaults to 1 for selection runs and 3 for crowd runs.
    #[serde(default)]
    pub folds: Option<usize>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub exp1: Option<Exp1Section>,
    #[serde(default)]
    pub exp2: Option<Exp2Section>,
    #[serde(default)]
    pub curve_fit: Option<CurveFitSection>,
    /// Concurrent cells; 0 uses every core. `ALSIM_WORKERS` overrides.
    #[serde(default)]
    pub workers: usize,
}

fn default_train_fraction() -> f64 {
    2.0 / 3.0
}

pub const WORKERS_ENV: &str = "ALSIM_WORKERS";

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, Problem> {
        serde_json::from_str(text).map_err(|e| Problem::parse(&e))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, Problem> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Problem::new("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Copy with every experiment-dependent default written out.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut out = self.clone();
        match self.experiment {
            ExperimentKind::Exp1Selection => {
                out.folds.get_or_insert(1);
                out.classifier.epochs.get_or_insert(50);
                out.exp1.get_or_insert_with(Exp1Section::default);
            }
            ExperimentKind::Exp2Crowd => {
                out.folds.get_or_insert(3);
                out.classifier.epochs.get_or_insert(200);
                out.exp2.get_or_insert_with(Exp2Section::default);
            }
            ExperimentKind::CurveFit => {}
        }
        out
    }

    pub fn folds_or_default(&self) -> usize {
        self.resolved().folds.unwrap_or(1)
    }

    pub fn crowd_params(&self) -> CrowdParams {
        let r = self.resolved();
        let exp2 = r.exp2.unwrap_or_default();
        CrowdParams {
            checkpoints: exp2.checkpoints,
            train_modes: exp2.train_modes,
            test_modes: exp2.test_modes,
            learner: r.classifier.learner(200),
            final_epochs: exp2.final_epochs,
            entropy_source: exp2.entropy_source,
        }
    }
}

/// A reason the config cannot run, tied to the offending key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub key: String,
    pub reason: String,
}

impl Problem {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Problem {
            key: key.into(),
            reason: reason.into(),
        }
    }

    fn parse(e: &serde_json::Error) -> Self {
        let msg = e.to_string();
        // serde reports unknown and missing fields with the name in backticks
        let key = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .unwrap_or("<document>")
            .to_owned();
        Problem::new(key, msg)
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.reason)
    }
}

/// Load or describe the pool a config points at, without running anything.
pub(crate) fn probe_pool(source: &PoolSource, problems: &mut Vec<Problem>) -> Option<PoolProbe> {
    match source {
        PoolSource::Synth(s) => {
            for (field, reason) in s.problems() {
                problems.push(Problem::new(format!("pool_source.synth.{field}"), reason));
            }
            Some(PoolProbe {
                subjects: s.subjects,
                has_crowd: s.crowd_annotators > 0,
            })
        }
        PoolSource::Csv(c) => match load_pool(&c.path, &c.schema()) {
            Ok(pool) => Some(PoolProbe {
                subjects: pool.subjects().len(),
                has_crowd: pool.has_crowd_counts(),
            }),
            Err(e) => {
                problems.push(Problem::new("pool_source.csv.path", e.to_string()));
                None
            }
        },
    }
}

pub(crate) struct PoolProbe {
    pub subjects: usize,
    pub has_crowd: bool,
}

/// Every problem that would stop `config` from running. Empty means runnable.
pub fn validate(config: &ExperimentConfig) -> Vec<Problem> {
    let cfg = config.resolved();
    let mut out = Vec::new();
    let mut push = |key: &str, reason: &str| out.push(Problem::new(key, reason));

    if cfg.seeds.is_empty() {
        push("seeds", "must list at least one seed");
    }
    if cfg.output_dir.as_os_str().is_empty() {
        push("output_dir", "must not be empty");
    } else if cfg.output_dir.exists() && !cfg.output_dir.is_dir() {
        push("output_dir", "exists and is not a directory");
    } else if std::fs::metadata(&cfg.output_dir).is_ok_and(|m| m.permissions().readonly()) {
        push("output_dir", "is not writable");
    }

    let sections = [
        ("exp1", cfg.exp1.is_some(), ExperimentKind::Exp1Selection),
        ("exp2", cfg.exp2.is_some(), ExperimentKind::Exp2Crowd),
        ("curve_fit", cfg.curve_fit.is_some(), ExperimentKind::CurveFit),
    ];
    for (key, present, kind) in sections {
        if present && kind != cfg.experiment {
            push(key, "section does not match the selected experiment");
        }
    }

    if cfg.experiment == ExperimentKind::CurveFit {
        match &cfg.curve_fit {
            None => push("curve_fit", "required for curve_fit experiments"),
            Some(cf) => {
                if !cf.metrics_csv.is_file() {
                    push("curve_fit.metrics_csv", "file does not exist");
                }
                if cf.metrics.is_empty() {
                    push("curve_fit.metrics", "must name at least one metric");
                }
            }
        }
        return out;
    }

    if let Some(f) = cfg.folds {
        if f == 0 {
            push("folds", "must be at least 1");
        }
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        push("train_fraction", "must lie strictly between 0 and 1");
    }

    let c = &cfg.classifier;
    if c.batch == 0 {
        push("classifier.batch", "must be at least 1");
    }
    if c.epochs == Some(0) {
        push("classifier.epochs", "must be at least 1");
    }
    if !(c.jitter_std >= 0.0) {
        push("classifier.jitter_std", "must be nonnegative");
    }
    if let Err(e) = c.learner(1).adam.validate() {
        push("classifier", &e.to_string());
    }

    let probe = match &cfg.pool_source {
        None => {
            push("pool_source", "required: give either `csv` or `synth`");
            None
        }
        Some(source) => probe_pool(source, &mut out),
    };
    let mut push = |key: &str, reason: &str| out.push(Problem::new(key, reason));
    if let Some(p) = &probe {
        if p.subjects < 2 {
            push("pool_source", "needs at least 2 subjects to form folds");
        }
    }

    match cfg.experiment {
        ExperimentKind::Exp1Selection => {
            let e = cfg.exp1.clone().unwrap_or_default();
            if e.strategies.is_empty() {
                push("exp1.strategies", "must list at least one strategy");
            }
            if e.strategies.iter().collect::<BTreeSet<_>>().len() != e.strategies.len() {
                push("exp1.strategies", "contains duplicates");
            }
            if e.iterations == 0 {
                push("exp1.iterations", "must be at least 1");
            }
            if e.batch_size == 0 {
                push("exp1.batch_size", "must be at least 1");
            }
            for m in e.metrics.iter().chain(&e.fit_metrics) {
                if !EXP1_METRICS.contains(&m.as_str()) {
                    push("exp1.metrics", &format!("unknown metric `{m}`"));
                }
            }
            if e.metrics.is_empty() {
                push("exp1.metrics", "must name at least one metric");
            }
            if e.fit {
                if !e.strategies.contains(&e.fit_strategy) {
                    push("exp1.fit_strategy", "is not among exp1.strategies");
                }
                if e.iterations < 4 {
                    push("exp1.iterations", "a power-law fit needs at least 4 iterations");
                }
                if let Some(m) = e.fit_metrics.iter().find(|m| !e.metrics.contains(m)) {
                    push("exp1.fit_metrics", &format!("`{m}` is not among exp1.metrics"));
                }
            }
            match &e.base_pool {
                Some(BasePool::Fraction(f)) if !(0.0..1.0).contains(f) => {
                    push("exp1.base_pool.fraction", "must lie in [0, 1)")
                }
                Some(BasePool::Csv(path)) if !path.is_file() => {
                    push("exp1.base_pool.csv", "file does not exist")
                }
                _ => {}
            }
            if let Some(b) = &e.eval_balance {
                if b.per_cell == 0 {
                    push("exp1.eval_balance.per_cell", "must be at least 1");
                }
            }
        }
        ExperimentKind::Exp2Crowd => {
            if probe.as_ref().is_some_and(|p| !p.has_crowd) {
                push("pool_source", "crowd experiments need crowd counts on every frame");
            }
            let e = cfg.exp2.clone().unwrap_or_default();
            if e.conditions.is_empty() {
                push("exp2.conditions", "must list at least one condition");
            }
            if e.train_modes.is_empty() {
                push("exp2.train_modes", "must list at least one mode");
            }
            if e.test_modes.is_empty() {
                push("exp2.test_modes", "must list at least one mode");
            }
            if let Err(crate::error::Error::Config { key, reason }) = cfg.crowd_params().validate() {
                push(&format!("exp2.{key}"), &reason);
            }
            if e.final_epochs > cfg.classifier.epochs.unwrap_or(200) {
                push("exp2.final_epochs", "exceeds classifier.epochs");
            }
        }
        ExperimentKind::CurveFit => unreachable!("handled above"),
    }
    out
}
