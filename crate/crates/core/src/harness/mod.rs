//! Config-driven experiment runner.
//!
//! A run reads one JSON [`ExperimentConfig`], executes every
//! (seed, fold, strategy or condition) cell on a worker pool and writes the
//! CSV bundle plus `manifest.json` into `output_dir`.

mod config;
mod run;

pub use config::{
    validate, BasePool, ClassifierSection, CsvPool, CurveFitSection, EvalBalance, Exp1Section,
    Exp2Section, ExperimentConfig, ExperimentKind, PoolSource, Problem, EXP1_METRICS, WORKERS_ENV,
};
pub use run::{
    build_pool, expected_metric_rows, run, RunSummary, DRAWN_FILE, FITS_FILE, MANIFEST_FILE,
    METRICS_FILE, SELECTIONS_FILE,
};
