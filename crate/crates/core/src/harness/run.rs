use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;
use serde_json::json;

use super::config::{validate, BasePool, ExperimentConfig, ExperimentKind, PoolSource, WORKERS_ENV};
use crate::crowd::{run_crowd_cell, Condition, DrawnRecord};
use crate::curvefit::{curve_points, fit_power_law, save_fits, LearningCurve};
use crate::dataset::{
    balanced_subset, load_metrics, load_pool, save_metrics, split_folds, FoldSpec, MetricRecord,
    Pool, PoolSchema,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};
use crate::selection::{
    run_active_learning, ActiveLearningRun, SelectionRecord, StrategyKind, StrategySpec,
    SELECTION_COLUMNS,
};
use crate::synth::generate_pool;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SELECTIONS_FILE: &str = "selections.csv";
pub const DRAWN_FILE: &str = "drawn_counts.csv";
pub const FITS_FILE: &str = "fits.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// What a finished run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub metric_rows: usize,
}

/// Rows `metrics.csv` will hold for a valid config.
pub fn expected_metric_rows(config: &ExperimentConfig) -> usize {
    let cfg = config.resolved();
    let grid = cfg.seeds.len() * cfg.folds.unwrap_or(1);
    match cfg.experiment {
        ExperimentKind::Exp1Selection => {
            let e = cfg.exp1.unwrap_or_default();
            grid * e.strategies.len() * e.iterations * e.metrics.len()
        }
        ExperimentKind::Exp2Crowd => {
            let e = cfg.exp2.unwrap_or_default();
            grid * e.conditions.len() * e.train_modes.len() * e.test_modes.len() * e.checkpoints.len()
        }
        ExperimentKind::CurveFit => 0,
    }
}

/// The pool one run seed works on. Synthetic pools are regenerated per run
/// seed; CSV pools are the same for every seed.
pub fn build_pool(source: &PoolSource, run_seed: u64) -> Result<Pool> {
    match source {
        PoolSource::Csv(c) => load_pool(&c.path, &c.schema()),
        PoolSource::Synth(s) => {
            let mut s = s.clone();
            s.seed = derive_seed(run_seed, &format!("pool/{}", s.seed));
            generate_pool(&s)
        }
    }
}

fn workers(config: &ExperimentConfig) -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config {
            key: WORKERS_ENV.to_owned(),
            reason: format!("expected a nonnegative integer, got `{v}`"),
        }),
        Err(_) => Ok(config.workers),
    }
}

fn in_cell<T>(cell: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Cell {
        cell: cell.to_owned(),
        source: Box::new(e),
    })
}

/// Run every cell of `cell_fn` over `cells` on `threads` workers, returning
/// results in input order or the first failure in input order.
fn run_cells<C, T, F>(threads: usize, cells: &[C], cell_fn: F) -> Result<Vec<T>>
where
    C: Sync,
    T: Send,
    F: Fn(&C) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| cells.par_iter().map(&cell_fn).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

/// Execute `config` and write its outputs. Invalid configs are rejected
/// before anything is written, naming the first offending key.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    if let Some(p) = validate(config).into_iter().next() {
        return Err(Error::Config {
            key: p.key,
            reason: p.reason,
        });
    }
    let cfg = config.resolved();
    let threads = workers(&cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let out = |name: &str| cfg.output_dir.join(name);

    let mut files = Vec::new();
    let mut folds_used = Vec::new();
    let mut metric_rows = 0;
    match cfg.experiment {
        ExperimentKind::Exp1Selection => {
            let (records, selections, fold_log) = run_exp1(&cfg, threads)?;
            folds_used = fold_log;
            metric_rows = records.len();
            save_metrics(&records, out(METRICS_FILE))?;
            write_selections(&selections, out(SELECTIONS_FILE))?;
            files.extend([METRICS_FILE, SELECTIONS_FILE]);
            let e = cfg.exp1.as_ref().expect("resolved");
            if e.fit {
                let fits = e
                    .fit_metrics
                    .iter()
                    .map(|m| fit_metric(&records, m, Some(e.fit_strategy.as_str())))
                    .collect::<Result<Vec<_>>>()?;
                save_fits(&fits, out(FITS_FILE))?;
                files.push(FITS_FILE);
            }
        }
        ExperimentKind::Exp2Crowd => {
            let (records, drawn, fold_log) = run_exp2(&cfg, threads)?;
            folds_used = fold_log;
            metric_rows = records.len();
            save_metrics(&records, out(METRICS_FILE))?;
            write_drawn(&drawn, out(DRAWN_FILE))?;
            files.extend([METRICS_FILE, DRAWN_FILE]);
        }
        ExperimentKind::CurveFit => {
            let cf = cfg.curve_fit.as_ref().expect("validated");
            let records = load_metrics(&cf.metrics_csv)?;
            let fits = cf
                .metrics
                .iter()
                .map(|m| fit_metric(&records, m, cf.strategy.as_deref()))
                .collect::<Result<Vec<_>>>()?;
            save_fits(&fits, out(FITS_FILE))?;
            files.push(FITS_FILE);
        }
    }

    let manifest = json!({
        "config": cfg,
        "seeds": cfg.seeds,
        "folds": folds_used,
        "outputs": files,
        "metric_rows": metric_rows,
        "version": env!("CARGO_PKG_VERSION"),
    });
    std::fs::write(out(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    files.push(MANIFEST_FILE);

    Ok(RunSummary {
        files: files.into_iter().map(out).collect(),
        metric_rows,
    })
}

fn fit_metric(records: &[MetricRecord], metric: &str, strategy: Option<&str>) -> Result<(String, LearningCurve)> {
    let points = curve_points(records, metric, strategy);
    let curve = in_cell(&format!("fit/metric={metric}"), fit_power_law(&points))?;
    Ok((metric.to_owned(), curve))
}

#[derive(serde::Serialize)]
struct FoldLog {
    seed: u64,
    #[serde(flatten)]
    fold: FoldSpec,
}

type Exp1Out = (Vec<MetricRecord>, Vec<(u64, usize, StrategyKind, SelectionRecord)>, Vec<FoldLog>);

struct Exp1Cell<'a> {
    seed: u64,
    fold: usize,
    strategy: StrategyKind,
    train: &'a Pool,
    eval: &'a Pool,
}

fn run_exp1(cfg: &ExperimentConfig, threads: usize) -> Result<Exp1Out> {
    let e = cfg.exp1.as_ref().expect("resolved");
    let source = cfg.pool_source.as_ref().expect("validated");
    let learner = cfg.classifier.learner(50);

    // (seed, fold) -> (train with base set applied, eval)
    let mut prepared = Vec::new();
    let mut fold_log = Vec::new();
    for &seed in &cfg.seeds {
        let pool = in_cell(&format!("seed={seed}"), build_pool(source, seed))?;
        let folds = in_cell(
            &format!("seed={seed}"),
            split_folds(&pool, cfg.folds.unwrap_or(1), cfg.train_fraction, derive_seed(seed, "folds")),
        )?;
        for fold in folds {
            let tag = format!("seed={seed}/fold={}", fold.fold_index);
            let (mut train, test) = fold.partition(&pool);
            in_cell(&tag, apply_base(&mut train, e.base_pool.as_ref(), derive_seed(seed, &format!("base/fold={}", fold.fold_index))))?;
            let eval = match &e.eval_balance {
                None => test,
                Some(b) => {
                    in_cell(
                        &tag,
                        balanced_subset(&test, &b.attributes, b.per_cell, derive_seed(seed, &format!("eval/fold={}", fold.fold_index))),
                    )?
                    .pool
                }
            };
            prepared.push((seed, fold.fold_index, train, eval));
            fold_log.push(FoldLog { seed, fold });
        }
    }

    let cells: Vec<Exp1Cell> = prepared
        .iter()
        .flat_map(|(seed, fold, train, eval)| {
            e.strategies.iter().map(move |&strategy| Exp1Cell {
                seed: *seed,
                fold: *fold,
                strategy,
                train,
                eval,
            })
        })
        .collect();

    let runs: Vec<ActiveLearningRun> = run_cells(threads, &cells, |c| {
        let tag = format!("seed={}/fold={}/strategy={}", c.seed, c.fold, c.strategy);
        let spec = StrategySpec {
            kind: c.strategy,
            seed: derive_seed(c.seed, &format!("exp1/fold={}/strategy={}", c.fold, c.strategy)),
        };
        in_cell(
            &tag,
            run_active_learning(c.train.clone(), spec, e.iterations, e.batch_size, c.eval, &learner),
        )
    })?;

    let mut records = Vec::new();
    let mut selections = Vec::new();
    for (c, run) in cells.iter().zip(runs) {
        for m in &run.metrics {
            for name in &e.metrics {
                let value = match name.as_str() {
                    "accuracy" => m.accuracy,
                    "macro_f1" => m.macro_f1,
                    "cross_entropy" => m.mean_cross_entropy,
                    other => unreachable!("metric `{other}` passed validation"),
                };
                records.push(MetricRecord {
                    iteration: m.iteration,
                    labels_used: m.labels_used,
                    strategy: c.strategy.as_str().to_owned(),
                    fold: c.fold,
                    metric: name.clone(),
                    mean: value,
                    std: 0.0,
                    train_mode: None,
                    test_mode: None,
                    seed: Some(c.seed),
                });
            }
        }
        selections.extend(run.selections.into_iter().map(|s| (c.seed, c.fold, c.strategy, s)));
    }
    Ok((records, selections, fold_log))
}

fn apply_base(train: &mut Pool, base: Option<&BasePool>, seed: u64) -> Result<()> {
    match base {
        None => Ok(()),
        Some(BasePool::Fraction(f)) => {
            let n = (f * train.len() as f64).round() as usize;
            let picked: Vec<_> = index::sample(&mut seeded_rng(seed), train.len(), n)
                .into_iter()
                .map(|i| train.frames()[i].id.clone())
                .collect();
            train.mark_labeled(&picked)
        }
        Some(BasePool::Csv(path)) => {
            let schema = PoolSchema {
                class_count: train.class_count(),
                class_names: train.class_names().map(<[String]>::to_vec),
            };
            let extra = load_pool(path, &schema)?;
            train.extend_labeled(extra)
        }
    }
}

fn write_selections(rows: &[(u64, usize, StrategyKind, SelectionRecord)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = SELECTION_COLUMNS.to_vec();
    header.extend(["strategy", "fold", "seed"]);
    w.write_record(&header)?;
    for (seed, fold, strategy, r) in rows {
        let mut fields = r.csv_fields().to_vec();
        fields.extend([strategy.as_str().to_owned(), fold.to_string(), seed.to_string()]);
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

type Exp2Out = (Vec<MetricRecord>, Vec<(u64, DrawnRecord)>, Vec<FoldLog>);

fn run_exp2(cfg: &ExperimentConfig, threads: usize) -> Result<Exp2Out> {
    let e = cfg.exp2.as_ref().expect("resolved");
    let source = cfg.pool_source.as_ref().expect("validated");
    let params = cfg.crowd_params();

    let mut pools = Vec::new();
    let mut fold_log = Vec::new();
    for &seed in &cfg.seeds {
        let pool = in_cell(&format!("seed={seed}"), build_pool(source, seed))?;
        let folds = in_cell(
            &format!("seed={seed}"),
            split_folds(&pool, cfg.folds.unwrap_or(3), cfg.train_fraction, derive_seed(seed, "folds")),
        )?;
        pools.push((seed, pool, folds));
    }

    let cells: Vec<(u64, &Pool, &FoldSpec, Condition)> = pools
        .iter()
        .flat_map(|(seed, pool, folds)| {
            folds.iter().flat_map(move |fold| {
                e.conditions.iter().map(move |&c| (*seed, pool, fold, c))
            })
        })
        .collect();

    let runs = run_cells(threads, &cells, |&(seed, pool, fold, condition)| {
        let tag = format!("seed={seed}/fold={}/condition={condition}", fold.fold_index);
        in_cell(&tag, run_crowd_cell(pool, fold, condition, &params, derive_seed(seed, "exp2")))
    })?;

    let mut records = Vec::new();
    let mut drawn = Vec::new();
    for (&(seed, ..), run) in cells.iter().zip(runs) {
        records.extend(run.records.into_iter().map(|mut r| {
            r.seed = Some(seed);
            r
        }));
        drawn.extend(run.drawn.into_iter().map(|d| (seed, d)));
    }
    for (seed, _, folds) in pools {
        fold_log.extend(folds.into_iter().map(|fold| FoldLog { seed, fold }));
    }
    Ok((records, drawn, fold_log))
}

fn write_drawn(rows: &[(u64, DrawnRecord)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let classes = rows.first().map_or(0, |(_, d)| d.drawn.len());
    let mut header: Vec<String> = ["seed", "fold", "condition", "checkpoint", "frame_id"]
        .map(String::from)
        .to_vec();
    header.extend((0..classes).map(|k| format!("drawn_{k}")));
    w.write_record(&header)?;
    for (seed, d) in rows {
        let mut fields = vec![
            seed.to_string(),
            d.fold.to_string(),
            d.condition.as_str().to_owned(),
            d.checkpoint.to_string(),
            d.frame_id.0.clone(),
        ];
        fields.extend(d.drawn.iter().map(u32::to_string));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
