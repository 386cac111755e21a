//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fail. Pass criterion numbers as arguments to run a
//! subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use alsim_core::harness::{run, ExperimentConfig};
use alsim_core::{
    allocate_budget, cross_entropy, entropy, fit_power_law, generate_pool, load_metrics, predict,
    ClassifierModel, FrameId, MetricRecord, PowerLaw, Selector, StrategyKind, StrategySpec,
    SynthConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn budget_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1usize, 7, 20, 100, 1234] {
        let hs: BTreeMap<FrameId, f64> = (0..n)
            .map(|i| (FrameId(i.to_string()), rng.random::<f64>()))
            .collect();
        let plan = allocate_budget(&hs).unwrap();
        let total: u64 = plan.per_frame_samples.values().map(|&s| s as u64).sum();
        if total != 3 * n as u64 || plan.total != 3 * n as u64 {
            return outcome(false, format!("N={n}: total {total}"));
        }
    }
    // N=100: 10 frames x 7, 15 x 5, 40 x 3, 35 x 1, i.e. N + 6(0.1N) + 4(0.15N) + 2(0.4N).
    let hs: BTreeMap<FrameId, f64> = (0..100)
        .map(|i| (FrameId(i.to_string()), rng.random::<f64>()))
        .collect();
    let plan = allocate_budget(&hs).unwrap();
    let mut tiers: BTreeMap<u32, usize> = BTreeMap::new();
    for &s in plan.per_frame_samples.values() {
        *tiers.entry(s).or_default() += 1;
    }
    let expected = BTreeMap::from([(7, 10), (5, 15), (3, 40), (1, 35)]);
    let arithmetic = 100 + 6 * 10 + 4 * 15 + 2 * 40;
    let mut ranked: Vec<(&FrameId, f64)> = hs.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let ordered = ranked
        .windows(2)
        .all(|w| plan.per_frame_samples[w[0].0] >= plan.per_frame_samples[w[1].0]);
    outcome(
        tiers == expected && arithmetic == 300 && ordered,
        format!("N=100 tiers {tiers:?}"),
    )
}

// ---------------------------------------------------------------- 2

fn entropy_arithmetic() -> Outcome {
    let uniform = vec![1.0 / 7.0; 7];
    let mut one_hot = vec![0.0; 7];
    one_hot[3] = 1.0;
    let ln7 = 7f64.ln();
    let h_u = entropy(&uniform).unwrap();
    let h_1 = entropy(&one_hot).unwrap();
    let ce = cross_entropy(&uniform, &one_hot).unwrap();
    outcome(
        (h_u - ln7).abs() < 1e-9 && h_1 == 0.0 && (ce - ln7).abs() < 1e-9,
        format!("H(uniform)={h_u:.12} H(one-hot)={h_1} CE={ce:.12}"),
    )
}

// ---------------------------------------------------------------- 3

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Linear or one-hidden-layer forward pass straight from the flat parameter
/// layout: `W(CxD), b(C)` or `W1(HxD), b1(H), W2(CxH), b2(C)`.
fn oracle_proba(params: &[f64], c: usize, d: usize, h: usize, x: &[f64]) -> Vec<f64> {
    let affine = |w: &[f64], b: &[f64], input: &[f64], rows: usize| -> Vec<f64> {
        (0..rows)
            .map(|r| b[r] + (0..input.len()).map(|k| w[r * input.len() + k] * input[k]).sum::<f64>())
            .collect()
    };
    if h == 0 {
        softmax(&affine(&params[..c * d], &params[c * d..], x, c))
    } else {
        let (w1, rest) = params.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        let hidden: Vec<f64> = affine(w1, b1, x, h).into_iter().map(f64::tanh).collect();
        softmax(&affine(w2, b2, &hidden, c))
    }
}

fn oracle_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

fn random_model(rng: &mut ChaCha8Rng, c: usize, d: usize, h: usize, scale: f64) -> ClassifierModel {
    let mut m = ClassifierModel::new(c, d, h, Default::default(), rng.random()).unwrap();
    let p = (0..m.params().len()).map(|_| rng.random_range(-scale..scale)).collect();
    m.set_params(p).unwrap();
    m
}

fn entropy_argmax_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for trial in 0..100 {
        let c = rng.random_range(2..=7);
        let cfg = SynthConfig {
            class_count: c,
            feature_dim: c + rng.random_range(0..4),
            frames_per_class: rng.random_range(5..40),
            subjects: rng.random_range(1..6),
            auto_label_noise: rng.random_range(0.0..0.5),
            seed: rng.random(),
            ..SynthConfig::default()
        };
        let mut pool = generate_pool(&cfg).unwrap();
        let h = if trial % 2 == 0 { 0 } else { 5 };
        let model = random_model(&mut rng, c, cfg.feature_dim, h, 1.0);
        let spec = StrategySpec {
            kind: StrategyKind::TupleCycleMaxEntropy,
            seed: rng.random(),
        };
        let mut selector = Selector::new(spec, &pool);
        let batch = rng.random_range(1..20);
        for _ in 0..3 {
            let picks = selector.next_batch(&pool, &model, batch).unwrap();
            let mut taken: Vec<&FrameId> = Vec::new();
            for pick in &picks {
                // brute force over the pick's tuple, minus frames already emitted
                let mut best: Option<(&FrameId, f64)> = None;
                for f in pool.frames() {
                    if pool.is_labeled(&f.id)
                        || taken.contains(&&f.id)
                        || f.auto_label != pick.auto_label
                        || f.subject != pick.subject
                    {
                        continue;
                    }
                    let hf = oracle_entropy(&oracle_proba(model.params(), c, cfg.feature_dim, h, &f.features));
                    let better = match best {
                        None => true,
                        Some((id, hb)) => hf > hb || (hf == hb && f.id < *id),
                    };
                    if better {
                        best = Some((&f.id, hf));
                    }
                }
                let (id, hb) = best.expect("pick's tuple had a candidate");
                if *id != pick.frame_id && (hb - pick.entropy).abs() > 1e-12 {
                    return outcome(
                        false,
                        format!("trial {trial}: picked {} (H={}), oracle {id} (H={hb})", pick.frame_id, pick.entropy),
                    );
                }
                taken.push(&pick.frame_id);
                checked += 1;
            }
            let ids: Vec<FrameId> = picks.iter().map(|p| p.frame_id.clone()).collect();
            pool.mark_labeled(&ids).unwrap();
        }
    }
    outcome(checked > 0, format!("{checked} emissions over 100 pools matched"))
}

// ---------------------------------------------------------------- 4

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        for h in [0usize, 6] {
            let c = rng.random_range(2..=7);
            let d = rng.random_range(1..=10);
            let model = random_model(&mut rng, c, d, h, 1.0);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut t: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
            if draw % 2 == 0 {
                let s: f64 = t.iter().sum();
                t.iter_mut().for_each(|v| *v /= s);
            } else {
                t = vec![0.0; c];
                t[rng.random_range(0..c)] = 1.0;
            }
            let (_, analytic) = model.loss_gradient(&x, &t).unwrap();
            let loss = |p: &[f64]| -> f64 {
                let q = oracle_proba(p, c, d, h, &x);
                -t.iter().zip(&q).map(|(ti, qi)| ti * qi.ln()).sum::<f64>()
            };
            let mut p = model.params().to_vec();
            let step = 1e-6;
            for i in 0..p.len() {
                let orig = p[i];
                p[i] = orig + step;
                let up = loss(&p);
                p[i] = orig - step;
                let down = loss(&p);
                p[i] = orig;
                let numeric = (up - down) / (2.0 * step);
                let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 5

fn run_config(json: String) -> Vec<MetricRecord> {
    let cfg = ExperimentConfig::from_json(&json).unwrap_or_else(|p| panic!("{p}"));
    run(&cfg).unwrap_or_else(|e| panic!("{e}"));
    load_metrics(cfg.output_dir.join("metrics.csv")).unwrap()
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

fn exp1_direction(dir: &Path) -> Outcome {
    let seeds: Vec<u64> = (1..=10).collect();
    let records = run_config(format!(
        r#"{{
            "experiment": "exp1_selection",
            "pool_source": {{"synth": {{"class_count": 7, "feature_dim": 10, "frames_per_class": 200, "auto_label_noise": 0.2}}}},
            "seeds": {seeds:?},
            "output_dir": "{}",
            "exp1": {{"strategies": ["random", "tuple_cycle", "tuple_cycle_max_entropy"], "iterations": 10, "batch_size": 35}}
        }}"#,
        dir.join("exp1").display()
    ));
    let auc = |seed: u64, strategy: &str| {
        let mut pts: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.seed == Some(seed) && r.strategy == strategy && r.metric == "accuracy")
            .map(|r| (r.labels_used as f64, r.mean))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(pts.len(), 10);
        trapezoid(&pts)
    };
    let mut wins = 0;
    let mut sums = [0.0; 3];
    for &s in &seeds {
        let (r, t, m) = (auc(s, "random"), auc(s, "tuple_cycle"), auc(s, "tuple_cycle_max_entropy"));
        sums[0] += r;
        sums[1] += t;
        sums[2] += m;
        if m >= r {
            wins += 1;
        }
    }
    let n = seeds.len() as f64;
    outcome(
        wins >= 7,
        format!(
            "maxent AUC >= random in {wins}/10 seeds (mean AUC random {:.1}, tuple_cycle {:.1}, maxent {:.1})",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n
        ),
    )
}

// ---------------------------------------------------------------- 6, 7

const CROWD_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// 100 annotators, confusion rising from 0 to 0.6 across the seven classes.
fn crowd_records(dir: &Path, name: &str, classifier: &str, train_modes: &str) -> Vec<MetricRecord> {
    run_config(format!(
        r#"{{
            "experiment": "exp2_crowd",
            "pool_source": {{"synth": {{
                "crowd_annotators": 100,
                "crowd_confusion_by_class": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
            }}}},
            "seeds": {CROWD_SEEDS:?},
            "output_dir": "{}",
            "folds": 3,
            "classifier": {classifier},
            "exp2": {{"train_modes": {train_modes}, "test_modes": ["one_hot"]}}
        }}"#,
        dir.join(name).display()
    ))
}

fn select<'a>(
    records: &'a [MetricRecord],
    condition: &'a str,
    train: &'a str,
) -> impl Iterator<Item = &'a MetricRecord> + 'a {
    records.iter().filter(move |r| {
        r.strategy == condition
            && r.train_mode.map(|m| m.as_str()) == Some(train)
            && r.test_mode.map(|m| m.as_str()) == Some("one_hot")
    })
}

fn exp2_direction(dir: &Path) -> Outcome {
    let records = &crowd_records(dir, "exp2-linear", "{}", r#"["one_hot"]"#);
    // mean CE per (fold, checkpoint), averaged over seeds
    let avg = |condition: &str| {
        let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for r in select(records, condition, "one_hot") {
            let e = acc.entry((r.fold, r.labels_used)).or_default();
            e.0 += r.mean;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(k, (s, n))| {
                assert_eq!(n, CROWD_SEEDS.len());
                (k, s / n as f64)
            })
            .collect::<BTreeMap<_, _>>()
    };
    let active = avg("active");
    let cycling = avg("cycling");
    let mut per_fold = Vec::new();
    for fold in 0..3 {
        let wins = active
            .iter()
            .filter(|((f, _), _)| *f == fold)
            .filter(|(k, a)| **a < cycling[k])
            .count();
        per_fold.push(wins);
    }
    let folds_won = per_fold.iter().filter(|&&w| w >= 6).count();
    outcome(
        folds_won >= 2,
        format!("linear: active wins {per_fold:?} of 11 checkpoints per fold; majority on {folds_won}/3 folds"),
    )
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// One-hot training has to be able to overfit for soft targets to help; a
/// linear model on this pool is too constrained, so this uses a hidden layer.
fn soft_targets(dir: &Path) -> Outcome {
    let records = &crowd_records(
        dir,
        "exp2-hidden",
        r#"{"hidden_units": 32, "learning_rate": 0.01}"#,
        r#"["one_hot", "soft"]"#,
    );
    // run-to-run spread: sample std over every (seed, fold) run
    let mut worst_margin = f64::INFINITY;
    let mut failures = Vec::new();
    for condition in ["cycling", "active"] {
        let by_checkpoint = |train: &str| {
            let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in select(records, condition, train) {
                out.entry(r.labels_used).or_default().push(r.mean);
            }
            out
        };
        let hard = by_checkpoint("one_hot");
        let soft = by_checkpoint("soft");
        assert_eq!(hard.len(), 11);
        for (k, h) in &hard {
            let (mh, sh) = mean_std(h);
            let (ms, ss) = mean_std(&soft[k]);
            let margin = (mh - ms) - sh.max(ss);
            worst_margin = worst_margin.min(margin);
            if margin <= 0.0 {
                failures.push(format!("{condition}@{k}: one-hot {mh:.4}+-{sh:.4} soft {ms:.4}+-{ss:.4}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("hidden=32: soft below one-hot by more than the std at all 22 (condition, checkpoint) points; smallest margin {worst_margin:.4}")
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 8

fn power_law() -> Outcome {
    let paper = PowerLaw::new(0.296, -0.008, 0.257);
    let y = predict(&paper, 35265.0);
    let direct = (1.0 - 0.296) - (-0.008) * 35265f64.powf(0.257);
    let mut worst: f64 = 0.0;
    for truth in [paper, PowerLaw::new(0.1, 0.5, 0.3), PowerLaw::new(-0.2, 1.2, 0.1), PowerLaw::new(0.4, -0.02, 0.6)] {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|k| {
                let x = 35.0 * k as f64;
                (x, (1.0 - truth.a) - truth.b * x.powf(truth.c))
            })
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        worst = worst
            .max((fit.params.a - truth.a).abs())
            .max((fit.params.b - truth.b).abs())
            .max((fit.params.c - truth.c).abs());
    }
    outcome(
        (y - 0.8220).abs() <= 0.0005 && (y - direct).abs() < 1e-12 && (0.8220f64 - 0.8149).abs() < 0.01 && worst < 1e-6,
        format!("f(35265)={y:.5}; gap to 0.8149 = {:.4}; worst noiseless parameter error {worst:.1e}", y - 0.8149),
    )
}

// ---------------------------------------------------------------- 9

fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    out
}

fn determinism(dir: &Path) -> Outcome {
    let exp1 = |out: &Path, workers: usize| {
        format!(
            r#"{{
                "experiment": "exp1_selection",
                "pool_source": {{"synth": {{"frames_per_class": 60, "subjects": 6, "auto_label_noise": 0.2}}}},
                "seeds": [11, 12],
                "folds": 2,
                "output_dir": "{}",
                "workers": {workers},
                "exp1": {{"iterations": 5, "batch_size": 35, "metrics": ["accuracy", "macro_f1", "cross_entropy"], "fit": true}}
            }}"#,
            out.display()
        )
    };
    let exp2 = |out: &Path, workers: usize| {
        format!(
            r#"{{
                "experiment": "exp2_crowd",
                "pool_source": {{"synth": {{"frames_per_class": 30, "subjects": 6, "crowd_annotators": 50, "crowd_confusion": 0.3}}}},
                "seeds": [11, 12],
                "output_dir": "{}",
                "workers": {workers},
                "classifier": {{"epochs": 60}},
                "exp2": {{"checkpoints": [3, 6, 9, 15]}}
            }}"#,
            out.display()
        )
    };
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, make) in [("exp1", &exp1 as &dyn Fn(&Path, usize) -> String), ("exp2", &exp2)] {
        let a = dir.join(format!("{name}-a"));
        let b = dir.join(format!("{name}-b"));
        run_config(make(&a, 1));
        run_config(make(&b, 3));
        let (fa, fb) = (outputs(&a), outputs(&b));
        let csvs: Vec<&String> = fa.keys().filter(|k| k.ends_with(".csv")).collect();
        let same = fa.keys().eq(fb.keys()) && csvs.iter().all(|k| fa[*k] == fb[*k]);
        pass &= same && !csvs.is_empty();
        detail.push(format!("{name}: {} CSVs {}", csvs.len(), if same { "identical" } else { "DIFFER" }));
    }
    outcome(pass, detail.join(", "))
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let tmp = tempfile::tempdir().unwrap();
    let limits = [1, 1, 30, 30, 600, 900, 900, 1, 900];
    let mut results: Vec<(usize, &str, Outcome, Duration)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if on(n) {
            let t = Instant::now();
            let o = f();
            results.push((n, name, o, t.elapsed()));
        }
    };

    timed(1, "budget identity", &mut budget_identity);
    timed(2, "entropy arithmetic", &mut entropy_arithmetic);
    timed(3, "entropy argmax oracle", &mut entropy_argmax_oracle);
    timed(4, "gradient correctness", &mut gradient_correctness);
    timed(5, "exp1 direction of effect", &mut || exp1_direction(tmp.path()));
    timed(6, "exp2 direction of effect", &mut || exp2_direction(tmp.path()));
    timed(7, "soft-target replication", &mut || soft_targets(tmp.path()));
    timed(8, "power-law extrapolation", &mut power_law);
    timed(9, "determinism", &mut || determinism(tmp.path()));

    let mut failed = 0;
    for (n, name, o, elapsed) in results {
        let in_time = elapsed.as_secs_f64() < limits[n - 1] as f64;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n} [{}] {name}: {} ({:.2}s{})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            if in_time { String::new() } else { format!(", over the {}s limit", limits[n - 1]) }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
