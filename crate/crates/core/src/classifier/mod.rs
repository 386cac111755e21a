//! Softmax classifier (linear, or one tanh hidden layer) trained with Adam on
//! categorical cross-entropy, plus evaluation metrics.
//!
//! All logarithms are natural. Probabilities are clamped to `1e-12` before
//! taking logs so confident mistakes give a finite loss.

mod adam;
mod metrics;
mod train;
mod weights;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

pub use adam::{AdamConfig, AdamState};
pub use metrics::{evaluate, EvalMetrics};
pub use train::{TrainParams, TrainReport};
pub use weights::{load_weights, save_weights};

pub const PROB_FLOOR: f64 = 1e-12;

/// How training or test targets are formed from labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    OneHot,
    Soft,
}

impl TargetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetMode::OneHot => "one_hot",
            TargetMode::Soft => "soft",
        }
    }
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_hot" => Ok(TargetMode::OneHot),
            "soft" => Ok(TargetMode::Soft),
            other => Err(Error::invalid(format!("unknown target mode `{other}`"))),
        }
    }
}

/// Per-frame target distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    mode: TargetMode,
    rows: Vec<Vec<f64>>,
}

impl TargetSet {
    /// Validate rows against `mode`: one-hot rows hold a single 1, soft rows
    /// are nonnegative and sum to 1 within 1e-9.
    pub fn new(mode: TargetMode, rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Length {
                    expected: width,
                    actual: row.len(),
                });
            }
            let ok = match mode {
                TargetMode::OneHot => {
                    row.iter().filter(|&&v| v == 1.0).count() == 1
                        && row.iter().all(|&v| v == 0.0 || v == 1.0)
                }
                TargetMode::Soft => {
                    row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
                }
            };
            if !ok {
                return Err(Error::invalid(format!("target row {i} is not a valid {mode} row")));
            }
        }
        Ok(TargetSet { mode, rows })
    }

    pub fn one_hot(labels: &[usize], class_count: usize) -> Result<Self> {
        let rows = labels
            .iter()
            .map(|&l| {
                if l >= class_count {
                    return Err(Error::invalid(format!(
                        "label {l} is not below class count {class_count}"
                    )));
                }
                let mut row = vec![0.0; class_count];
                row[l] = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TargetSet {
            mode: TargetMode::OneHot,
            rows,
        })
    }

    pub fn mode(&self) -> TargetMode {
        self.mode
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Categorical cross-entropy `-sum t_i ln(max(p_i, 1e-12))`.
pub fn cross_entropy(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::Length {
            expected: target.len(),
            actual: predicted.len(),
        });
    }
    Ok(predicted
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(PROB_FLOOR).ln())
        .sum())
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Multinomial softmax model with optional tanh hidden layer.
///
/// Parameters live in one flat vector. Linear layout: `W (C x D)` row-major
/// then `b (C)`. Hidden layout: `W1 (H x D)`, `b1 (H)`, `W2 (C x H)`, `b2 (C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    class_count: usize,
    feature_dim: usize,
    hidden_units: usize,
    params: Vec<f64>,
    adam: AdamState,
}

struct Forward {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl ClassifierModel {
    /// Fresh model. The linear model starts at zero; hidden-layer weights are
    /// drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with biases at zero.
    pub fn new(
        class_count: usize,
        feature_dim: usize,
        hidden_units: usize,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::invalid("class_count must be at least 2"));
        }
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        adam.validate()?;
        let n = Self::param_count_for(class_count, feature_dim, hidden_units);
        let mut params = vec![0.0; n];
        if hidden_units > 0 {
            let mut rng = seeded_rng(seed);
            let (h, d, c) = (hidden_units, feature_dim, class_count);
            let s1 = 1.0 / (d as f64).sqrt();
            for w in &mut params[..h * d] {
                *w = rng.random_range(-s1..s1);
            }
            let s2 = 1.0 / (h as f64).sqrt();
            let w2 = h * d + h;
            for w in &mut params[w2..w2 + c * h] {
                *w = rng.random_range(-s2..s2);
            }
        }
        Ok(ClassifierModel {
            class_count,
            feature_dim,
            hidden_units,
            params,
            adam: AdamState::new(adam, n),
        })
    }

    fn param_count_for(c: usize, d: usize, h: usize) -> usize {
        if h == 0 {
            c * d + c
        } else {
            h * d + h + c * h + c
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_units
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Overwrite all parameters. Length must match the layout.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Length {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// Same architecture and optimizer settings, parameters and optimizer
    /// state reset as by [`ClassifierModel::new`].
    pub fn fresh(&self, seed: u64) -> Self {
        ClassifierModel::new(
            self.class_count,
            self.feature_dim,
            self.hidden_units,
            self.adam.config,
            seed,
        )
        .expect("existing model shape is valid")
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::Dimension {
                expected: self.feature_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let (c, d, h) = (self.class_count, self.feature_dim, self.hidden_units);
        let p = &self.params;
        let affine = |w: &[f64], b: &[f64], input: &[f64], out: usize| -> Vec<f64> {
            let n = input.len();
            (0..out)
                .map(|r| {
                    b[r] + w[r * n..(r + 1) * n]
                        .iter()
                        .zip(input)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .collect()
        };
        if h == 0 {
            let mut z = affine(&p[..c * d], &p[c * d..], x, c);
            softmax_in_place(&mut z);
            Forward {
                hidden: Vec::new(),
                probs: z,
            }
        } else {
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let hidden: Vec<f64> = affine(w1, b1, x, h).into_iter().map(f64::tanh).collect();
            let mut z = affine(w2, b2, &hidden, c);
            softmax_in_place(&mut z);
            Forward { hidden, probs: z }
        }
    }

    /// Class probabilities for one feature vector.
    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        Ok(self.forward(features).probs)
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(features)?))
    }

    /// Accumulate `scale * dL/dparams` for one example into `grad`; returns
    /// the example loss.
    fn accumulate_gradient(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let (c, d, h) = (self.class_count, self.feature_dim, self.hidden_units);
        let fwd = self.forward(x);
        let mass: f64 = target.iter().sum();
        let dz: Vec<f64> = fwd
            .probs
            .iter()
            .zip(target)
            .map(|(&p, &t)| scale * (p * mass - t))
            .collect();
        let loss = cross_entropy(&fwd.probs, target).expect("lengths checked by caller");

        let outer = |g: &mut [f64], left: &[f64], right: &[f64]| {
            let n = right.len();
            for (r, &l) in left.iter().enumerate() {
                for (gv, &rv) in g[r * n..(r + 1) * n].iter_mut().zip(right) {
                    *gv += l * rv;
                }
            }
        };
        if h == 0 {
            let (gw, gb) = grad.split_at_mut(c * d);
            outer(gw, &dz, x);
            gb.iter_mut().zip(&dz).for_each(|(g, v)| *g += v);
        } else {
            let w2 = &self.params[h * d + h..h * d + h + c * h];
            let (gw1, rest) = grad.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            outer(gw2, &dz, &fwd.hidden);
            gb2.iter_mut().zip(&dz).for_each(|(g, v)| *g += v);
            let da: Vec<f64> = (0..h)
                .map(|j| {
                    let back: f64 = (0..c).map(|k| w2[k * h + j] * dz[k]).sum();
                    back * (1.0 - fwd.hidden[j] * fwd.hidden[j])
                })
                .collect();
            outer(gw1, &da, x);
            gb1.iter_mut().zip(&da).for_each(|(g, v)| *g += v);
        }
        loss
    }

    /// Loss and analytic gradient of cross-entropy for a single example.
    pub fn loss_gradient(&self, features: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(features)?;
        if target.len() != self.class_count {
            return Err(Error::Length {
                expected: self.class_count,
                actual: target.len(),
            });
        }
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(features, target, 1.0, &mut grad);
        Ok((loss, grad))
    }

    pub fn loss(&self, features: &[f64], target: &[f64]) -> Result<f64> {
        cross_entropy(&self.predict_proba(features)?, target)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Largest relative error between the analytic gradient and central finite
/// differences with step `h`, over every parameter.
///
/// Relative error per entry is `|a - n| / max(|a| + |n|, 1e-8)`, so entries
/// where both gradients vanish compare absolutely.
pub fn gradient_check(
    model: &ClassifierModel,
    features: &[f64],
    target: &[f64],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (_, analytic) = model.loss_gradient(features, target)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.loss(features, target)?;
        probe.params[i] = orig - h;
        let down = probe.loss(features, target)?;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
