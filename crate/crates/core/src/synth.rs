//! Synthetic Gaussian-cluster pools with controllable metadata and crowd noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Frame, Pool};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub class_count: usize,
    pub feature_dim: usize,
    pub frames_per_class: usize,
    pub subjects: usize,
    /// Distance between any two class means.
    pub cluster_separation: f64,
    pub within_class_std: f64,
    /// Probability that `auto_label` is replaced by a random other class.
    pub auto_label_noise: f64,
    /// Votes per frame; 0 leaves `crowd_counts` empty.
    pub crowd_annotators: u32,
    /// Probability that one vote goes to a random other class.
    pub crowd_confusion: f64,
    /// Per-true-class override of `crowd_confusion`.
    pub crowd_confusion_by_class: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            class_count: 7,
            feature_dim: 10,
            frames_per_class: 200,
            subjects: 10,
            cluster_separation: 3.0,
            within_class_std: 1.0,
            auto_label_noise: 0.0,
            crowd_annotators: 0,
            crowd_confusion: 0.0,
            crowd_confusion_by_class: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Every violated constraint as `(field, reason)`.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.class_count < 2 {
            out.push(("class_count", "must be at least 2".to_owned()));
        }
        if self.feature_dim < self.class_count {
            out.push((
                "feature_dim",
                format!(
                    "must be at least class_count ({}) so class means sit on distinct axes",
                    self.class_count
                ),
            ));
        }
        if self.frames_per_class == 0 {
            out.push(("frames_per_class", "must be at least 1".to_owned()));
        }
        if self.subjects == 0 {
            out.push(("subjects", "must be at least 1".to_owned()));
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            out.push(("cluster_separation", "must be finite and nonnegative".to_owned()));
        }
        if !(self.within_class_std > 0.0 && self.within_class_std.is_finite()) {
            out.push(("within_class_std", "must be finite and positive".to_owned()));
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.auto_label_noise) {
            out.push(("auto_label_noise", "must lie in [0, 1]".to_owned()));
        }
        if !unit(self.crowd_confusion) {
            out.push(("crowd_confusion", "must lie in [0, 1]".to_owned()));
        }
        if let Some(by_class) = &self.crowd_confusion_by_class {
            if by_class.len() != self.class_count {
                out.push((
                    "crowd_confusion_by_class",
                    format!("needs {} entries, got {}", self.class_count, by_class.len()),
                ));
            } else if !by_class.iter().all(|&p| unit(p)) {
                out.push(("crowd_confusion_by_class", "entries must lie in [0, 1]".to_owned()));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            None => Ok(()),
            Some((key, reason)) => Err(Error::Config {
                key: key.to_owned(),
                reason,
            }),
        }
    }

    fn confusion_for(&self, class: usize) -> f64 {
        self.crowd_confusion_by_class
            .as_ref()
            .map_or(self.crowd_confusion, |v| v[class])
    }
}

/// Uniform draw from every class except `avoid`.
fn other_class(rng: &mut impl Rng, class_count: usize, avoid: usize) -> usize {
    let k = rng.random_range(0..class_count - 1);
    if k >= avoid {
        k + 1
    } else {
        k
    }
}

/// Generate a pool from `config`.
///
/// Frame `g` (id `g`) has class `g mod C` and subject `(g div C) mod S`, so
/// classes interleave and every subject sees every class. Class `c` is
/// centered at `e_c * separation / sqrt(2)`, making all pairwise mean
/// distances equal to `cluster_separation`.
pub fn generate_pool(config: &SynthConfig) -> Result<Pool> {
    config.validate()?;
    let c = config.class_count;
    let d = config.feature_dim;
    let offset = config.cluster_separation / std::f64::consts::SQRT_2;
    let noise = Normal::new(0.0, config.within_class_std).expect("std validated");
    let mut rng = seeded_rng(config.seed);
    let total = c * config.frames_per_class;
    let width = config.subjects.saturating_sub(1).to_string().len();

    let mut frames = Vec::with_capacity(total);
    for g in 0..total {
        let class = g % c;
        let subject = (g / c) % config.subjects;
        let mut features: Vec<f64> = (0..d).map(|_| noise.sample(&mut rng)).collect();
        features[class] += offset;

        let auto = if c > 1 && rng.random_bool(config.auto_label_noise) {
            other_class(&mut rng, c, class)
        } else {
            class
        };
        let crowd = (config.crowd_annotators > 0).then(|| {
            let confusion = config.confusion_for(class);
            let mut counts = vec![0u32; c];
            for _ in 0..config.crowd_annotators {
                let vote = if rng.random_bool(confusion) {
                    other_class(&mut rng, c, class)
                } else {
                    class
                };
                counts[vote] += 1;
            }
            counts
        });

        let mut frame = Frame::new(g.to_string(), format!("s{subject:0width$}"), features);
        frame.true_label = Some(class);
        frame.auto_label = Some(auto);
        frame.crowd_counts = crowd;
        frames.push(frame);
    }
    Pool::new(c, d, frames)
}
