use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassifierModel, TargetSet};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Mini-batch loop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    /// Standard deviation of Gaussian noise added to every training feature,
    /// drawn fresh each epoch. Zero disables it.
    pub jitter_std: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 50,
            batch_size: 32,
            jitter_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch, measured on each batch before its update.
    pub epoch_losses: Vec<f64>,
}

impl ClassifierModel {
    /// Train in place; see [`ClassifierModel::train_with`].
    pub fn train(
        &mut self,
        features: &[&[f64]],
        targets: &TargetSet,
        params: &TrainParams,
        seed: u64,
    ) -> Result<TrainReport> {
        self.train_with(features, targets, params, seed, |_, _| {})
    }

    /// Shuffled mini-batch Adam on mean cross-entropy, calling `on_epoch`
    /// with the 1-based epoch number after every epoch.
    ///
    /// The shuffle order and jitter come from `seed` alone, so identical
    /// inputs give bit-identical weights.
    pub fn train_with(
        &mut self,
        features: &[&[f64]],
        targets: &TargetSet,
        params: &TrainParams,
        seed: u64,
        mut on_epoch: impl FnMut(usize, &ClassifierModel),
    ) -> Result<TrainReport> {
        if features.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if features.len() != targets.len() {
            return Err(Error::Length {
                expected: features.len(),
                actual: targets.len(),
            });
        }
        if params.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(params.jitter_std >= 0.0) {
            return Err(Error::invalid("jitter_std must be nonnegative"));
        }
        for x in features {
            self.check_dim(x)?;
        }
        if let Some(row) = targets.rows().first() {
            if row.len() != self.class_count {
                return Err(Error::Length {
                    expected: self.class_count,
                    actual: row.len(),
                });
            }
        }

        let mut rng = seeded_rng(seed);
        let jitter = (params.jitter_std > 0.0)
            .then(|| Normal::new(0.0, params.jitter_std).expect("std checked above"));
        let mut order: Vec<usize> = (0..features.len()).collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut noisy = vec![0.0; self.feature_dim];
        let mut report = TrainReport::default();

        for epoch in 1..=params.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(params.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let x: &[f64] = match &jitter {
                        Some(n) => {
                            for (dst, &src) in noisy.iter_mut().zip(features[i]) {
                                *dst = src + n.sample(&mut rng);
                            }
                            &noisy
                        }
                        None => features[i],
                    };
                    epoch_loss += self.accumulate_gradient(x, &targets.rows()[i], scale, &mut grad);
                }
                self.adam.step(&mut self.params, &grad);
            }
            report.epoch_losses.push(epoch_loss / features.len() as f64);
            on_epoch(epoch, self);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{AdamConfig, TargetMode};
    use super::*;

    fn separable() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..20 {
            let t = i as f64 / 20.0;
            xs.push(vec![1.0 + t, 0.5 - t]);
            ys.push(0);
            xs.push(vec![-1.0 - t, -0.5 + t]);
            ys.push(1);
        }
        (xs, ys)
    }

    fn model(hidden: usize, lr: f64) -> ClassifierModel {
        let adam = AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        };
        ClassifierModel::new(2, 2, hidden, adam, 3).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (xs, ys) = separable();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let targets = TargetSet::one_hot(&ys, 2).unwrap();
        let mut m = model(0, 1e-3);
        let before = m.clone();
        let params = TrainParams {
            epochs: 0,
            ..TrainParams::default()
        };
        m.train(&refs, &targets, &params, 1).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn first_full_batch_step_is_learning_rate() {
        let (xs, ys) = separable();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let targets = TargetSet::one_hot(&ys, 2).unwrap();
        let mut m = model(0, 1e-3);
        let params = TrainParams {
            epochs: 1,
            batch_size: xs.len(),
            jitter_std: 0.0,
        };
        m.train(&refs, &targets, &params, 1).unwrap();
        // weights move by exactly lr; the balanced set leaves biases at zero gradient
        let (w, b) = m.params().split_at(4);
        for &w in w {
            assert!((w.abs() - 1e-3).abs() < 1e-8, "{w}");
        }
        for &b in b {
            assert!(b.abs() < 1e-6, "{b}");
        }
    }

    #[test]
    fn separable_set_reaches_perfect_accuracy() {
        let (xs, ys) = separable();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let targets = TargetSet::one_hot(&ys, 2).unwrap();
        for hidden in [0, 4] {
            let mut m = model(hidden, 1e-3);
            let params = TrainParams {
                epochs: 200,
                batch_size: 8,
                jitter_std: 0.0,
            };
            let report = m.train(&refs, &targets, &params, 9).unwrap();
            let correct = refs
                .iter()
                .zip(&ys)
                .filter(|(x, &y)| m.predict(x).unwrap() == y)
                .count();
            assert_eq!(correct, ys.len(), "hidden={hidden}");
            let head: f64 = report.epoch_losses[..10].iter().sum();
            let tail: f64 = report.epoch_losses[190..].iter().sum();
            assert!(tail <= head);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = separable();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let targets = TargetSet::one_hot(&ys, 2).unwrap();
        let params = TrainParams {
            epochs: 20,
            batch_size: 7,
            jitter_std: 0.1,
        };
        let mut a = model(3, 1e-2);
        let mut b = model(3, 1e-2);
        a.train(&refs, &targets, &params, 42).unwrap();
        b.train(&refs, &targets, &params, 42).unwrap();
        assert_eq!(a.params(), b.params());
        let mut c = model(3, 1e-2);
        c.train(&refs, &targets, &params, 43).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn empty_training_set_is_error() {
        let mut m = model(0, 1e-3);
        let targets = TargetSet::new(TargetMode::Soft, vec![]).unwrap();
        assert!(matches!(
            m.train(&[], &targets, &TrainParams::default(), 0),
            Err(Error::Empty(_))
        ));
    }
}
