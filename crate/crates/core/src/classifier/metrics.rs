use super::{argmax, cross_entropy, ClassifierModel, TargetMode, TargetSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Argmax accuracy; only computed against one-hot targets.
    pub accuracy: Option<f64>,
    /// Unweighted mean of per-class F1 over all classes; one-hot only.
    pub macro_f1: Option<f64>,
    pub mean_cross_entropy: f64,
}

/// Score `model` on `features` against `targets`.
pub fn evaluate(
    model: &ClassifierModel,
    features: &[&[f64]],
    targets: &TargetSet,
) -> Result<EvalMetrics> {
    if features.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if features.len() != targets.len() {
        return Err(Error::Length {
            expected: features.len(),
            actual: targets.len(),
        });
    }
    let c = model.class_count();
    let mut ce = 0.0;
    let mut confusion = vec![vec![0usize; c]; c];
    for (x, t) in features.iter().zip(targets.rows()) {
        let p = model.predict_proba(x)?;
        ce += cross_entropy(&p, t)?;
        if targets.mode() == TargetMode::OneHot {
            confusion[argmax(t)][argmax(&p)] += 1;
        }
    }
    let n = features.len() as f64;
    let (accuracy, macro_f1) = match targets.mode() {
        TargetMode::OneHot => {
            let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
            (Some(correct as f64 / n), Some(macro_f1(&confusion)))
        }
        TargetMode::Soft => (None, None),
    };
    Ok(EvalMetrics {
        accuracy,
        macro_f1,
        mean_cross_entropy: ce / n,
    })
}

/// `confusion[truth][predicted]`. A class with no support and no predictions
/// scores F1 = 0.
fn macro_f1(confusion: &[Vec<usize>]) -> f64 {
    let c = confusion.len();
    let total: f64 = (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let actual: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    total / c as f64
}
