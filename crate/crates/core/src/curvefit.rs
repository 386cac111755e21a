//! Power-law learning curves `f(x) = (1 - a) - b * x^c`.
//!
//! `b` is left unconstrained: a negative `b` with `0 < c` gives a curve that
//! rises with the label count.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::Path;

use crate::dataset::MetricRecord;
use crate::error::{Error, Result};

const GRID_EXPONENTS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 1.0];
const MAX_ITERATIONS: usize = 500;
const STEP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PowerLaw {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        PowerLaw { a, b, c }
    }

    /// Value approached as `x -> infinity` when `c < 0`, and the intercept
    /// term otherwise.
    pub fn asymptote(&self) -> f64 {
        1.0 - self.a
    }

    fn as_array(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    fn from_array(p: [f64; 3]) -> Self {
        PowerLaw::new(p[0], p[1], p[2])
    }
}

/// `(1 - a) - b * x^c`.
pub fn predict(params: &PowerLaw, x: f64) -> f64 {
    (1.0 - params.a) - params.b * x.powf(params.c)
}

/// Outcome of inverting a curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reach {
    Labels(f64),
    Unreachable,
}

/// Label count at which the curve reaches `target`:
/// `x = ((1 - a - target) / b)^(1/c)`.
pub fn labels_for_target(params: &PowerLaw, target: f64) -> Result<Reach> {
    if params.c == 0.0 {
        return Err(Error::invalid("exponent c must be nonzero to invert the curve"));
    }
    if params.b == 0.0 {
        return Ok(Reach::Unreachable);
    }
    let ratio = (1.0 - params.a - target) / params.b;
    if !(ratio > 0.0) {
        return Ok(Reach::Unreachable);
    }
    let x = ratio.powf(1.0 / params.c);
    Ok(if x.is_finite() {
        Reach::Labels(x)
    } else {
        Reach::Unreachable
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    /// Sorted by strictly increasing `x`.
    pub points: Vec<(f64, f64)>,
    pub params: PowerLaw,
    pub residual_rms: f64,
}

impl LearningCurve {
    pub fn predict(&self, x: f64) -> f64 {
        predict(&self.params, x)
    }
}

fn sse(points: &[(f64, f64)], p: &PowerLaw) -> f64 {
    points.iter().map(|&(x, y)| (y - predict(p, x)).powi(2)).sum()
}

/// Least-squares `(1 - a, b)` for a fixed exponent.
fn linear_start(points: &[(f64, f64)], c: f64) -> Option<PowerLaw> {
    // y = alpha + beta * z with z = x^c, beta = -b
    let n = points.len() as f64;
    let (mut sz, mut szz, mut sy, mut szy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let z = x.powf(c);
        sz += z;
        szz += z * z;
        sy += y;
        szy += z * y;
    }
    let det = n * szz - sz * sz;
    if !(det.abs() > 1e-300) {
        return None;
    }
    let beta = (n * szy - sz * sy) / det;
    let alpha = (sy - beta * sz) / n;
    Some(PowerLaw::new(1.0 - alpha, -beta, c))
}

/// Solve a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col] == 0.0 || !m[pivot][col].is_finite() {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            let pivot_row = m[col];
            for (x, p) in m[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut out = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * out[k]).sum();
        out[row] = (rhs[row] - tail) / m[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Levenberg-Marquardt with Marquardt diagonal scaling from `start`.
fn refine(points: &[(f64, f64)], start: PowerLaw) -> PowerLaw {
    let mut theta = start.as_array();
    let mut cost = sse(points, &start);
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        let p = PowerLaw::from_array(theta);
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(x, y) in points {
            let z = x.powf(p.c);
            let grad = [-1.0, -z, -p.b * z * x.ln()];
            let r = y - predict(&p, x);
            for i in 0..3 {
                jtr[i] += grad[i] * r;
                for j in 0..3 {
                    jtj[i][j] += grad[i] * grad[j];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-30);
            }
            let Some(step) = solve3(damped, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
            let trial_cost = sse(points, &PowerLaw::from_array(trial));
            if trial_cost.is_finite() && trial_cost <= cost {
                theta = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step.iter().all(|s| s.abs() < STEP_TOLERANCE) {
                    return PowerLaw::from_array(theta);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    PowerLaw::from_array(theta)
}

/// Fit `(a, b, c)` by least squares.
///
/// Each exponent in `{0.1, 0.25, 0.5, 0.75, 1.0}` seeds a linear solve for
/// `(a, b)`, which is then refined jointly with `c` by damped Gauss-Newton.
/// The start with the lowest final residual wins.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<LearningCurve> {
    if points.len() < 4 {
        return Err(Error::invalid(format!(
            "power-law fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points
        .iter()
        .find(|(x, y)| !(x.is_finite() && y.is_finite()) || *x < 1.0)
    {
        return Err(Error::invalid(format!(
            "point ({x}, {y}) must be finite with x >= 1"
        )));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("x values must be distinct"));
    }

    let best = GRID_EXPONENTS
        .iter()
        .filter_map(|&c| linear_start(&sorted, c))
        .map(|start| {
            let fitted = refine(&sorted, start);
            (sse(&sorted, &fitted), fitted)
        })
        .filter(|(cost, _)| cost.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::invalid("no finite power-law fit"))?;

    Ok(LearningCurve {
        residual_rms: (best.0 / sorted.len() as f64).sqrt(),
        points: sorted,
        params: best.1,
    })
}

/// Mean of `metric` per `labels_used`, optionally restricted to one strategy.
pub fn curve_points(records: &[MetricRecord], metric: &str, strategy: Option<&str>) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.metric == metric && strategy.is_none_or(|s| r.strategy == s))
    {
        let e = acc.entry(r.labels_used).or_default();
        e.0 += r.mean;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(x, (sum, n))| (x as f64, sum / n as f64))
        .collect()
}

pub const FIT_COLUMNS: [&str; 6] = ["metric", "a", "b", "c", "residual_rms", "n_points"];

fn fit_row(metric: &str, curve: &LearningCurve) -> [String; 6] {
    [
        metric.to_owned(),
        curve.params.a.to_string(),
        curve.params.b.to_string(),
        curve.params.c.to_string(),
        curve.residual_rms.to_string(),
        curve.points.len().to_string(),
    ]
}

/// Write fit rows to a fresh file.
pub fn save_fits(rows: &[(String, LearningCurve)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FIT_COLUMNS)?;
    for (metric, curve) in rows {
        w.write_record(fit_row(metric, curve))?;
    }
    w.flush()?;
    Ok(())
}

/// Append one fit row, writing the header first if the file is new or empty.
pub fn append_fit(metric: &str, curve: &LearningCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(FIT_COLUMNS)?;
    }
    w.write_record(fit_row(metric, curve))?;
    w.flush()?;
    Ok(())
}
