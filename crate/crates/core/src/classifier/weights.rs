//! Flat CSV weight dumps: one line per tensor, `name,rows,cols,` followed by
//! the row-major values.

use std::path::Path;

use super::{AdamConfig, ClassifierModel};
use crate::error::{Error, Result};

fn tensors(m: &ClassifierModel) -> Vec<(&'static str, usize, usize)> {
    let (c, d, h) = (m.class_count, m.feature_dim, m.hidden_units);
    if h == 0 {
        vec![("w", c, d), ("b", c, 1)]
    } else {
        vec![("w1", h, d), ("b1", h, 1), ("w2", c, h), ("b2", c, 1)]
    }
}

pub fn save_weights(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    w.write_record(["tensor", "rows", "cols", "values"])?;
    let mut offset = 0;
    for (name, rows, cols) in tensors(model) {
        let mut rec = vec![name.to_owned(), rows.to_string(), cols.to_string()];
        rec.extend(
            model.params[offset..offset + rows * cols]
                .iter()
                .map(|v| v.to_string()),
        );
        offset += rows * cols;
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuild a model from [`save_weights`] output. Optimizer state starts fresh
/// with `adam`.
pub fn load_weights(path: impl AsRef<Path>, adam: AdamConfig) -> Result<ClassifierModel> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut shapes = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |column: &str, reason: String| Error::Malformed {
            path: path.to_path_buf(),
            row,
            column: column.to_owned(),
            reason,
        };
        let name = rec.get(0).unwrap_or("").to_owned();
        let dim = |i: usize, col: &str| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(col, "missing or non-integer".into()))
        };
        let (rows, cols) = (dim(1, "rows")?, dim(2, "cols")?);
        if rec.len() != 3 + rows * cols {
            return Err(bad("values", format!("expected {} values", rows * cols)));
        }
        for (k, s) in rec.iter().skip(3).enumerate() {
            values.push(
                s.parse::<f64>()
                    .map_err(|_| bad("values", format!("value {k} `{s}` is not a number")))?,
            );
        }
        shapes.push((name, rows, cols));
    }
    let names: Vec<&str> = shapes.iter().map(|(n, _, _)| n.as_str()).collect();
    let (c, d, h) = match names.as_slice() {
        ["w", "b"] => (shapes[0].1, shapes[0].2, 0),
        ["w1", "b1", "w2", "b2"] => (shapes[2].1, shapes[0].2, shapes[0].1),
        _ => {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                reason: format!("unexpected tensor list {names:?}"),
            })
        }
    };
    let mut model = ClassifierModel::new(c, d, h, adam, 0)?;
    if tensors(&model)
        .iter()
        .zip(&shapes)
        .any(|((_, r, k), (_, r2, k2))| r != r2 || k != k2)
    {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            reason: "tensor shapes are inconsistent".into(),
        });
    }
    model.set_params(values)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for hidden in [0, 3] {
            let mut m = ClassifierModel::new(4, 5, hidden, AdamConfig::default(), 7).unwrap();
            let p: Vec<f64> = (0..m.params().len()).map(|i| (i as f64).sin() / 3.0).collect();
            m.set_params(p).unwrap();
            let path = dir.path().join(format!("w{hidden}.csv"));
            save_weights(&m, &path).unwrap();
            let back = load_weights(&path, AdamConfig::default()).unwrap();
            assert_eq!(back.params(), m.params());
            assert_eq!(back.hidden_units(), hidden);
        }
    }
}
