//! Frames, pools, CSV interchange, subject-disjoint folds and balanced subsets.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::classifier::TargetMode;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

/// Opaque frame identifier.
///
/// Ordering is "natural": identifiers that parse as unsigned integers sort
/// numerically and before all other identifiers, which sort lexicographically.
/// Every "lowest frame id" tie-break in the crate uses this order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameId(pub String);

impl FrameId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Ord for FrameId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.0.parse::<u64>(), other.0.parse::<u64>()) {
            (Ok(a), Ok(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Ok(_), Err(_)) => Ordering::Less,
            (Err(_), Ok(_)) => Ordering::Greater,
            (Err(_), Err(_)) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for FrameId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FrameId {
    fn from(s: &str) -> Self {
        FrameId(s.to_owned())
    }
}

/// Identifier of the person a frame was recorded from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectId(pub String);

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SubjectId {
    fn from(s: &str) -> Self {
        SubjectId(s.to_owned())
    }
}

/// One pool item.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: FrameId,
    pub subject: SubjectId,
    pub features: Vec<f64>,
    /// Noisy class prior recorded at collection time.
    pub auto_label: Option<usize>,
    pub true_label: Option<usize>,
    /// Reference crowd annotation counts, one entry per class.
    pub crowd_counts: Option<Vec<u32>>,
    /// Categorical attributes used only for balanced subsets.
    pub attributes: BTreeMap<String, String>,
}

impl Frame {
    pub fn new(id: impl Into<String>, subject: impl Into<String>, features: Vec<f64>) -> Self {
        Frame {
            id: FrameId(id.into()),
            subject: SubjectId(subject.into()),
            features,
            auto_label: None,
            true_label: None,
            crowd_counts: None,
            attributes: BTreeMap::new(),
        }
    }
}

/// An indexed collection of frames with a labeled/unlabeled partition.
#[derive(Debug, Clone)]
pub struct Pool {
    frames: Vec<Frame>,
    class_count: usize,
    feature_dim: usize,
    labeled: BTreeSet<FrameId>,
    class_names: Option<Vec<String>>,
    index: HashMap<FrameId, usize>,
}

impl PartialEq for Pool {
    fn eq(&self, other: &Self) -> bool {
        self.frames == other.frames
            && self.class_count == other.class_count
            && self.feature_dim == other.feature_dim
            && self.labeled == other.labeled
            && self.class_names == other.class_names
    }
}

impl Pool {
    /// Build a pool, checking every frame against `class_count` and `feature_dim`.
    pub fn new(class_count: usize, feature_dim: usize, frames: Vec<Frame>) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::invalid(format!(
                "class_count must be at least 2, got {class_count}"
            )));
        }
        let mut index = HashMap::with_capacity(frames.len());
        for (i, f) in frames.iter().enumerate() {
            if f.features.len() != feature_dim {
                return Err(Error::Frame(
                    f.id.0.clone(),
                    format!(
                        "feature dimension {} does not match pool dimension {feature_dim}",
                        f.features.len()
                    ),
                ));
            }
            for (name, label) in [("auto_label", f.auto_label), ("true_label", f.true_label)] {
                if let Some(l) = label {
                    if l >= class_count {
                        return Err(Error::Frame(
                            f.id.0.clone(),
                            format!("{name} {l} is not below class count {class_count}"),
                        ));
                    }
                }
            }
            if let Some(counts) = &f.crowd_counts {
                if counts.len() != class_count {
                    return Err(Error::Frame(
                        f.id.0.clone(),
                        format!("{} crowd counts for {class_count} classes", counts.len()),
                    ));
                }
                if counts.iter().map(|&c| u64::from(c)).sum::<u64>() == 0 {
                    return Err(Error::Frame(f.id.0.clone(), "crowd counts sum to zero".into()));
                }
            }
            if index.insert(f.id.clone(), i).is_some() {
                return Err(Error::Frame(f.id.0.clone(), "duplicate frame id".into()));
            }
        }
        Ok(Pool {
            frames,
            class_count,
            feature_dim,
            labeled: BTreeSet::new(),
            class_names: None,
            index,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return Err(Error::Length {
                expected: self.class_count,
                actual: names.len(),
            });
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn get(&self, id: &FrameId) -> Option<&Frame> {
        self.index.get(id).map(|&i| &self.frames[i])
    }

    pub fn position(&self, id: &FrameId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn labeled(&self) -> &BTreeSet<FrameId> {
        &self.labeled
    }

    pub fn is_labeled(&self, id: &FrameId) -> bool {
        self.labeled.contains(id)
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| !self.labeled.contains(&f.id))
    }

    pub fn unlabeled_count(&self) -> usize {
        self.frames.len() - self.labeled.len()
    }

    pub fn labeled_frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| self.labeled.contains(&f.id))
    }

    /// Move frames into the labeled partition. Unknown ids are an error.
    pub fn mark_labeled<'a>(&mut self, ids: impl IntoIterator<Item = &'a FrameId>) -> Result<()> {
        for id in ids {
            if !self.index.contains_key(id) {
                return Err(Error::Frame(id.0.clone(), "not in pool".into()));
            }
            self.labeled.insert(id.clone());
        }
        Ok(())
    }

    pub fn subjects(&self) -> BTreeSet<SubjectId> {
        self.frames.iter().map(|f| f.subject.clone()).collect()
    }

    /// True when every frame carries reference crowd counts.
    pub fn has_crowd_counts(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.crowd_counts.is_some())
    }

    /// Keep frames matching `keep`, preserving order and labeled status.
    pub fn filter(&self, mut keep: impl FnMut(&Frame) -> bool) -> Pool {
        let frames: Vec<Frame> = self.frames.iter().filter(|f| keep(f)).cloned().collect();
        let index = frames
            .iter()
            .enumerate()
            .map(|(i, f)| (f.id.clone(), i))
            .collect::<HashMap<_, _>>();
        let labeled = self
            .labeled
            .iter()
            .filter(|id| index.contains_key(*id))
            .cloned()
            .collect();
        Pool {
            frames,
            class_count: self.class_count,
            feature_dim: self.feature_dim,
            labeled,
            class_names: self.class_names.clone(),
            index,
        }
    }

    /// Append frames (already validated against this pool's shape) as labeled.
    pub fn extend_labeled(&mut self, extra: Pool) -> Result<()> {
        if extra.class_count != self.class_count || extra.feature_dim != self.feature_dim {
            return Err(Error::invalid(format!(
                "base pool shape (C={}, D={}) differs from pool shape (C={}, D={})",
                extra.class_count, extra.feature_dim, self.class_count, self.feature_dim
            )));
        }
        for f in extra.frames {
            if self.index.contains_key(&f.id) {
                return Err(Error::Frame(f.id.0, "duplicate frame id".into()));
            }
            self.index.insert(f.id.clone(), self.frames.len());
            self.labeled.insert(f.id.clone());
            self.frames.push(f);
        }
        Ok(())
    }
}

/// Column mapping for pool CSVs that the header cannot carry.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolSchema {
    pub class_count: usize,
    pub class_names: Option<Vec<String>>,
}

impl Default for PoolSchema {
    fn default() -> Self {
        PoolSchema {
            class_count: 7,
            class_names: None,
        }
    }
}

impl PoolSchema {
    pub fn with_classes(class_count: usize) -> Self {
        PoolSchema {
            class_count,
            class_names: None,
        }
    }
}

const ID_COLUMNS: [&str; 4] = ["frame_id", "subject_id", "auto_label", "true_label"];

#[derive(Debug)]
struct PoolLayout {
    id: [usize; 4],
    features: Vec<usize>,
    counts: Vec<usize>,
    attrs: Vec<(String, usize)>,
}

fn indexed_columns(
    header: &csv::StringRecord,
    prefix: &str,
    path: &Path,
) -> Result<Vec<usize>> {
    let mut found: BTreeMap<usize, usize> = BTreeMap::new();
    for (col, name) in header.iter().enumerate() {
        if let Some(rest) = name.strip_prefix(prefix) {
            let k: usize = rest.parse().map_err(|_| Error::BadHeader {
                path: path.to_path_buf(),
                reason: format!("column `{name}` has a non-numeric index"),
            })?;
            if found.insert(k, col).is_some() {
                return Err(Error::BadHeader {
                    path: path.to_path_buf(),
                    reason: format!("column `{name}` appears twice"),
                });
            }
        }
    }
    if let Some((&last, _)) = found.iter().next_back() {
        if last + 1 != found.len() {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                reason: format!("`{prefix}` columns are not contiguous from 0"),
            });
        }
    }
    Ok(found.into_values().collect())
}

fn pool_layout(header: &csv::StringRecord, path: &Path) -> Result<PoolLayout> {
    let mut id = [0usize; 4];
    for (slot, name) in id.iter_mut().zip(ID_COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::BadHeader {
                path: path.to_path_buf(),
                reason: format!("missing column `{name}`"),
            })?;
    }
    let features = indexed_columns(header, "f_", path)?;
    let counts = indexed_columns(header, "count_", path)?;
    let mut attrs = Vec::new();
    for (col, name) in header.iter().enumerate() {
        if let Some(attr) = name.strip_prefix("attr:") {
            attrs.push((attr.to_owned(), col));
        } else if !ID_COLUMNS.contains(&name)
            && !name.starts_with("f_")
            && !name.starts_with("count_")
        {
            return Err(Error::BadHeader {
                path: path.to_path_buf(),
                reason: format!("unknown column `{name}`"),
            });
        }
    }
    Ok(PoolLayout {
        id,
        features,
        counts,
        attrs,
    })
}

/// Read a pool CSV.
///
/// Header: `frame_id,subject_id,auto_label,true_label,f_0..f_{D-1}`, then
/// optional `count_0..count_{C-1}` and `attr:<name>` columns. Missing labels,
/// counts and attributes are empty cells.
pub fn load_pool(path: impl AsRef<Path>, schema: &PoolSchema) -> Result<Pool> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let layout = pool_layout(&header, path)?;
    if !layout.counts.is_empty() && layout.counts.len() != schema.class_count {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            reason: format!(
                "{} count columns for {} classes",
                layout.counts.len(),
                schema.class_count
            ),
        });
    }
    let dim = layout.features.len();

    let mut frames = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let bad = |col: usize, reason: String| Error::Malformed {
            path: path.to_path_buf(),
            row,
            column: header.get(col).unwrap_or("?").to_owned(),
            reason,
        };
        if record.len() != header.len() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                row,
                column: "*".into(),
                reason: format!("{} cells for {} columns", record.len(), header.len()),
            });
        }
        let cell = |col: usize| record.get(col).unwrap_or("");
        let label = |col: usize| -> Result<Option<usize>> {
            let s = cell(col).trim();
            if s.is_empty() {
                return Ok(None);
            }
            let v: usize = s
                .parse()
                .map_err(|_| bad(col, format!("`{s}` is not a class index")))?;
            if v >= schema.class_count {
                return Err(bad(col, format!("class {v} >= class count {}", schema.class_count)));
            }
            Ok(Some(v))
        };

        let frame_id = cell(layout.id[0]);
        if frame_id.is_empty() {
            return Err(bad(layout.id[0], "empty frame id".into()));
        }
        let mut features = Vec::with_capacity(dim);
        for &col in &layout.features {
            let s = cell(col).trim();
            let v: f64 = s
                .parse()
                .map_err(|_| bad(col, format!("`{s}` is not a number")))?;
            features.push(v);
        }
        let crowd_counts = if layout.counts.is_empty() {
            None
        } else {
            let present = layout.counts.iter().filter(|&&c| !cell(c).trim().is_empty()).count();
            match present {
                0 => None,
                n if n == layout.counts.len() => {
                    let mut counts = Vec::with_capacity(n);
                    for &col in &layout.counts {
                        let s = cell(col).trim();
                        counts.push(
                            s.parse::<u32>()
                                .map_err(|_| bad(col, format!("`{s}` is not a count")))?,
                        );
                    }
                    Some(counts)
                }
                _ => {
                    let col = *layout
                        .counts
                        .iter()
                        .find(|&&c| cell(c).trim().is_empty())
                        .expect("some count cell is empty");
                    return Err(bad(col, "partially filled crowd counts".into()));
                }
            }
        };
        let attributes = layout
            .attrs
            .iter()
            .filter(|(_, col)| !cell(*col).is_empty())
            .map(|(name, col)| (name.clone(), cell(*col).to_owned()))
            .collect();
        frames.push(Frame {
            id: FrameId(frame_id.to_owned()),
            subject: SubjectId(cell(layout.id[1]).to_owned()),
            features,
            auto_label: label(layout.id[2])?,
            true_label: label(layout.id[3])?,
            crowd_counts,
            attributes,
        });
    }
    let pool = Pool::new(schema.class_count, dim, frames)?;
    match &schema.class_names {
        Some(names) => pool.with_class_names(names.clone()),
        None => Ok(pool),
    }
}

/// Write a pool CSV in the layout [`load_pool`] reads.
///
/// The labeled partition is run state and is not serialized.
pub fn save_pool(pool: &Pool, path: impl AsRef<Path>) -> Result<()> {
    let with_counts = pool.frames.iter().any(|f| f.crowd_counts.is_some());
    let attr_names: BTreeSet<&str> = pool
        .frames
        .iter()
        .flat_map(|f| f.attributes.keys().map(String::as_str))
        .collect();

    let mut header: Vec<String> = ID_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..pool.feature_dim).map(|k| format!("f_{k}")));
    if with_counts {
        header.extend((0..pool.class_count).map(|k| format!("count_{k}")));
    }
    header.extend(attr_names.iter().map(|a| format!("attr:{a}")));

    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for f in &pool.frames {
        let mut row = vec![
            f.id.0.clone(),
            f.subject.0.clone(),
            opt(f.auto_label),
            opt(f.true_label),
        ];
        row.extend(f.features.iter().map(|x| x.to_string()));
        if with_counts {
            match &f.crowd_counts {
                Some(c) => row.extend(c.iter().map(|x| x.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), pool.class_count)),
            }
        }
        for a in &attr_names {
            row.push(f.attributes.get(*a).cloned().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One subject-level train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldSpec {
    pub fold_index: usize,
    pub train_subjects: BTreeSet<SubjectId>,
    pub test_subjects: BTreeSet<SubjectId>,
}

impl FoldSpec {
    /// Split `pool` into (train, test) subpools by subject.
    pub fn partition(&self, pool: &Pool) -> (Pool, Pool) {
        (
            pool.filter(|f| self.train_subjects.contains(&f.subject)),
            pool.filter(|f| self.test_subjects.contains(&f.subject)),
        )
    }
}

/// Subject-disjoint folds. Each fold shuffles the sorted subject list with a
/// seed derived from `seed` and the fold index, then puts the first
/// `round(train_fraction * S)` subjects (clamped to `1..S-1`) in train.
pub fn split_folds(
    pool: &Pool,
    n_folds: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<FoldSpec>> {
    if n_folds == 0 {
        return Err(Error::invalid("n_folds must be at least 1"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let subjects: Vec<SubjectId> = pool.subjects().into_iter().collect();
    if subjects.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 subjects to split, found {}",
            subjects.len()
        )));
    }
    let n = subjects.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok((0..n_folds)
        .map(|fold_index| {
            let mut order = subjects.clone();
            order.shuffle(&mut seeded_rng(derive_seed(seed, &format!("fold={fold_index}"))));
            let test = order.split_off(n_train);
            FoldSpec {
                fold_index,
                train_subjects: order.into_iter().collect(),
                test_subjects: test.into_iter().collect(),
            }
        })
        .collect())
}

/// Result of [`balanced_subset`].
#[derive(Debug, Clone)]
pub struct BalancedSubset {
    pub pool: Pool,
    /// Cells (attribute values in the requested order, then class) that had
    /// fewer than `per_cell` frames, with the number missing.
    pub shortfall: Vec<(Vec<String>, usize)>,
}

impl BalancedSubset {
    pub fn total_shortfall(&self) -> usize {
        self.shortfall.iter().map(|(_, n)| n).sum()
    }
}

/// Take `per_cell` frames from every (attribute values, true class) cell.
///
/// Oversized cells are subsampled uniformly at random; undersized cells are
/// kept whole and reported. Output keeps the source frame order.
pub fn balanced_subset(
    pool: &Pool,
    attributes: &[String],
    per_cell: usize,
    seed: u64,
) -> Result<BalancedSubset> {
    let mut cells: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
    for (i, f) in pool.frames().iter().enumerate() {
        let mut key = Vec::with_capacity(attributes.len() + 1);
        for a in attributes {
            let v = f
                .attributes
                .get(a)
                .ok_or_else(|| Error::Frame(f.id.0.clone(), format!("missing attribute `{a}`")))?;
            key.push(v.clone());
        }
        let class = f
            .true_label
            .ok_or_else(|| Error::Frame(f.id.0.clone(), "missing true_label".into()))?;
        key.push(class.to_string());
        cells.entry(key).or_default().push(i);
    }

    let mut rng = seeded_rng(seed);
    let mut keep = vec![false; pool.len()];
    let mut shortfall = Vec::new();
    for (key, members) in &cells {
        if members.len() <= per_cell {
            members.iter().for_each(|&i| keep[i] = true);
            if members.len() < per_cell {
                shortfall.push((key.clone(), per_cell - members.len()));
            }
        } else {
            for j in index::sample(&mut rng, members.len(), per_cell) {
                keep[members[j]] = true;
            }
        }
    }
    let mut it = keep.into_iter();
    let subset = pool.filter(|_| it.next().unwrap_or(false));
    Ok(BalancedSubset {
        pool: subset,
        shortfall,
    })
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub iteration: usize,
    pub labels_used: usize,
    pub strategy: String,
    pub fold: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub train_mode: Option<TargetMode>,
    pub test_mode: Option<TargetMode>,
    pub seed: Option<u64>,
}

impl MetricRecord {
    fn sort_key(&self) -> impl Ord + '_ {
        (
            self.iteration,
            self.strategy.as_str(),
            self.fold,
            self.metric.as_str(),
            self.train_mode,
            self.test_mode,
            self.seed,
        )
    }
}

const METRIC_COLUMNS: [&str; 7] = [
    "iteration",
    "labels_used",
    "strategy",
    "fold",
    "metric",
    "mean",
    "std",
];

/// Write metric records sorted by (iteration, strategy, fold).
///
/// `train_mode,test_mode` columns are appended when any record carries modes,
/// and a `seed` column when any record carries a seed.
pub fn save_metrics(rows: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let with_modes = rows
        .iter()
        .any(|r| r.train_mode.is_some() || r.test_mode.is_some());
    let with_seed = rows.iter().any(|r| r.seed.is_some());
    let mut sorted: Vec<&MetricRecord> = rows.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let mut header: Vec<&str> = METRIC_COLUMNS.to_vec();
    if with_modes {
        header.extend(["train_mode", "test_mode"]);
    }
    if with_seed {
        header.push("seed");
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    let mode = |m: Option<TargetMode>| m.map(|m| m.as_str().to_owned()).unwrap_or_default();
    for r in sorted {
        let mut row = vec![
            r.iteration.to_string(),
            r.labels_used.to_string(),
            r.strategy.clone(),
            r.fold.to_string(),
            r.metric.clone(),
            r.mean.to_string(),
            r.std.to_string(),
        ];
        if with_modes {
            row.push(mode(r.train_mode));
            row.push(mode(r.test_mode));
        }
        if with_seed {
            row.push(r.seed.map(|s| s.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a metrics CSV written by [`save_metrics`].
pub fn load_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut required = [0usize; 7];
    for (slot, name) in required.iter_mut().zip(METRIC_COLUMNS) {
        *slot = col(name).ok_or_else(|| Error::BadHeader {
            path: path.to_path_buf(),
            reason: format!("missing column `{name}`"),
        })?;
    }
    let train_col = col("train_mode");
    let test_col = col("test_mode");
    let seed_col = col("seed");

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let cell = |c: usize| record.get(c).unwrap_or("");
        let bad = |c: usize, what: &str| Error::Malformed {
            path: path.to_path_buf(),
            row,
            column: header.get(c).unwrap_or("?").to_owned(),
            reason: format!("`{}` is not {what}", cell(c)),
        };
        let int = |c: usize| cell(c).parse::<usize>().map_err(|_| bad(c, "an integer"));
        let real = |c: usize| cell(c).parse::<f64>().map_err(|_| bad(c, "a number"));
        let mode = |c: Option<usize>| -> Result<Option<TargetMode>> {
            match c.map(cell).filter(|s| !s.is_empty()) {
                None => Ok(None),
                Some(s) => s
                    .parse()
                    .map(Some)
                    .map_err(|_| bad(c.unwrap_or(0), "a target mode")),
            }
        };
        let seed = match seed_col.map(cell).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(
                s.parse::<u64>()
                    .map_err(|_| bad(seed_col.unwrap_or(0), "a seed"))?,
            ),
        };
        out.push(MetricRecord {
            iteration: int(required[0])?,
            labels_used: int(required[1])?,
            strategy: cell(required[2]).to_owned(),
            fold: int(required[3])?,
            metric: cell(required[4]).to_owned(),
            mean: real(required[5])?,
            std: real(required[6])?,
            train_mode: mode(train_col)?,
            test_mode: mode(test_col)?,
            seed,
        });
    }
    Ok(out)
}
