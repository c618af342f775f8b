//! CSV ingestion, standardization, seeded splits and synthetic data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FeatureVector, Label, LabeledDataset, LabeledSample, UnlabeledDataset};
use crate::rng::SplitMix64;

/// Numeric feature matrix with binary labels, after encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    /// Feature column names; one-hot columns are named `column=category`.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// True for the positive class.
    pub labels: Vec<bool>,
    pub label_column: String,
}

impl RawTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<bool>, label_column: String) -> Result<Self> {
        Error::check_dim(rows.len(), labels.len())?;
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(Error::RaggedRow { line: i + 2, expected: columns.len(), found: r.len() });
            }
        }
        Ok(Self { columns, rows, labels, label_column })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.labels.iter().filter(|y| **y).count() as f64 / self.len().max(1) as f64
    }

    fn sample(&self, i: usize) -> Result<LabeledSample> {
        Ok(LabeledSample::new(FeatureVector::with_bias(self.rows[i].clone())?, Label::from_bool(self.labels[i])))
    }

    /// All rows as labeled samples with the bias coordinate appended.
    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        LabeledDataset::new((0..self.len()).map(|i| self.sample(i)).collect::<Result<_>>()?)
    }

    /// Label probabilities ordered (negative, positive).
    pub fn label_probabilities(&self) -> Vec<f64> {
        let p = self.positive_fraction();
        vec![1.0 - p, p]
    }
}

/// Reads a headed CSV. Columns whose every cell parses as a number are
/// numeric; the rest are one-hot encoded with categories in alphabetical
/// order. A label cell equal to `positive_class_token` (after trimming) is
/// the positive class; the label column may hold at most two values.
pub fn load_csv(path: &Path, label_column: &str, positive_class_token: &str) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
    let mut cells: Vec<Vec<String>> = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::RaggedRow { line: r + 2, expected: header.len(), found: rec.len() });
        }
        cells.push(rec.iter().map(|c| c.trim().to_string()).collect());
    }
    if cells.is_empty() {
        return Err(Error::Empty("csv rows"));
    }

    let label_values: BTreeSet<&str> = cells.iter().map(|r| r[label_idx].as_str()).collect();
    if label_values.len() > 2 {
        return Err(Error::NonBinaryLabel(label_values.len()));
    }
    if label_values.len() == 2 && !label_values.contains(positive_class_token) {
        return Err(Error::InvalidConfig(format!(
            "positive class '{positive_class_token}' not among label values {label_values:?}"
        )));
    }
    let labels = cells.iter().map(|r| r[label_idx] == positive_class_token).collect();

    let mut columns = Vec::new();
    let mut encoders: Vec<Box<dyn Fn(&str) -> Vec<f64>>> = Vec::new();
    let mut sources = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if c == label_idx {
            continue;
        }
        let numeric = cells.iter().all(|r| r[c].parse::<f64>().map_or(false, f64::is_finite));
        if numeric {
            columns.push(name.clone());
            encoders.push(Box::new(|s: &str| vec![s.parse::<f64>().unwrap_or(f64::NAN)]));
        } else {
            let cats: BTreeSet<String> = cells.iter().map(|r| r[c].clone()).collect();
            let index: BTreeMap<String, usize> = cats.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
            let width = cats.len();
            for cat in &cats {
                columns.push(format!("{name}={cat}"));
            }
            encoders.push(Box::new(move |s: &str| {
                let mut v = vec![0.0; width];
                v[index[s]] = 1.0;
                v
            }));
        }
        sources.push(c);
    }
    let rows = cells
        .iter()
        .map(|r| sources.iter().zip(&encoders).flat_map(|(&c, enc)| enc(&r[c])).collect())
        .collect();
    RawTable::new(columns, rows, labels, label_column.to_string())
}

/// Fitted per-feature centering and scaling plus the global rescale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, with 1 substituted for constant features.
    pub std: Vec<f64>,
    /// Maximum absolute z-score over the fitted table (1 if all zero).
    pub scale: f64,
}

impl Standardizer {
    pub fn fit(table: &RawTable) -> Result<Self> {
        let n = table.len();
        if n == 0 {
            return Err(Error::Empty("table"));
        }
        if n < 2 {
            return Err(Error::InvalidArgument("standardization needs at least 2 rows".into()));
        }
        let d = table.n_features();
        let mut mean = vec![0.0; d];
        for r in &table.rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut std = vec![0.0; d];
        for r in &table.rows {
            for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in std.iter_mut() {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let mut scale: f64 = 0.0;
        for r in &table.rows {
            for ((v, m), s) in r.iter().zip(&mean).zip(&std) {
                scale = scale.max(((v - m) / s).abs());
            }
        }
        if scale == 0.0 {
            scale = 1.0;
        }
        Ok(Self { mean, std, scale })
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.mean.len(), row.len())?;
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s / self.scale)
            .collect())
    }

    pub fn transform(&self, table: &RawTable) -> Result<RawTable> {
        let rows = table.rows.iter().map(|r| self.transform_row(r)).collect::<Result<_>>()?;
        RawTable::new(table.columns.clone(), rows, table.labels.clone(), table.label_column.clone())
    }
}

/// Z-scores every feature, then divides the whole matrix by its maximum
/// absolute entry. Returns a new table and the fitted transform.
pub fn standardize(table: &RawTable) -> Result<(RawTable, Standardizer)> {
    let s = Standardizer::fit(table)?;
    Ok((s.transform(table)?, s))
}

/// Where the unlabeled set comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnlabeledSource {
    /// Rows not drawn into the labeled set.
    Remainder,
    /// Every row of the table.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub labeled: LabeledDataset,
    /// Empty remainder is reported as `None`.
    pub unlabeled: Option<UnlabeledDataset>,
    /// Every row, the stand-in for the true distribution.
    pub full: LabeledDataset,
    pub labeled_indices: Vec<usize>,
}

/// Seeded uniform draw of `n_labeled` rows without replacement.
pub fn sample_split(table: &RawTable, n_labeled: usize, seed: u64, source: UnlabeledSource) -> Result<Split> {
    if n_labeled == 0 {
        return Err(Error::InvalidArgument("n_labeled must be ≥ 1".into()));
    }
    if n_labeled > table.len() {
        return Err(Error::InvalidArgument(format!("n_labeled = {n_labeled} exceeds {} rows", table.len())));
    }
    let full = table.to_dataset()?;
    let mut rng = SplitMix64::new(seed);
    let labeled_indices = rng.sample_without_replacement(table.len(), n_labeled);
    let labeled = LabeledDataset::new(labeled_indices.iter().map(|&i| full.samples()[i].clone()).collect())?;
    let points: Vec<FeatureVector> = match source {
        UnlabeledSource::Full => full.iter().map(|z| z.x.clone()).collect(),
        UnlabeledSource::Remainder => {
            let mut taken = vec![false; table.len()];
            for &i in &labeled_indices {
                taken[i] = true;
            }
            full.iter().zip(&taken).filter(|(_, t)| !**t).map(|(z, _)| z.x.clone()).collect()
        }
    };
    let unlabeled = if points.is_empty() { None } else { Some(UnlabeledDataset::new(points)?) };
    Ok(Split { labeled, unlabeled, full, labeled_indices })
}

/// Two Gaussian classes: the positive class is centered at
/// `+separation/2` along the first axis and the negative class at
/// `−separation/2`; every coordinate has unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub separation: f64,
    pub positive_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n: 500, dim: 2, separation: 3.0, positive_fraction: 0.5, seed: 0 }
    }
}

/// Row `i` draws its label (`next_f64 < positive_fraction`) and then its
/// `dim` coordinates from one stream, in that order.
pub fn two_gaussians(spec: &SyntheticSpec) -> Result<RawTable> {
    if spec.n == 0 || spec.dim == 0 {
        return Err(Error::InvalidArgument("synthetic data needs n ≥ 1 and dim ≥ 1".into()));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let mut rows = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let y = rng.next_f64() < spec.positive_fraction;
        let shift = if y { 0.5 * spec.separation } else { -0.5 * spec.separation };
        let row: Vec<f64> = (0..spec.dim).map(|k| rng.normal() + if k == 0 { shift } else { 0.0 }).collect();
        rows.push(row);
        labels.push(y);
    }
    let columns = (1..=spec.dim).map(|k| format!("x{k}")).collect();
    RawTable::new(columns, rows, labels, "label".into())
}

/// Writes a table as CSV with a `label` column of 0/1.
pub fn write_table_csv(path: &Path, table: &RawTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = table.columns.clone();
    header.push(table.label_column.clone());
    w.write_record(&header)?;
    for (r, y) in table.rows.iter().zip(&table.labels) {
        let mut rec: Vec<String> = r.iter().map(|v| format!("{v:.17e}")).collect();
        rec.push(if *y { "1" } else { "0" }.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
