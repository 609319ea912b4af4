//! Labeled datasets, CSV ingestion and min-max normalization.

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use std::collections::HashMap;
use std::path::Path;

/// Per-dimension min-max map into [0, 1] with clamping. A dimension whose
/// fitted range is empty maps every value to 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    ranges: Vec<(f64, f64)>,
}

impl Normalization {
    pub fn new(ranges: Vec<(f64, f64)>) -> Result<Self> {
        for (k, (lo, hi)) in ranges.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::invalid(
                    "normalization",
                    format!("dimension {k} has invalid range ({lo}, {hi})"),
                ));
            }
        }
        Ok(Self { ranges })
    }

    /// Identity on [0, 1]^n.
    pub fn unit(n: usize) -> Self {
        Self {
            ranges: vec![(0.0, 1.0); n],
        }
    }

    /// Min-max statistics of `rows` of `features`.
    pub fn fit(features: &Matrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("fit_indices", "must be nonempty"));
        }
        let ranges = (0..features.cols())
            .map(|k| {
                rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = features[(i, k)];
                    (lo.min(v), hi.max(v))
                })
            })
            .collect();
        Self::new(ranges)
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    #[inline]
    fn map(&self, k: usize, v: f64) -> f64 {
        let (lo, hi) = self.ranges[k];
        if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim(self.dim(), x.len(), "normalization input"));
        }
        Ok(x.iter().enumerate().map(|(k, &v)| self.map(k, v)).collect())
    }

    pub fn apply_matrix(&self, m: &Matrix) -> Result<Matrix> {
        let mut out = m.clone();
        for i in 0..m.rows() {
            let row = self.apply(m.row(i))?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// The map `x ↦ next.apply(self.apply(x))` as a single normalization.
    pub fn then(&self, next: &Normalization) -> Result<Normalization> {
        if self.dim() != next.dim() {
            return Err(Error::dim(self.dim(), next.dim(), "normalization composition"));
        }
        let ranges = self
            .ranges
            .iter()
            .zip(&next.ranges)
            .map(|(&(lo1, hi1), &(lo2, hi2))| {
                if hi1 > lo1 && hi2 > lo2 {
                    let r = hi1 - lo1;
                    (lo1 + lo2 * r, lo1 + hi2 * r)
                } else {
                    // constant in either stage: the composite is constant 0.5
                    (lo1, lo1)
                }
            })
            .collect();
        Normalization::new(ranges)
    }
}

/// Dense labeled dataset. Labels are zero-based class indices; `class_names`
/// keeps the original label text for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    class_names: Vec<String>,
    /// Map from raw inputs to the current feature values, once normalized.
    normalization: Option<Normalization>,
}

impl Dataset {
    /// Builds a raw (unnormalized) dataset; every class must have a sample.
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            num_classes: class_names.len(),
            features,
            labels,
            class_names,
            normalization: None,
        };
        ds.check_shape()?;
        ds.check_all_classes_present()?;
        Ok(ds)
    }

    fn check_shape(&self) -> Result<()> {
        if self.features.rows() != self.labels.len() {
            return Err(Error::dim(self.features.rows(), self.labels.len(), "label count"));
        }
        if self.num_classes < 2 {
            return Err(Error::Dataset(format!(
                "need at least 2 classes, found {}",
                self.num_classes
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Dataset(format!("label index {bad} out of range")));
        }
        Ok(())
    }

    pub fn check_all_classes_present(&self) -> Result<()> {
        let counts = self.class_counts();
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Dataset(format!(
                "class `{}` has no samples",
                self.class_names[missing]
            )));
        }
        Ok(())
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization.is_some()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows `indices` (in that order). Class presence is not re-checked, so a
    /// subset may be missing classes; training validates this itself.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.features.row(i)).collect();
        let features = if rows.is_empty() {
            Matrix::zeros(0, self.feature_dim())
        } else {
            Matrix::from_rows(&rows)?
        };
        Ok(Dataset {
            name: self.name.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            normalization: self.normalization.clone(),
        })
    }

    /// Wraps features that are already in [0, 1]^N (synthetic data).
    pub fn from_normalized(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
        normalization: Normalization,
    ) -> Result<Self> {
        if features.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Dataset("features must lie in [0, 1]".into()));
        }
        let mut ds = Self::new(name, features, labels, class_names)?;
        ds.normalization = Some(normalization);
        Ok(ds)
    }
}

/// Min-max normalization fitted on `fit_indices` and applied to every row;
/// values outside the fitted range are clamped to [0, 1].
pub fn normalize(dataset: &Dataset, fit_indices: &[usize]) -> Result<Dataset> {
    let stage = Normalization::fit(&dataset.features, fit_indices)?;
    let features = stage.apply_matrix(&dataset.features)?;
    let composite = match &dataset.normalization {
        Some(prev) => prev.then(&stage)?,
        None => stage,
    };
    Ok(Dataset {
        features,
        normalization: Some(composite),
        ..dataset.clone()
    })
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Last,
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn csv_reader(file: std::fs::File, has_header: bool) -> csv::Reader<std::fs::File> {
    csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(file)
}

fn parse_number(field: &str, line: usize, column: usize) -> Result<f64> {
    if field.is_empty() || field == "?" || field.eq_ignore_ascii_case("nan") {
        return Err(Error::Parse {
            line,
            message: format!("missing value in column {column}"),
        });
    }
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: cannot parse `{field}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column {column}: non-finite value"),
        });
    }
    Ok(v)
}

/// Reads an unlabeled numeric CSV into an `m × N` matrix.
pub fn load_features(path: &Path, has_header: bool) -> Result<Matrix> {
    let mut reader = csv_reader(open(path)?, has_header);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| parse_number(field, line, c))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!("{} contains no data rows", path.display())));
    }
    Matrix::from_rows(&rows)
}

/// Reads a dense CSV. Labels may be any text and are re-indexed by order of
/// first appearance; every other column must parse as a number.
pub fn load_csv(path: &Path, label_column: LabelColumn, has_header: bool) -> Result<Dataset> {
    let file = open(path)?;
    let mut reader = csv_reader(file, has_header);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let width = record.len();
        let label_at = match label_column {
            LabelColumn::Index(i) if i < width => i,
            LabelColumn::Index(i) => {
                return Err(Error::Parse {
                    line,
                    message: format!("label column {i} out of range ({width} columns)"),
                })
            }
            LabelColumn::Last => width - 1,
        };
        let mut row = Vec::with_capacity(width - 1);
        for (c, field) in record.iter().enumerate() {
            if c == label_at {
                continue;
            }
            let v = parse_number(field, line, c)?;
            row.push(v);
        }
        let label = &record[label_at];
        if label.is_empty() {
            return Err(Error::Parse {
                line,
                message: "missing label".into(),
            });
        }
        let id = *index.entry(label.to_string()).or_insert_with(|| {
            names.push(label.to_string());
            names.len() - 1
        });
        labels.push(id);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!("{} contains no data rows", path.display())));
    }
    let name = path
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, Matrix::from_rows(&rows)?, labels, names)
}
