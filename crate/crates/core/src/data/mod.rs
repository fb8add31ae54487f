//! Tabular datasets: CSV ingestion, preprocessing, splitting, and synthetic
//! data generation.

mod io;
mod preprocess;
mod split;
mod synthetic;

use ndarray::{concatenate, Array2, Axis};

use crate::{Error, Result};

pub use io::load_csv;
pub use preprocess::{preprocess, PreprocessConfig};
pub use split::{partition_clients, split, split_sizes, SplitBundle};
pub use synthetic::{gen_synthetic, SyntheticSpec};

/// One record of a [`RawTable`]: feature cells (absent when empty or
/// unparsable) and a validated binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub values: Vec<Option<f64>>,
    pub label: u8,
}

/// A table as read from disk, before missing values are filled.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub label_name: String,
    pub rows: Vec<RawRow>,
}

impl RawTable {
    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn num_missing(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.values.iter().filter(|v| v.is_none()).count())
            .sum()
    }
}

/// Feature matrix with binary labels: 0 is benign, 1 is malicious.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<u8>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.ncols() != feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                found: feature_names.len(),
            });
        }
        if let Some(&bad) = y.iter().find(|&&l| l > 1) {
            return Err(Error::LabelValue(bad));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("feature matrix contains non-finite values".into()));
        }
        Ok(Dataset {
            x: x.as_standard_layout().into_owned(),
            y,
            feature_names,
        })
    }

    /// Builds a dataset with generated names `f0, f1, ...`.
    pub fn from_parts(x: Array2<f64>, y: Vec<u8>) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("f{j}")).collect();
        Self::new(x, y, names)
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.x.ncols()
    }

    /// Row counts of label 0 and label 1.
    pub fn label_counts(&self) -> [usize; 2] {
        let ones = self.y.iter().filter(|&&l| l == 1).count();
        [self.y.len() - ones, ones]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Stacks datasets with identical feature names, in order.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::EmptyDataset)?;
        for p in parts {
            if p.feature_names != first.feature_names {
                return Err(Error::DimensionMismatch {
                    expected: first.num_features(),
                    found: p.num_features(),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.x.view()).collect();
        let x = concatenate(Axis(0), &views).expect("column counts checked");
        Ok(Dataset {
            x,
            y: parts.iter().flat_map(|p| p.y.iter().copied()).collect(),
            feature_names: first.feature_names.clone(),
        })
    }

    pub(crate) fn into_parts(self) -> (Array2<f64>, Vec<u8>, Vec<String>) {
        (self.x, self.y, self.feature_names)
    }

    /// Same rows with every label complemented.
    pub fn with_flipped_labels(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.y.iter().map(|&l| 1 - l).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Converts back to a [`RawTable`] with every cell present.
    pub fn to_raw(&self) -> RawTable {
        RawTable {
            feature_names: self.feature_names.clone(),
            label_name: "label".into(),
            rows: self
                .x
                .rows()
                .into_iter()
                .zip(&self.y)
                .map(|(r, &label)| RawRow {
                    values: r.iter().map(|&v| Some(v)).collect(),
                    label,
                })
                .collect(),
        }
    }

    /// Writes the dataset as CSV with a trailing `label` column. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header).map_err(csv_err)?;
        let mut cells = Vec::with_capacity(self.num_features() + 1);
        for (row, &label) in self.x.rows().into_iter().zip(&self.y) {
            cells.clear();
            cells.extend(row.iter().map(|v| v.to_string()));
            cells.push(label.to_string());
            w.write_record(&cells).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
