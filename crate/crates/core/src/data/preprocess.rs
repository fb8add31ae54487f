use ndarray::Array2;

use super::{Dataset, RawTable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Replacement for absent cells.
    pub fill_value: f64,
    /// Min-max scale every feature column into `[0, 1]`.
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            fill_value: 0.0,
            normalize: true,
        }
    }
}

/// Fills absent cells and optionally min-max normalizes each column.
/// Constant columns normalize to all zeros.
pub fn preprocess(table: &RawTable, cfg: &PreprocessConfig) -> Result<Dataset> {
    if !cfg.fill_value.is_finite() {
        return Err(Error::Config(format!(
            "fill value must be finite, got {}",
            cfg.fill_value
        )));
    }
    if table.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = table.num_features();
    let mut x = Array2::from_shape_fn((table.rows.len(), d), |(i, j)| {
        table.rows[i].values[j].unwrap_or(cfg.fill_value)
    });
    if cfg.normalize {
        for mut col in x.columns_mut() {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if hi > lo {
                let range = hi - lo;
                if range.is_finite() {
                    col.mapv_inplace(|v| (v - lo) / range);
                } else {
                    let half = hi / 2.0 - lo / 2.0;
                    col.mapv_inplace(|v| (v / 2.0 - lo / 2.0) / half);
                }
            } else {
                col.fill(0.0);
            }
        }
    }
    let y = table.rows.iter().map(|r| r.label).collect();
    Dataset::new(x, y, table.feature_names.clone())
}
