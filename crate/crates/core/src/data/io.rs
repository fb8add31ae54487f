use std::path::Path;

use super::{RawRow, RawTable};
use crate::{Error, Result};

/// Reads a headered CSV file. The label column defaults to the last column;
/// every other column is a feature. Empty, unparsable, or non-finite feature
/// cells are recorded as absent. Label cells must be `0` or `1`.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<usize>) -> Result<RawTable> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        })?;

    let header = reader.headers().map_err(csv_err)?.clone();
    let columns = header.len();
    let label_idx = match label_column {
        Some(i) if i < columns => i,
        Some(i) => return Err(Error::LabelColumn { index: i, columns }),
        None if columns > 0 => columns - 1,
        None => return Err(Error::LabelColumn { index: 0, columns }),
    };
    let feature_names = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = i + 1;
        if record.len() != columns {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row,
                expected: columns,
                found: record.len(),
            });
        }
        let label = match &record[label_idx] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::InvalidLabel {
                    path: path.to_path_buf(),
                    row,
                    value: other.to_string(),
                })
            }
        };
        let values = record
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label_idx)
            .map(|(_, cell)| cell.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        rows.push(RawRow { values, label });
    }

    Ok(RawTable {
        feature_names,
        label_name: header[label_idx].to_string(),
        rows,
    })
}
