//! Tabular dataset loading, per-feature statistics, and train/test splitting.
//!
//! A [`DatasetTable`] holds numeric feature rows with binary labels plus a
//! [`FeatureSpec`] per column. The specs carry the ranges and moments the
//! rest of the pipeline relies on: counterfactual sampling draws from
//! `[min, max]`, masking substitutes `mean`, bandwidth floors use the range.
//! After [`split`], the test table keeps the *training* split's statistics so
//! that sampling and masking are grounded in what the model saw during
//! training.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV near data row {row}: {source}")]
    Csv {
        row: usize,
        #[source]
        source: csv::Error,
    },
    #[error("data row {row}, column {column:?}: cannot parse {value:?} as a finite number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("data row {row}: label {value:?} is not 0 or 1")]
    BadLabel { row: usize, value: String },
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("data row {row} has {got} values, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("need at least 2 data rows, found {0}")]
    TooFewRows(usize),
    #[error("header defines no feature columns besides the label")]
    NoFeatures,
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("test fraction {fraction} leaves the {side} split empty for {n_rows} rows")]
    EmptySplit {
        fraction: f64,
        side: &'static str,
        n_rows: usize,
    },
}

/// Per-column metadata: identity plus the statistics recomputed from rows.
///
/// `std` is the population standard deviation (divisor `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub index: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl FeatureSpec {
    fn from_column(name: String, index: usize, column: &[f64]) -> Self {
        let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        FeatureSpec {
            name,
            index,
            min,
            max,
            mean: numeric::mean(column),
            std: numeric::population_std(column),
        }
    }

    /// Width of the observed value range, `max - min`.
    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// A fully materialized dataset: row-major features with binary labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetTable {
    pub features: Vec<FeatureSpec>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl DatasetTable {
    /// Builds a table from raw parts, recomputing all feature statistics.
    pub fn from_parts(
        names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
    ) -> Result<Self, DataError> {
        assert_eq!(rows.len(), labels.len(), "rows/labels length mismatch");
        assert!(!rows.is_empty(), "table needs at least one row");
        let d = names.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(DataError::RaggedRow {
                    row: i + 1,
                    got: row.len(),
                    expected: d,
                });
            }
        }
        let features = names
            .into_iter()
            .enumerate()
            .map(|(j, name)| {
                let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                let spec = FeatureSpec::from_column(name, j, &column);
                if spec.min == spec.max {
                    log::warn!("feature {:?} is constant (value {})", spec.name, spec.min);
                }
                spec
            })
            .collect();
        Ok(DatasetTable {
            features,
            rows,
            labels,
        })
    }

    /// Number of feature columns.
    pub fn d(&self) -> usize {
        self.features.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Per-feature means, in column order (used for masking).
    pub fn means(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.mean).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Writes the table back out as CSV with the label in the named column.
    ///
    /// Values are printed with the shortest representation that parses back
    /// to the identical `f64`, so a write/load round trip is lossless.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<(), DataError> {
        let io_err = |source| DataError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::fs::File::create(path).map_err(io_err)?;
        let mut header: Vec<String> = self.feature_names();
        header.push(label_column.to_string());
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let mut cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            cells.push(format!("{label}"));
            writeln!(out, "{}", cells.join(",")).map_err(io_err)?;
        }
        Ok(())
    }
}

/// Loads a CSV with a header row into a [`DatasetTable`].
///
/// All non-label columns must parse as finite numbers; the label column must
/// hold 0/1 (an integer or its float spelling). Errors name the offending
/// data row (1-based, header excluded) and column. Row order is preserved.
pub fn load_csv(path: &Path, label_column: &str) -> Result<DatasetTable, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let headers = reader
        .headers()
        .map_err(|source| DataError::Csv { row: 0, source })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if names.is_empty() {
        return Err(DataError::NoFeatures);
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|source| DataError::Csv { row: row_no, source })?;
        if record.len() != headers.len() {
            return Err(DataError::RaggedRow {
                row: row_no,
                got: record.len(),
                expected: headers.len(),
            });
        }
        let mut row = Vec::with_capacity(names.len());
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                let parsed: f64 = cell.trim().parse().map_err(|_| DataError::BadLabel {
                    row: row_no,
                    value: cell.to_string(),
                })?;
                if parsed == 0.0 {
                    labels.push(0);
                } else if parsed == 1.0 {
                    labels.push(1);
                } else {
                    return Err(DataError::BadLabel {
                        row: row_no,
                        value: cell.to_string(),
                    });
                }
            } else {
                let parsed: Option<f64> = cell.trim().parse().ok().filter(|v: &f64| v.is_finite());
                match parsed {
                    Some(v) => row.push(v),
                    None => {
                        return Err(DataError::BadCell {
                            row: row_no,
                            column: headers[j].to_string(),
                            value: cell.to_string(),
                        })
                    }
                }
            }
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(DataError::TooFewRows(rows.len()));
    }
    DatasetTable::from_parts(names, rows, labels)
}

/// Splits a table into (train, test) with a seeded shuffle.
///
/// The test row count is `round(n * test_fraction)`; a fraction that would
/// leave either side empty is an error. Row order within each split follows
/// the original table. The train table's statistics are recomputed from its
/// own rows; the test table *copies the train statistics* so that downstream
/// sampling and masking always use training-split ranges and means.
pub fn split(
    table: &DatasetTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetTable, DatasetTable), DataError> {
    if table.n_rows() < 2 {
        return Err(DataError::TooFewRows(table.n_rows()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::BadFraction(test_fraction));
    }
    let n = table.n_rows();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 {
        return Err(DataError::EmptySplit {
            fraction: test_fraction,
            side: "test",
            n_rows: n,
        });
    }
    if n_test == n {
        return Err(DataError::EmptySplit {
            fraction: test_fraction,
            side: "train",
            n_rows: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut test_idx: Vec<usize> = indices[..n_test].to_vec();
    let mut train_idx: Vec<usize> = indices[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let take = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<u8>) {
        (
            idx.iter().map(|&i| table.rows[i].clone()).collect(),
            idx.iter().map(|&i| table.labels[i]).collect(),
        )
    };
    let (train_rows, train_labels) = take(&train_idx);
    let (test_rows, test_labels) = take(&test_idx);

    let train = DatasetTable::from_parts(table.feature_names(), train_rows, train_labels)?;
    // Test split: rows are its own, statistics are frozen from training.
    let test = DatasetTable {
        features: train.features.clone(),
        rows: test_rows,
        labels: test_labels,
    };
    Ok((train, test))
}
