//! Trial matrices, rating tables, and the on-disk formats they travel in.
//!
//! Every loader validates on the way in, so downstream modules can assume
//! finite values, unique trial ids, and at least two trials.

mod binary;
mod text;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use ndarray::{Array2, ArrayView2, Axis};

pub use binary::{
    load_matrix_binary, read_block, save_matrix_binary, write_block, MAGIC, VERSION,
};
pub use text::{load_matrix_csv, load_ratings_csv, save_matrix_csv};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("missing header: first column must be `trial_id`")]
    MissingHeader,
    #[error("ragged row {row}: expected {expected} cells, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-numeric value {value:?} at row {row}, column {column}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: String },
    #[error("duplicate trial id {0}")]
    DuplicateTrialId(String),
    #[error("need at least 2 trials, found {0}")]
    TooFewTrials(usize),
    #[error("need at least 1 feature column")]
    NoFeatures,
    #[error("shape mismatch: {ids} trial ids for {rows} value rows")]
    IdCountMismatch { ids: usize, rows: usize },
    #[error("unrecognized matrix file")]
    UnrecognizedMatrixFile,
    #[error("unsupported matrix file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated matrix file while reading {what}")]
    Truncated { what: &'static str },
    #[error("matrix dimensions {rows}x{cols} overflow")]
    DimensionOverflow { rows: u64, cols: u64 },
    #[error("trial id {index} is not valid UTF-8")]
    InvalidTrialId { index: usize },
    #[error("value {value} at row {row}, column {column} outside declared range [{lo}, {hi}]")]
    OutOfRange {
        row: usize,
        column: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("value {value} at row {row}, column {column} is not a nonnegative integer (column declared discrete)")]
    NonIntegerDiscrete {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("no shared trials")]
    NoSharedTrials,
}

/// N trials × M features, row `i` belonging to `trial_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMatrix {
    trial_ids: Vec<String>,
    values: Array2<f64>,
}

impl TrialMatrix {
    pub fn new(trial_ids: Vec<String>, values: Array2<f64>) -> Result<Self, DatasetError> {
        if trial_ids.len() != values.nrows() {
            return Err(DatasetError::IdCountMismatch {
                ids: trial_ids.len(),
                rows: values.nrows(),
            });
        }
        if values.nrows() < 2 {
            return Err(DatasetError::TooFewTrials(values.nrows()));
        }
        if values.ncols() == 0 {
            return Err(DatasetError::NoFeatures);
        }
        check_unique(&trial_ids)?;
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(DatasetError::NonFinite {
                    row: row + 1,
                    column: format!("f{col}"),
                });
            }
        }
        Ok(Self { trial_ids, values })
    }

    pub fn trial_ids(&self) -> &[String] {
        &self.trial_ids
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n_trials(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, DatasetError> {
        let values = self.values.select(Axis(0), rows);
        let ids = rows.iter().map(|&r| self.trial_ids[r].clone()).collect();
        Self::new(ids, values)
    }

    pub fn into_parts(self) -> (Vec<String>, Array2<f64>) {
        (self.trial_ids, self.values)
    }
}

/// How a rating column is interpreted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColumnKind {
    /// Real-valued, optionally bounded to `[lo, hi]`.
    Continuous { range: Option<(f64, f64)> },
    /// Nonnegative integer codes (session, run, ...).
    Discrete,
}

impl ColumnKind {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ColumnKind::Discrete)
    }
}

/// Column-kind declarations for one ratings file. Kinds are never inferred
/// from the values: a 0/1 proportion column is continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct KindDeclarations {
    pub default: ColumnKind,
    pub overrides: BTreeMap<String, ColumnKind>,
}

impl Default for KindDeclarations {
    fn default() -> Self {
        Self {
            default: ColumnKind::Continuous { range: None },
            overrides: BTreeMap::new(),
        }
    }
}

impl KindDeclarations {
    pub fn uniform(kind: ColumnKind) -> Self {
        Self {
            default: kind,
            overrides: BTreeMap::new(),
        }
    }

    pub fn kind_of(&self, column: &str) -> ColumnKind {
        self.overrides.get(column).copied().unwrap_or(self.default)
    }
}

/// N trials × R rating columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTable {
    trial_ids: Vec<String>,
    column_names: Vec<String>,
    kinds: Vec<ColumnKind>,
    values: Array2<f64>,
}

impl RatingsTable {
    pub fn new(
        trial_ids: Vec<String>,
        column_names: Vec<String>,
        kinds: Vec<ColumnKind>,
        values: Array2<f64>,
    ) -> Result<Self, DatasetError> {
        if trial_ids.len() != values.nrows() {
            return Err(DatasetError::IdCountMismatch {
                ids: trial_ids.len(),
                rows: values.nrows(),
            });
        }
        if column_names.is_empty() || column_names.len() != values.ncols() || kinds.len() != values.ncols() {
            return Err(DatasetError::NoFeatures);
        }
        check_unique(&trial_ids)?;
        for ((row, col), &v) in values.indexed_iter() {
            let column = &column_names[col];
            if !v.is_finite() {
                return Err(DatasetError::NonFinite {
                    row: row + 1,
                    column: column.clone(),
                });
            }
            match kinds[col] {
                ColumnKind::Continuous { range: Some((lo, hi)) } if v < lo || v > hi => {
                    return Err(DatasetError::OutOfRange {
                        row: row + 1,
                        column: column.clone(),
                        value: v,
                        lo,
                        hi,
                    });
                }
                ColumnKind::Discrete if v < 0.0 || v.fract() != 0.0 => {
                    return Err(DatasetError::NonIntegerDiscrete {
                        row: row + 1,
                        column: column.clone(),
                        value: v,
                    });
                }
                _ => {}
            }
        }
        Ok(Self {
            trial_ids,
            column_names,
            kinds,
            values,
        })
    }

    pub fn trial_ids(&self) -> &[String] {
        &self.trial_ids
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n_trials(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, index: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.column(index)
    }

    /// Discrete column values as integer codes.
    pub fn discrete_column(&self, index: usize) -> Vec<u64> {
        self.values.column(index).iter().map(|&v| v as u64).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, DatasetError> {
        let values = self.values.select(Axis(0), rows);
        let ids = rows.iter().map(|&r| self.trial_ids[r].clone()).collect();
        Self::new(ids, self.column_names.clone(), self.kinds.clone(), values)
    }
}

fn check_unique(ids: &[String]) -> Result<(), DatasetError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DatasetError::DuplicateTrialId(id.clone()));
        }
    }
    Ok(())
}

/// Positional correspondence between two trial-id lists, in left order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPlan {
    pub left_rows: Vec<usize>,
    pub right_rows: Vec<usize>,
    pub left_only: Vec<String>,
    pub right_only: Vec<String>,
}

impl AlignmentPlan {
    pub fn between(left: &[String], right: &[String]) -> Result<Self, DatasetError> {
        let right_index: HashMap<&str, usize> = right
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut left_rows = Vec::new();
        let mut right_rows = Vec::new();
        let mut left_only = Vec::new();
        for (i, id) in left.iter().enumerate() {
            match right_index.get(id.as_str()) {
                Some(&j) => {
                    left_rows.push(i);
                    right_rows.push(j);
                }
                None => left_only.push(id.clone()),
            }
        }
        if left_rows.is_empty() {
            return Err(DatasetError::NoSharedTrials);
        }
        let shared: HashSet<&str> = left_rows.iter().map(|&i| left[i].as_str()).collect();
        let right_only = right
            .iter()
            .filter(|id| !shared.contains(id.as_str()))
            .cloned()
            .collect();
        Ok(Self {
            left_rows,
            right_rows,
            left_only,
            right_only,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.left_only.is_empty()
            && self.right_only.is_empty()
            && self.left_rows.iter().enumerate().all(|(i, &r)| i == r)
            && self.right_rows.iter().enumerate().all(|(i, &r)| i == r)
    }
}

/// A matrix and a ratings table restricted to their shared trials, row `i`
/// of both referring to the same trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub matrix: TrialMatrix,
    pub ratings: RatingsTable,
    /// Trials with features but no ratings.
    pub dropped_from_matrix: Vec<String>,
    /// Trials with ratings but no features.
    pub dropped_from_ratings: Vec<String>,
}

/// Restrict both sides to the shared trial ids, ordered as in the matrix.
/// Trials missing on either side are dropped with a warning, never imputed.
pub fn align(matrix: &TrialMatrix, ratings: &RatingsTable) -> Result<Aligned, DatasetError> {
    let plan = AlignmentPlan::between(matrix.trial_ids(), ratings.trial_ids())?;
    if !plan.left_only.is_empty() {
        log::warn!(
            "{} trial(s) have no ratings and were dropped (first: {})",
            plan.left_only.len(),
            plan.left_only[0]
        );
    }
    if !plan.right_only.is_empty() {
        log::warn!(
            "{} rated trial(s) have no feature row and were dropped (first: {})",
            plan.right_only.len(),
            plan.right_only[0]
        );
    }
    let (matrix, ratings) = if plan.is_identity() {
        (matrix.clone(), ratings.clone())
    } else {
        (
            matrix.select_rows(&plan.left_rows)?,
            ratings.select_rows(&plan.right_rows)?,
        )
    };
    Ok(Aligned {
        matrix,
        ratings,
        dropped_from_matrix: plan.left_only,
        dropped_from_ratings: plan.right_only,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn matrix(names: &[&str]) -> TrialMatrix {
        let n = names.len();
        let values = Array2::from_shape_fn((n, 2), |(i, j)| (i * 10 + j) as f64);
        TrialMatrix::new(ids(names), values).unwrap()
    }

    fn ratings(names: &[&str]) -> RatingsTable {
        let n = names.len();
        let values = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        RatingsTable::new(
            ids(names),
            ids(&["r"]),
            vec![ColumnKind::Continuous { range: None }],
            values,
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicates_and_nan() {
        let err = TrialMatrix::new(ids(&["t1", "t1"]), array![[1.0], [2.0]]).unwrap_err();
        assert_eq!(err.to_string(), "duplicate trial id t1");
        let err = TrialMatrix::new(ids(&["a", "b"]), array![[1.0], [f64::NAN]]).unwrap_err();
        assert!(matches!(err, DatasetError::NonFinite { row: 2, .. }));
        assert!(matches!(
            TrialMatrix::new(ids(&["a"]), array![[1.0]]),
            Err(DatasetError::TooFewTrials(1))
        ));
    }

    #[test]
    fn align_reorders_to_matrix_order() {
        let m = matrix(&["a", "b", "c"]);
        let r = ratings(&["c", "a", "b"]);
        let al = align(&m, &r).unwrap();
        assert_eq!(al.matrix.trial_ids(), al.ratings.trial_ids());
        assert_eq!(al.ratings.column(0).to_vec(), vec![1.0, 2.0, 0.0]);
        assert!(al.dropped_from_matrix.is_empty());
    }

    #[test]
    fn align_drops_unrated_trials() {
        let m = matrix(&["a", "b", "c", "d", "e"]);
        let r = ratings(&["a", "b", "d", "e"]);
        let al = align(&m, &r).unwrap();
        assert_eq!(al.matrix.n_trials(), 4);
        assert_eq!(al.dropped_from_matrix, ids(&["c"]));
        assert_eq!(al.matrix.values().row(2).to_vec(), vec![30.0, 31.0]);
    }

    #[test]
    fn align_disjoint_errors() {
        let err = align(&matrix(&["a", "b"]), &ratings(&["x", "y"])).unwrap_err();
        assert_eq!(err.to_string(), "no shared trials");
    }

    #[test]
    fn align_is_idempotent() {
        let m = matrix(&["a", "b", "c", "d"]);
        let r = ratings(&["d", "b", "a", "z"]);
        let once = align(&m, &r).unwrap();
        let twice = align(&once.matrix, &once.ratings).unwrap();
        assert_eq!(once.matrix, twice.matrix);
        assert_eq!(once.ratings, twice.ratings);
        assert!(twice.dropped_from_matrix.is_empty() && twice.dropped_from_ratings.is_empty());
    }

    #[test]
    fn discrete_and_range_validation() {
        let err = RatingsTable::new(
            ids(&["a", "b"]),
            ids(&["session"]),
            vec![ColumnKind::Discrete],
            array![[1.0], [3.5]],
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::NonIntegerDiscrete { row: 2, .. }));
        let err = RatingsTable::new(
            ids(&["a", "b"]),
            ids(&["anger"]),
            vec![ColumnKind::Continuous {
                range: Some((0.0, 100.0)),
            }],
            array![[101.0], [3.5]],
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::OutOfRange { row: 1, .. }));
    }
}
