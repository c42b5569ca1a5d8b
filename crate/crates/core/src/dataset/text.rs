//! CSV readers for trial matrices and rating tables.
//!
//! Both formats carry a header whose first cell is `trial_id`; remaining
//! header cells name the feature or rating columns. Row numbers in errors
//! count data rows from 1.

use std::fs::File;
use std::path::Path;

use ndarray::Array2;

use super::{DatasetError, KindDeclarations, RatingsTable, TrialMatrix};

struct RawTable {
    ids: Vec<String>,
    columns: Vec<String>,
    values: Array2<f64>,
}

fn read_raw(path: &Path) -> Result<RawTable, DatasetError> {
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("trial_id") {
        return Err(DatasetError::MissingHeader);
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if columns.is_empty() {
        return Err(DatasetError::NoFeatures);
    }
    let width = columns.len();
    let mut ids = Vec::new();
    let mut flat = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = i + 1;
        if record.len() != width + 1 {
            return Err(DatasetError::RaggedRow {
                row,
                expected: width + 1,
                found: record.len(),
            });
        }
        ids.push(record[0].to_string());
        for (cell, column) in record.iter().skip(1).zip(&columns) {
            let value: f64 = cell.parse().map_err(|_| DatasetError::NonNumeric {
                row,
                column: column.clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DatasetError::NonFinite {
                    row,
                    column: column.clone(),
                });
            }
            flat.push(value);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), width), flat).expect("rectangular by construction");
    Ok(RawTable {
        ids,
        columns,
        values,
    })
}

/// Load a `trial_id,f0,f1,...` CSV. Column order is preserved; header names
/// beyond `trial_id` are not interpreted.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<TrialMatrix, DatasetError> {
    let raw = read_raw(path.as_ref())?;
    TrialMatrix::new(raw.ids, raw.values)
}

pub fn save_matrix_csv(matrix: &TrialMatrix, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["trial_id".to_string()];
    header.extend((0..matrix.n_features()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, row) in matrix.trial_ids().iter().zip(matrix.values().rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a ratings CSV, validating each column against its declared kind.
pub fn load_ratings_csv(
    path: impl AsRef<Path>,
    kinds: &KindDeclarations,
) -> Result<RatingsTable, DatasetError> {
    let raw = read_raw(path.as_ref())?;
    let column_kinds = raw.columns.iter().map(|c| kinds.kind_of(c)).collect();
    RatingsTable::new(raw.ids, raw.columns, column_kinds, raw.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ColumnKind;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn parses_small_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "m.csv", "trial_id,f0,f1,f2\nt1,1,2,3\nt2,4,5,6\n");
        let m = load_matrix_csv(&p).unwrap();
        assert_eq!((m.n_trials(), m.n_features()), (2, 3));
        assert_eq!(m.values().row(1).to_vec(), vec![4.0, 5.0, 6.0]);
        assert_eq!(m.trial_ids(), &["t1", "t2"]);
    }

    #[test]
    fn duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "m.csv", "trial_id,f0\nt1,1\nt1,2\n");
        assert_eq!(load_matrix_csv(&p).unwrap_err().to_string(), "duplicate trial id t1");
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "m.csv", "trial_id,f0,f1\nt1,1,2\nt2,3,abc\n");
        match load_matrix_csv(&p).unwrap_err() {
            DatasetError::NonNumeric { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "f1", "abc"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ragged_and_nonfinite() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "m.csv", "trial_id,f0,f1\nt1,1,2\nt2,3\n");
        assert!(matches!(
            load_matrix_csv(&p).unwrap_err(),
            DatasetError::RaggedRow { row: 2, expected: 3, found: 2 }
        ));
        let p = write(&dir, "n.csv", "trial_id,f0\nt1,NaN\nt2,1\n");
        assert!(matches!(
            load_matrix_csv(&p).unwrap_err(),
            DatasetError::NonFinite { row: 1, .. }
        ));
        let p = write(&dir, "h.csv", "id,f0\nt1,1\nt2,1\n");
        assert!(matches!(load_matrix_csv(&p).unwrap_err(), DatasetError::MissingHeader));
    }

    #[test]
    fn ratings_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", "trial_id,anger,session\na,10,1\nb,101,2\n");
        let mut kinds = KindDeclarations::uniform(ColumnKind::Continuous {
            range: Some((0.0, 100.0)),
        });
        kinds.overrides.insert("session".into(), ColumnKind::Discrete);
        assert!(matches!(
            load_ratings_csv(&p, &kinds).unwrap_err(),
            DatasetError::OutOfRange { row: 2, .. }
        ));

        let p = write(&dir, "s.csv", "trial_id,anger,session\na,10,1\nb,11,3.5\n");
        assert!(matches!(
            load_ratings_csv(&p, &kinds).unwrap_err(),
            DatasetError::NonIntegerDiscrete { row: 2, .. }
        ));

        let p = write(&dir, "ok.csv", "trial_id,anger,session\na,10,1\nb,11,3\n");
        let t = load_ratings_csv(&p, &kinds).unwrap();
        assert_eq!(t.kinds()[1], ColumnKind::Discrete);
        assert_eq!(t.discrete_column(1), vec![1, 3]);
    }

    #[test]
    fn full_size_emotion_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("trial_id");
        for c in 0..34 {
            body.push_str(&format!(",emotion{c}"));
        }
        body.push('\n');
        for t in 0..2196 {
            body.push_str(&format!("clip{t:04}"));
            for c in 0..34 {
                body.push_str(&format!(",{}", (t * 7 + c * 13) % 101));
            }
            body.push('\n');
        }
        let p = write(&dir, "emotion.csv", &body);
        let kinds = KindDeclarations::uniform(ColumnKind::Continuous {
            range: Some((0.0, 100.0)),
        });
        let t = load_ratings_csv(&p, &kinds).unwrap();
        assert_eq!((t.n_trials(), t.n_columns()), (2196, 34));
    }
}
