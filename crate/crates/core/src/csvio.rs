//! Plain-matrix CSV helpers shared by checkpoints and exports.
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! identical matrices always produce identical bytes.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Result, TlnmfError};

pub(crate) fn csv_error(path: &Path, e: impl std::fmt::Display) -> TlnmfError {
    TlnmfError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub(crate) fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| TlnmfError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::WriterBuilder::new().flexible(true).from_writer(file))
}

pub(crate) fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|source| TlnmfError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    rdr.records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_owned).collect())
                .map_err(|e| csv_error(path, e))
        })
        .collect()
}

pub(crate) fn parse_matrix(path: &Path, rows: &[Vec<String>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut values = Vec::with_capacity(rows.len() * ncols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(csv_error(
                path,
                format!("row {i} has {} fields, expected {ncols}", row.len()),
            ));
        }
        for field in row {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| csv_error(path, format!("not a number: {field:?}")))?;
            values.push(v);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &values))
}

/// Writes a matrix row by row with no header.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut wtr = writer(path)?;
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|x| x.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    wtr.flush().map_err(|source| TlnmfError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let rows = read_rows(path)?;
    parse_matrix(path, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matrix_round_trips_bit_exactly(
            rows in 1usize..5,
            cols in 1usize..5,
            seed in proptest::collection::vec(-1e6f64..1e6, 25),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            let m = DMatrix::from_fn(rows, cols, |i, j| seed[i * 5 + j] / 7.0);
            write_matrix(&path, &m).unwrap();
            prop_assert_eq!(read_matrix(&path).unwrap(), m);
        }
    }
}
