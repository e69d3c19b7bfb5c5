//! Readers for CSV data/loadings files and whitespace-separated matrices.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Result, SpcaError};

/// A parsed numeric table with its optional header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub data: DMatrix<f64>,
}

/// Parses comma-separated rows. The first line is treated as a header when
/// any of its fields fails to parse as a number.
pub fn parse_csv_matrix(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| SpcaError::Parse(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => rows.push(vals),
            Err(_) if line == 0 => {
                header = Some(rec.iter().map(str::to_owned).collect());
            }
            Err(e) => {
                return Err(SpcaError::Parse(format!("row {}: {e}", line + 1)));
            }
        }
    }
    let data = rows_to_matrix(rows)?;
    if let Some(h) = &header {
        if h.len() != data.ncols() {
            return Err(SpcaError::Parse(format!(
                "header has {} fields but rows have {}",
                h.len(),
                data.ncols()
            )));
        }
    }
    Ok(Table { header, data })
}

pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<Table> {
    parse_csv_matrix(&fs::read_to_string(path)?)
}

/// Parses whitespace-separated rows, skipping blank lines and `#` comments.
pub fn parse_whitespace_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| SpcaError::Parse(format!("line {}: {e}", i + 1)))?);
    }
    rows_to_matrix(rows)
}

pub fn read_whitespace_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_whitespace_matrix(&fs::read_to_string(path)?)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>> {
    let Some(first) = rows.first() else {
        return Err(SpcaError::Parse("no numeric rows".into()));
    };
    let cols = first.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(SpcaError::Parse(format!(
            "row {} has {} fields, expected {cols}",
            i + 1,
            r.len()
        )));
    }
    let n = rows.len();
    Ok(DMatrix::from_row_iterator(
        n,
        cols,
        rows.into_iter().flatten(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn csv_with_header() {
        let t = parse_csv_matrix("a,b\n1,2\n3,4\n").unwrap();
        assert_eq!(t.header, Some(vec!["a".to_string(), "b".to_string()]));
        assert_eq!(t.data, dmatrix![1.0, 2.0; 3.0, 4.0]);
    }

    #[test]
    fn csv_without_header() {
        let t = parse_csv_matrix("1, 2\n-3.5,4e1\n").unwrap();
        assert_eq!(t.header, None);
        assert_eq!(t.data, dmatrix![1.0, 2.0; -3.5, 40.0]);
    }

    #[test]
    fn csv_rejects_ragged_and_garbage() {
        assert!(parse_csv_matrix("1,2\n3\n").is_err());
        assert!(parse_csv_matrix("1,2\nx,4\n").is_err());
        assert!(parse_csv_matrix("a,b\n").is_err());
    }

    #[test]
    fn whitespace_matrix() {
        let m = parse_whitespace_matrix("# c\n1 2\n\n 3\t4 \n").unwrap();
        assert_eq!(m, dmatrix![1.0, 2.0; 3.0, 4.0]);
        assert!(parse_whitespace_matrix("1 2\n3\n").is_err());
    }
}
