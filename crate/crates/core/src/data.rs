//! Column-named observation tables.
//!
//! A [`Dataset`] is a dense row-major table with named columns. Estimating
//! functions receive one row at a time as a slice, in the dataset's column
//! order. CSV input requires a header row, and every cell must parse as a
//! finite number — missing values are rejected at load time with the column
//! and row named in the error.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense observation table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S: Scalar> {
    names: Vec<String>,
    /// Row-major cell storage, `n_rows * n_cols` long.
    values: Vec<S>,
}

impl<S: Scalar> Dataset<S> {
    /// Builds a table from row-major storage.
    ///
    /// `values.len()` must be a multiple of `names.len()`, and column names
    /// must be unique and nonempty.
    pub fn new(names: Vec<String>, values: Vec<S>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Schema("a dataset needs at least one column".into()));
        }
        for (k, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Schema(format!("column {k} has an empty name")));
            }
            if names[..k].contains(name) {
                return Err(Error::Schema(format!("duplicate column name '{name}'")));
            }
        }
        if values.len() % names.len() != 0 {
            return Err(Error::Schema(format!(
                "cell count {} is not a multiple of the column count {}",
                values.len(),
                names.len()
            )));
        }
        Ok(Self { names, values })
    }

    /// Builds a table from equal-length named columns.
    pub fn from_columns(columns: Vec<(String, Vec<S>)>) -> Result<Self> {
        let names: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
        let n_rows = columns.first().map_or(0, |(_, c)| c.len());
        for (name, col) in &columns {
            if col.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column '{name}' has {} rows, expected {n_rows}",
                    col.len()
                )));
            }
        }
        let mut values = Vec::with_capacity(n_rows * names.len());
        for i in 0..n_rows {
            for (_, col) in &columns {
                values.push(col[i]);
            }
        }
        Self::new(names, values)
    }

    /// Number of observations.
    pub fn n_rows(&self) -> usize {
        self.values.len() / self.names.len()
    }

    /// Number of columns.
    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    /// Column names, in storage order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// One observation as a slice in column order.
    pub fn row(&self, i: usize) -> &[S] {
        let w = self.names.len();
        &self.values[i * w..(i + 1) * w]
    }

    /// Index of a named column, or a schema error naming the column.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("missing required column '{name}'")))
    }

    /// Indices of every requested column, or a schema error naming the first
    /// missing one.
    pub fn column_indices(&self, names: &[&str]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.column_index(n)).collect()
    }

    /// Copy of one column.
    pub fn column(&self, index: usize) -> Vec<S> {
        (0..self.n_rows()).map(|i| self.row(i)[index]).collect()
    }

    /// New table holding the named columns in the requested order.
    ///
    /// Models address row cells by position, so callers project a table onto
    /// a model's declared column order before fitting.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let indices = self.column_indices(names)?;
        let mut values = Vec::with_capacity(self.n_rows() * indices.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            for &j in &indices {
                values.push(row[j]);
            }
        }
        Self::new(names.iter().map(|s| s.to_string()).collect(), values)
    }

    /// Appends a column; the new column goes last in every row.
    pub fn push_column(&mut self, name: &str, column: &[S]) -> Result<()> {
        if column.len() != self.n_rows() {
            return Err(Error::Schema(format!(
                "column '{name}' has {} rows, expected {}",
                column.len(),
                self.n_rows()
            )));
        }
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Schema(format!("duplicate column name '{name}'")));
        }
        let w = self.names.len();
        let mut values = Vec::with_capacity(self.values.len() + column.len());
        for (i, &cell) in column.iter().enumerate() {
            values.extend_from_slice(&self.values[i * w..(i + 1) * w]);
            values.push(cell);
        }
        self.names.push(name.to_string());
        self.values = values;
        Ok(())
    }
}

impl Dataset<f64> {
    /// Reads a headered CSV file.
    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    /// Reads headered CSV from any reader. Every cell must parse as a finite
    /// number; blank or malformed cells are rejected with the column named.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut values = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != names.len() {
                return Err(Error::Schema(format!(
                    "row {} has {} cells, expected {}",
                    r + 2,
                    record.len(),
                    names.len()
                )));
            }
            for (field, name) in record.iter().zip(&names) {
                let parsed: f64 = field.parse().map_err(|_| {
                    Error::Schema(format!(
                        "row {}, column '{name}': cannot parse '{field}' as a number \
                         (missing values are not permitted)",
                        r + 2
                    ))
                })?;
                if !parsed.is_finite() {
                    return Err(Error::Schema(format!(
                        "row {}, column '{name}': non-finite value '{field}'",
                        r + 2
                    )));
                }
                values.push(parsed);
            }
        }
        Self::new(names, values)
    }

    /// Writes the table as headered CSV.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.names)?;
        for i in 0..self.n_rows() {
            wtr.write_record(self.row(i).iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes the table as headered CSV to a file path.
    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rows_and_columns_round_trip() {
        let d = Dataset::new(names(&["a", "b"]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.n_cols(), 2);
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.column(0), vec![1.0, 3.0]);
        assert_eq!(d.column_index("b").unwrap(), 1);
    }

    #[test]
    fn missing_column_is_named_in_error() {
        let d = Dataset::new(names(&["a"]), vec![1.0]).unwrap();
        let err = d.column_index("W").unwrap_err();
        assert!(err.to_string().contains("'W'"), "got: {err}");
    }

    #[test]
    fn duplicate_and_ragged_inputs_are_rejected() {
        assert!(Dataset::new(names(&["a", "a"]), vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(names(&["a", "b"]), vec![1.0, 2.0, 3.0]).is_err());
        assert!(Dataset::from_columns(vec![
            ("a".into(), vec![1.0]),
            ("b".into(), vec![1.0, 2.0]),
        ])
        .is_err());
    }

    #[test]
    fn select_reorders_and_projects() {
        let d = Dataset::new(names(&["a", "b", "c"]), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = d.select(&["c", "a"]).unwrap();
        assert_eq!(s.names(), &["c".to_string(), "a".to_string()]);
        assert_eq!(s.row(0), &[3.0, 1.0]);
        assert_eq!(s.row(1), &[6.0, 4.0]);
        assert!(d.select(&["a", "missing"]).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_cells() {
        let d = Dataset::from_columns(vec![
            ("W".into(), vec![1.0, 2.5]),
            ("Y".into(), vec![-3.0, 0.125]),
        ])
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn csv_missing_value_is_rejected_with_column_name() {
        let err = Dataset::read_csv("W,Y\n1.0,\n".as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'Y'"), "got: {msg}");
        assert!(msg.contains("row 2"), "got: {msg}");
    }

    #[test]
    fn csv_non_numeric_cell_is_rejected() {
        let err = Dataset::read_csv("W\nabc\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("'W'"));
    }

    #[test]
    fn push_column_appends_in_row_order() {
        let mut d = Dataset::from_columns(vec![("a".into(), vec![1.0, 2.0])]).unwrap();
        d.push_column("s", &[10.0, 20.0]).unwrap();
        assert_eq!(d.row(0), &[1.0, 10.0]);
        assert_eq!(d.row(1), &[2.0, 20.0]);
        assert!(d.push_column("s", &[0.0, 0.0]).is_err());
    }
}
