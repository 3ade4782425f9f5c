//! Dataset layout shared by every stage: column names and roles, and the
//! row-major block of values that flows between them.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names plus the set of identifier columns (deterministic keys such
/// as a row index) that are excluded from covariance-type analyses by default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    column_names: Vec<String>,
    identifier_columns: BTreeSet<usize>,
}

/// Stored column names of the synthetic Table 1 dataset.
pub const TABLE1_COLUMNS: [&str; 11] = ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K"];

impl DatasetSchema {
    pub fn new(column_names: Vec<String>, identifier_columns: impl IntoIterator<Item = usize>) -> Result<Self> {
        if column_names.is_empty() {
            return Err(Error::SchemaMismatch("schema needs at least one column".into()));
        }
        let identifier_columns: BTreeSet<usize> = identifier_columns.into_iter().collect();
        if let Some(&bad) = identifier_columns.iter().find(|&&c| c >= column_names.len()) {
            return Err(Error::SchemaMismatch(format!("identifier column {bad} outside 0..{}", column_names.len())));
        }
        for name in &column_names {
            if name.is_empty() || name.contains([',', '\n', '\r']) {
                return Err(Error::SchemaMismatch(format!("invalid column name {name:?}")));
            }
        }
        Ok(Self { column_names, identifier_columns })
    }

    /// Identifier `A` followed by variables `B..K`.
    pub fn table1() -> Self {
        Self {
            column_names: TABLE1_COLUMNS.iter().map(|s| s.to_string()).collect(),
            identifier_columns: BTreeSet::from([0]),
        }
    }

    /// Identifier `id` followed by `x1..xP`.
    pub fn iid(variables: usize) -> Self {
        let mut names = Vec::with_capacity(variables + 1);
        names.push("id".to_string());
        names.extend((1..=variables).map(|i| format!("x{i}")));
        Self { column_names: names, identifier_columns: BTreeSet::from([0]) }
    }

    /// Columns `c0..c{p-1}` with the given identifier set.
    pub fn generic(columns: usize, identifiers: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new((0..columns).map(|i| format!("c{i}")).collect(), identifiers)
    }

    /// Parses `table1`, `iid:P` (P variables plus an identifier) or
    /// `generic:P[:i,j,...]` (P columns, optional identifier indices).
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognised schema {spec:?}"));
        let mut parts = spec.split(':');
        match parts.next() {
            Some("table1") if parts.next().is_none() => Ok(Self::table1()),
            Some("iid") => {
                let p: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if p == 0 || parts.next().is_some() {
                    return Err(bad());
                }
                Ok(Self::iid(p))
            }
            Some("generic") => {
                let p: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let ids = match parts.next() {
                    None | Some("") => Vec::new(),
                    Some(list) => {
                        list.split(',').map(|s| s.parse::<usize>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?
                    }
                };
                if parts.next().is_some() {
                    return Err(bad());
                }
                Self::generic(p, ids)
            }
            _ => Err(bad()),
        }
    }

    pub fn column_count(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn identifier_columns(&self) -> &BTreeSet<usize> {
        &self.identifier_columns
    }

    pub fn is_identifier(&self, column: usize) -> bool {
        self.identifier_columns.contains(&column)
    }

    /// Restricts the schema to `keep` (ascending, distinct indices).
    pub fn select(&self, keep: &[usize]) -> Self {
        let column_names = keep.iter().map(|&c| self.column_names[c].clone()).collect();
        let identifier_columns =
            keep.iter().enumerate().filter(|(_, c)| self.identifier_columns.contains(c)).map(|(i, _)| i).collect();
        Self { column_names, identifier_columns }
    }

    /// Comma-joined column names, as written in an optional CSV header line.
    pub fn header_line(&self) -> String {
        self.column_names.join(",")
    }

    pub fn ensure_columns(&self, found: usize) -> Result<()> {
        if found != self.column_count() {
            return Err(Error::SchemaMismatch(format!("schema has {} columns, data has {found}", self.column_count())));
        }
        Ok(())
    }
}

impl fmt::Display for DatasetSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, name) in self.column_names.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}")?;
            if self.identifier_columns.contains(&i) {
                write!(f, " (id)")?;
            }
        }
        write!(f, "]")
    }
}

/// A contiguous block of rows, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    start_row: u64,
    column_count: usize,
    values: Vec<f64>,
}

impl Chunk {
    pub fn new(start_row: u64, column_count: usize, values: Vec<f64>) -> Result<Self> {
        if column_count == 0 {
            return Err(Error::InvalidArgument("chunk needs at least one column".into()));
        }
        if values.is_empty() || values.len() % column_count != 0 {
            return Err(Error::InvalidArgument(format!(
                "chunk of {} values is not a positive multiple of {column_count} columns",
                values.len()
            )));
        }
        Ok(Self { start_row, column_count, values })
    }

    pub fn start_row(&self) -> u64 {
        self.start_row
    }

    /// One past the last row index covered by this chunk.
    pub fn end_row(&self) -> u64 {
        self.start_row + self.row_count() as u64
    }

    pub fn row_count(&self) -> usize {
        self.values.len() / self.column_count
    }

    pub fn column_count(&self) -> usize {
        self.column_count
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.column_count..(i + 1) * self.column_count]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.column_count)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.column_count).copied()
    }
}
