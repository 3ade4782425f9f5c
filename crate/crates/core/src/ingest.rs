//! Streaming CSV reader that yields fixed-row-count chunks of binary64 values.
//!
//! Accepted input: ASCII, comma-separated, no quoting, LF line endings (a CR
//! before the LF is dropped). Fields are integer or decimal literals with an
//! optional exponent; anything else, including surrounding spaces and textual
//! `inf`/`nan`, is rejected.

use std::fs::File;
use std::io::{BufRead, BufReader, ErrorKind};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::schema::{Chunk, DatasetSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    #[default]
    FailFast,
    /// Drop malformed lines and count them.
    SkipAndCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CsvOptions {
    /// First line is a header that must equal the schema's column names.
    pub has_header: bool,
    pub error_policy: ErrorPolicy,
}

pub struct CsvStream {
    path: PathBuf,
    reader: BufReader<File>,
    schema: DatasetSchema,
    policy: ErrorPolicy,
    line: Vec<u8>,
    /// Rows delivered so far; the next chunk starts here.
    position: u64,
    /// 1-based number of the last data line read, for error messages.
    line_number: u64,
    skipped: u64,
    bytes_read: u64,
    finished: bool,
}

pub fn open_csv_stream(path: &Path, schema: &DatasetSchema, options: CsvOptions) -> Result<CsvStream> {
    let meta = std::fs::metadata(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Unreadable { path: path.to_path_buf(), reason: e.to_string() },
    })?;
    if meta.is_dir() {
        return Err(Error::Unreadable { path: path.to_path_buf(), reason: "is a directory".into() });
    }
    let file = File::open(path).map_err(|e| Error::Unreadable { path: path.to_path_buf(), reason: e.to_string() })?;
    let mut stream = CsvStream {
        path: path.to_path_buf(),
        reader: BufReader::with_capacity(1 << 20, file),
        schema: schema.clone(),
        policy: options.error_policy,
        line: Vec::with_capacity(256),
        position: 0,
        line_number: 0,
        skipped: 0,
        bytes_read: 0,
        finished: false,
    };
    if options.has_header {
        if !stream.read_line()? {
            return Err(Error::Empty(format!("{} has no header line", path.display())));
        }
        let found = String::from_utf8_lossy(&stream.line).into_owned();
        let expected = schema.header_line();
        if found != expected {
            return Err(Error::HeaderMismatch { expected, found });
        }
    }
    Ok(stream)
}

impl CsvStream {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    /// Number of rows delivered so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Lines dropped under [`ErrorPolicy::SkipAndCount`].
    pub fn skipped_rows(&self) -> u64 {
        self.skipped
    }

    pub fn bytes_read(&self) -> u64 {
        self.bytes_read
    }

    /// Reads the next line into `self.line` without its terminator.
    fn read_line(&mut self) -> Result<bool> {
        self.line.clear();
        let n = self.reader.read_until(b'\n', &mut self.line)?;
        if n == 0 {
            return Ok(false);
        }
        self.bytes_read += n as u64;
        if self.line.last() == Some(&b'\n') {
            self.line.pop();
            if self.line.last() == Some(&b'\r') {
                self.line.pop();
            }
        }
        Ok(true)
    }

    /// Returns up to `max_rows` rows, or `None` once the input is exhausted.
    /// After an error the handle should be discarded.
    pub fn next_chunk(&mut self, max_rows: usize) -> Result<Option<Chunk>> {
        if max_rows == 0 {
            return Err(Error::InvalidArgument("max_rows must be at least 1".into()));
        }
        if self.finished {
            return Ok(None);
        }
        let p = self.schema.column_count();
        let mut values = Vec::with_capacity(max_rows.min(1 << 20) * p);
        let mut rows = 0usize;
        while rows < max_rows {
            if !self.read_line()? {
                self.finished = true;
                break;
            }
            self.line_number += 1;
            let before = values.len();
            match parse_line(&self.line, p, self.line_number, &mut values) {
                Ok(()) => rows += 1,
                Err(e) => match self.policy {
                    ErrorPolicy::FailFast => return Err(e),
                    ErrorPolicy::SkipAndCount => {
                        values.truncate(before);
                        self.skipped += 1;
                    }
                },
            }
        }
        if rows == 0 {
            return Ok(None);
        }
        let chunk = Chunk::new(self.position, p, values)?;
        self.position += rows as u64;
        Ok(Some(chunk))
    }
}

/// Parses one data line of `p` fields, appending the values to `out`.
pub fn parse_line(line: &[u8], p: usize, row: u64, out: &mut Vec<f64>) -> Result<()> {
    let mut found = 0usize;
    for (i, field) in line.split(|&b| b == b',').enumerate() {
        found += 1;
        if i < p {
            let v = parse_field(field).ok_or_else(|| Error::MalformedField {
                row,
                column: i + 1,
                text: String::from_utf8_lossy(field).into_owned(),
            })?;
            out.push(v);
        }
    }
    if found != p {
        return Err(Error::FieldCount { row, expected: p, found });
    }
    Ok(())
}

/// Strict numeric literal parser: `[+-]digits[.digits][(e|E)[+-]digits]`.
pub fn parse_field(field: &[u8]) -> Option<f64> {
    let mut has_digit = false;
    for &b in field {
        match b {
            b'0'..=b'9' => has_digit = true,
            b'+' | b'-' | b'.' | b'e' | b'E' => {}
            _ => return None,
        }
    }
    if !has_digit {
        return None;
    }
    std::str::from_utf8(field).ok()?.parse().ok()
}
