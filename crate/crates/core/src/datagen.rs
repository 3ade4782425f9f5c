//! Deterministic synthetic data.
//!
//! Every row draws from its own ChaCha8 stream, keyed by `(seed, row index)`,
//! so a row's contents depend only on the seed and its index. Output is
//! therefore identical for any number of generating workers.
//!
//! `Table1` rows hold an identifier `A` plus ten variables:
//!
//! | col | value |
//! |-----|-------|
//! | A | row index, starting at 1 |
//! | B, C, D | uniform integers in `[3, 8]`, `[1, 10]`, `[1, 100]` |
//! | E | `trunc(ln C / ln B * 100)` |
//! | F | `round(ln D / ln B * 10000)` |
//! | G | `trunc(abs(cos C) * 100)` |
//! | H | `trunc(abs(sin D) * 100)` |
//! | I | `round(abs(1 / tan C) * 1000)` |
//! | J | `abs(tan D)` |
//! | K | `D / C` (integer division) |
//!
//! Trigonometric arguments are radians, `trunc` rounds toward zero and `round`
//! rounds half away from zero. Quotients such as `ln 9 / ln 3` may land a hair
//! below an integer before truncation; that is kept as computed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checksum::Checksum;
use crate::error::{Error, Result};
use crate::reduce::ordered_for_each;
use crate::schema::DatasetSchema;

/// Which synthetic dataset to produce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    Table1,
    /// `variables` independent uniform `[lo, hi)` columns after an identifier.
    IidUniform {
        variables: usize,
        lo: f64,
        hi: f64,
    },
}

impl GeneratorKind {
    pub fn column_count(&self) -> usize {
        match *self {
            GeneratorKind::Table1 => 11,
            GeneratorKind::IidUniform { variables, .. } => variables + 1,
        }
    }

    pub fn schema(&self) -> DatasetSchema {
        match *self {
            GeneratorKind::Table1 => DatasetSchema::table1(),
            GeneratorKind::IidUniform { variables, .. } => DatasetSchema::iid(variables),
        }
    }

    fn validate(&self) -> Result<()> {
        if let GeneratorKind::IidUniform { variables, lo, hi } = *self {
            if variables == 0 {
                return Err(Error::InvalidArgument("iid generator needs at least one variable".into()));
            }
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!("iid bounds must satisfy lo < hi, got [{lo}, {hi})")));
            }
        }
        Ok(())
    }
}

/// Seeded generator positioned on one stream.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    /// The stream that produces row `index`.
    pub fn for_row(seed: u64, index: u64) -> Self {
        Self::new(seed, index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.rng.get_stream()
    }

    /// Position within the stream, in 32-bit words consumed.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }
}

/// Uniform integer in `[lo, hi]`, both ends inclusive.
pub fn rand_between(lo: i64, hi: i64, rng: &mut RngState) -> Result<i64> {
    if lo > hi {
        return Err(Error::InvalidRange { lo, hi });
    }
    Ok(rng.rng.random_range(lo..=hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub a: u64,
    pub b: i64,
    pub c: i64,
    pub d: i64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub i: f64,
    pub j: f64,
    pub k: f64,
}

impl Record {
    /// Computes the derived columns from the three drawn integers.
    pub fn derive(index: u64, b: i64, c: i64, d: i64) -> Self {
        let (bf, cf, df) = (b as f64, c as f64, d as f64);
        let cot_c = 1.0 / cf.tan();
        Record {
            a: index,
            b,
            c,
            d,
            e: (cf.ln() / bf.ln() * 100.0).trunc(),
            f: (df.ln() / bf.ln() * 10000.0).round(),
            g: (cf.cos().abs() * 100.0).trunc(),
            h: (df.sin().abs() * 100.0).trunc(),
            i: (cot_c.abs() * 1000.0).round(),
            j: df.tan().abs(),
            k: (d / c) as f64,
        }
    }

    pub fn values(&self) -> [f64; 11] {
        [
            self.a as f64,
            self.b as f64,
            self.c as f64,
            self.d as f64,
            self.e,
            self.f,
            self.g,
            self.h,
            self.i,
            self.j,
            self.k,
        ]
    }
}

pub fn make_record(index: u64, rng: &mut RngState) -> Result<Record> {
    if index == 0 {
        return Err(Error::InvalidArgument("row indices start at 1".into()));
    }
    let b = rand_between(3, 8, rng)?;
    let c = rand_between(1, 10, rng)?;
    let d = rand_between(1, 100, rng)?;
    Ok(Record::derive(index, b, c, d))
}

/// Values of row `index` (1-based) for `kind` under `seed`.
pub fn row_values(kind: &GeneratorKind, seed: u64, index: u64, out: &mut Vec<f64>) -> Result<()> {
    let mut rng = RngState::for_row(seed, index);
    out.clear();
    match *kind {
        GeneratorKind::Table1 => out.extend_from_slice(&make_record(index, &mut rng)?.values()),
        GeneratorKind::IidUniform { variables, lo, hi } => {
            if index == 0 {
                return Err(Error::InvalidArgument("row indices start at 1".into()));
            }
            out.push(index as f64);
            out.extend((0..variables).map(|_| rng.uniform(lo, hi)));
        }
    }
    Ok(())
}

/// Appends one CSV line (with trailing LF) for row `index`.
pub fn write_row(kind: &GeneratorKind, seed: u64, index: u64, line: &mut Vec<u8>) -> Result<()> {
    let mut values = Vec::with_capacity(kind.column_count());
    row_values(kind, seed, index, &mut values)?;
    let integral = |col: usize| match kind {
        // J is the only non-integer Table1 column.
        GeneratorKind::Table1 => col != 9,
        GeneratorKind::IidUniform { .. } => col == 0,
    };
    for (col, v) in values.iter().enumerate() {
        if col > 0 {
            line.push(b',');
        }
        if integral(col) {
            write!(line, "{}", *v as i64)?;
        } else {
            write_real(line, *v)?;
        }
    }
    line.push(b'\n');
    Ok(())
}

/// Writes `v` with 17 significant digits, enough to round-trip any binary64.
pub fn write_real(out: &mut impl Write, v: f64) -> std::io::Result<()> {
    write!(out, "{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub rows_written: u64,
    pub bytes_written: u64,
    /// CRC-64/XZ of the whole file.
    pub checksum: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    pub header: bool,
    pub workers: usize,
    /// Rows formatted per work item.
    pub block_rows: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { header: false, workers: 1, block_rows: 16_384 }
    }
}

/// Writes `n_rows` generated rows to `out_path` as CSV.
pub fn generate_csv(
    n_rows: u64,
    kind: GeneratorKind,
    seed: u64,
    out_path: &Path,
    options: &GenerateOptions,
) -> Result<GenerationSummary> {
    if n_rows == 0 {
        return Err(Error::InvalidArgument("n_rows must be at least 1".into()));
    }
    kind.validate()?;
    let block_rows = options.block_rows.max(1);
    let file = File::create(out_path).map_err(|source| Error::Write { rows_written: 0, source })?;
    let mut out = BufWriter::with_capacity(1 << 20, file);
    let mut crc = Checksum::new();
    let mut bytes_written = 0u64;
    let mut rows_written = 0u64;

    if options.header {
        let line = format!("{}\n", kind.schema().header_line());
        out.write_all(line.as_bytes()).map_err(|source| Error::Write { rows_written, source })?;
        crc.update(line.as_bytes());
        bytes_written += line.len() as u64;
    }

    let blocks = n_rows.div_ceil(block_rows) as usize;
    let outcome = ordered_for_each(
        blocks,
        options.workers,
        options.workers * 4,
        |b| {
            let first = b as u64 * block_rows + 1;
            let last = (first + block_rows - 1).min(n_rows);
            let mut buf = Vec::with_capacity(((last - first + 1) * 64) as usize);
            for index in first..=last {
                write_row(&kind, seed, index, &mut buf)?;
            }
            Ok((last - first + 1, buf))
        },
        |_, (rows, buf)| {
            out.write_all(&buf).map_err(|source| Error::Write { rows_written, source })?;
            crc.update(&buf);
            bytes_written += buf.len() as u64;
            rows_written += rows;
            Ok(())
        },
    );
    if let Err((_, e)) = outcome {
        return Err(e);
    }
    out.flush().map_err(|source| Error::Write { rows_written, source })?;
    out.into_inner()
        .map_err(|e| Error::Write { rows_written, source: e.into_error() })?
        .sync_all()
        .map_err(|source| Error::Write { rows_written, source })?;
    Ok(GenerationSummary { rows_written, bytes_written, checksum: crc.finish() })
}
