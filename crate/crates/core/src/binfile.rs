//! Fixed-width binary dataset format.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "SSTATBIN"
//!      8     4  format version, u32 LE (= 1)
//!     12     8  row count n, u64 LE
//!     20     4  column count p, u32 LE
//!     24    40  reserved, all zero
//!     64  n*p*8 values, binary64 LE, row-major
//! ```
//!
//! The payload checksum is CRC-64/XZ over the value bytes (offset 64 to end).
//! Header bytes are covered by the structural checks instead: magic, version,
//! zeroed reserved area, counts against the source, and the size law
//! `len = 64 + n*p*8`.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checksum::Checksum;
use crate::error::{Error, Result};
use crate::ingest::{open_csv_stream, parse_line, CsvOptions};
use crate::reduce::{RowSource, DEFAULT_CHUNK_ROWS};
use crate::schema::{Chunk, DatasetSchema};

pub const MAGIC: [u8; 8] = *b"SSTATBIN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryHeader {
    pub row_count: u64,
    pub column_count: u32,
}

impl BinaryHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut out = [0u8; HEADER_LEN as usize];
        out[0..8].copy_from_slice(&MAGIC);
        out[8..12].copy_from_slice(&VERSION.to_le_bytes());
        out[12..20].copy_from_slice(&self.row_count.to_le_bytes());
        out[20..24].copy_from_slice(&self.column_count.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        let magic: [u8; 8] = bytes[0..8].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { what: "binary dataset", found: magic });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion { what: "binary dataset", found: version });
        }
        if bytes[24..].iter().any(|&b| b != 0) {
            return Err(Error::Corrupt { what: "binary dataset header", reason: "reserved bytes are not zero".into() });
        }
        let row_count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let column_count = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
        if column_count == 0 {
            return Err(Error::Corrupt { what: "binary dataset header", reason: "zero columns".into() });
        }
        Ok(Self { row_count, column_count })
    }

    /// Total file size implied by the header; `None` on overflow.
    pub fn file_len(&self) -> Option<u64> {
        self.row_count.checked_mul(self.column_count as u64)?.checked_mul(8)?.checked_add(HEADER_LEN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionSummary {
    pub rows: u64,
    pub columns: u32,
    pub bytes: u64,
    /// CRC-64/XZ of the value payload.
    pub checksum: u64,
    /// Lines dropped under a skip-and-count policy.
    pub skipped_rows: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvertOptions {
    pub csv: CsvOptions,
    pub chunk_rows: usize,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        Self { csv: CsvOptions::default(), chunk_rows: DEFAULT_CHUNK_ROWS }
    }
}

fn encode_values(values: &[f64], out: &mut Vec<u8>) {
    out.clear();
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Streams `csv_path` into a binary dataset at `bin_path`, one chunk at a time.
pub fn convert_csv_to_binary(
    csv_path: &Path,
    bin_path: &Path,
    schema: &DatasetSchema,
    options: &ConvertOptions,
) -> Result<ConversionSummary> {
    let mut stream = open_csv_stream(csv_path, schema, options.csv)?;
    let p = schema.column_count();
    let column_count =
        u32::try_from(p).map_err(|_| Error::InvalidArgument(format!("{p} columns exceed the format limit")))?;

    let write_err = |rows_written: u64| move |source: io::Error| Error::Write { rows_written, source };
    let file = File::create(bin_path).map_err(write_err(0))?;
    let mut out = BufWriter::with_capacity(1 << 22, file);
    let placeholder = BinaryHeader { row_count: 0, column_count };
    out.write_all(&placeholder.encode()).map_err(write_err(0))?;

    let mut crc = Checksum::new();
    let mut rows = 0u64;
    let mut bytes = Vec::new();
    let result = (|| -> Result<()> {
        while let Some(chunk) = stream.next_chunk(options.chunk_rows)? {
            encode_values(chunk.values(), &mut bytes);
            out.write_all(&bytes).map_err(write_err(rows))?;
            crc.update(&bytes);
            rows += chunk.row_count() as u64;
        }
        Ok(())
    })();
    let finish = result.and_then(|()| {
        if rows == 0 {
            return Err(Error::Empty(format!("{} contains no data rows", csv_path.display())));
        }
        let mut file = out.into_inner().map_err(|e| Error::Write { rows_written: rows, source: e.into_error() })?;
        let header = BinaryHeader { row_count: rows, column_count };
        file.seek(SeekFrom::Start(0)).map_err(write_err(rows))?;
        file.write_all(&header.encode()).map_err(write_err(rows))?;
        file.sync_all().map_err(write_err(rows))?;
        Ok(header)
    });
    match finish {
        Ok(header) => Ok(ConversionSummary {
            rows,
            columns: column_count,
            bytes: header.file_len().expect("size fits"),
            checksum: crc.finish(),
            skipped_rows: stream.skipped_rows(),
        }),
        Err(e) => {
            let _ = std::fs::remove_file(bin_path);
            Err(e)
        }
    }
}

/// Read-only handle on a binary dataset whose header and size were checked on open.
#[derive(Debug)]
pub struct BinaryDataset {
    path: PathBuf,
    file: File,
    header: BinaryHeader,
}

impl BinaryDataset {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Unreadable { path: path.to_path_buf(), reason: e.to_string() },
        })?;
        let len = file.metadata()?.len();
        let mut raw = [0u8; HEADER_LEN as usize];
        if len < HEADER_LEN {
            return Err(Error::SizeMismatch { what: "binary dataset", expected: HEADER_LEN, found: len });
        }
        file.read_exact(&mut raw)?;
        let header = BinaryHeader::decode(&raw)?;
        let expected = header.file_len().ok_or_else(|| Error::Corrupt {
            what: "binary dataset header",
            reason: "row and column counts overflow".into(),
        })?;
        if expected != len {
            return Err(Error::SizeMismatch { what: "binary dataset", expected, found: len });
        }
        Ok(Self { path: path.to_path_buf(), file, header })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> BinaryHeader {
        self.header
    }

    /// CRC-64/XZ of the value payload.
    pub fn payload_checksum(&self) -> Result<u64> {
        payload_checksum(&self.path)
    }
}

impl RowSource for BinaryDataset {
    fn row_count(&self) -> u64 {
        self.header.row_count
    }

    fn column_count(&self) -> usize {
        self.header.column_count as usize
    }

    fn read_rows(&self, start_row: u64, count: usize) -> Result<Chunk> {
        let available = self.header.row_count;
        if count == 0 || start_row.checked_add(count as u64).is_none_or(|end| end > available) {
            return Err(Error::OutOfRange { start: start_row, count: count as u64, available });
        }
        let p = self.column_count();
        let mut values = vec![0f64; count * p];
        let offset = HEADER_LEN + start_row * p as u64 * 8;
        read_exact_at(&self.file, bytemuck::cast_slice_mut(&mut values), offset)?;
        if cfg!(target_endian = "big") {
            for v in &mut values {
                *v = f64::from_bits(u64::from_le(v.to_bits()));
            }
        }
        Chunk::new(start_row, p, values)
    }
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset) {
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Random-access read of `count` rows starting at `start_row`.
pub fn read_rows(bin_path: &Path, start_row: u64, count: usize) -> Result<Chunk> {
    BinaryDataset::open(bin_path)?.read_rows(start_row, count)
}

/// CRC-64/XZ over everything after the header, whatever the file's state.
pub fn payload_checksum(path: &Path) -> Result<u64> {
    let mut file = File::open(path)?;
    file.seek(SeekFrom::Start(HEADER_LEN))?;
    let mut crc = Checksum::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        crc.update(&buf[..n]);
    }
    Ok(crc.finish())
}

/// Rows sampled by validation: first, middle (`n / 2`) and last, plus
/// evenly spaced rows up to `spot_count` in total.
pub fn spot_rows(n: u64, spot_count: usize) -> Vec<u64> {
    if n == 0 {
        return Vec::new();
    }
    let mut rows = vec![0, n / 2, n - 1];
    if spot_count >= 2 {
        let k = (spot_count - 1) as u128;
        rows.extend((0..=k).map(|i| (i * (n - 1) as u128 / k) as u64));
    }
    rows.sort_unstable();
    rows.dedup();
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub row: u64,
    pub matches: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub header_ok: bool,
    pub size_ok: bool,
    pub expected_size: Option<u64>,
    pub actual_size: u64,
    pub bin_rows: Option<u64>,
    pub csv_rows: u64,
    pub rows_ok: bool,
    pub bin_columns: Option<u32>,
    pub csv_columns: Option<usize>,
    pub columns_ok: bool,
    pub rows_checked: Vec<SpotCheck>,
    pub checksum_ok: Option<bool>,
    pub expected_checksum: Option<u64>,
    pub actual_checksum: Option<u64>,
    pub verdict: Verdict,
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidateOptions {
    pub spot_count: usize,
    pub with_checksum: bool,
    pub csv: CsvOptions,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { spot_count: 3, with_checksum: false, csv: CsvOptions::default() }
    }
}

/// Checks a converted file against its CSV source: header and size law,
/// row and column counts, sampled rows compared bit for bit and, optionally,
/// the payload checksum against a re-encoding of the CSV. Problems are
/// recorded in the report rather than returned as errors.
pub fn validate_binary(bin_path: &Path, csv_path: &Path, options: &ValidateOptions) -> ValidationReport {
    let mut failures = Vec::new();

    let actual_size = std::fs::metadata(bin_path).map(|m| m.len()).unwrap_or_else(|e| {
        failures.push(format!("cannot stat {}: {e}", bin_path.display()));
        0
    });
    let header = read_header(bin_path);
    let header_ok = header.is_ok();
    let header = header.map_err(|e| failures.push(format!("header: {e}"))).ok();
    let expected_size = header.and_then(|h| h.file_len());
    let size_ok = expected_size == Some(actual_size);
    if header.is_some() && !size_ok {
        failures.push(format!(
            "file size {actual_size} differs from the {} bytes implied by the header",
            expected_size.map_or("(overflowing)".to_string(), |s| s.to_string())
        ));
    }

    let bin_rows = header.map(|h| h.row_count);
    let targets = bin_rows.map(|n| spot_rows(n, options.spot_count)).unwrap_or_default();
    let scan = scan_csv(csv_path, options, header.map(|h| h.column_count as usize), &targets);
    let scan = match scan {
        Ok(s) => s,
        Err(e) => {
            failures.push(format!("cannot read {}: {e}", csv_path.display()));
            CsvScan::default()
        }
    };
    if let Some(e) = &scan.parse_error {
        failures.push(format!("CSV source: {e}"));
    }

    let rows_ok = bin_rows == Some(scan.rows);
    if !rows_ok {
        failures.push(format!(
            "row count: binary {}, CSV {}",
            bin_rows.map_or("unknown".into(), |n| n.to_string()),
            scan.rows
        ));
    }
    let bin_columns = header.map(|h| h.column_count);
    let columns_ok = match (bin_columns, scan.columns) {
        (Some(b), Some(c)) => b as usize == c,
        _ => false,
    };
    if !columns_ok {
        failures.push(format!("column count: binary {bin_columns:?}, CSV {:?}", scan.columns));
    }

    let dataset = if header_ok && size_ok { BinaryDataset::open(bin_path).ok() } else { None };
    let mut rows_checked = Vec::with_capacity(targets.len());
    for &row in &targets {
        let bin_row = dataset.as_ref().and_then(|d| d.read_rows(row, 1).ok());
        let matches = match (bin_row, scan.sampled.get(&row)) {
            (Some(b), Some(Some(c))) => {
                b.values().len() == c.len() && b.values().iter().zip(c).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        };
        if !matches {
            failures.push(format!("row {row} differs from the CSV source"));
        }
        rows_checked.push(SpotCheck { row, matches });
    }

    let (checksum_ok, expected_checksum, actual_checksum) = if options.with_checksum {
        let actual = payload_checksum(bin_path).map_err(|e| failures.push(format!("checksum: {e}"))).ok();
        let expected = scan.checksum;
        let ok = actual.is_some() && actual == expected;
        if !ok {
            failures.push(format!(
                "payload checksum {} differs from re-encoded CSV {}",
                actual.map_or("?".into(), |c| format!("{c:016x}")),
                expected.map_or("?".into(), |c| format!("{c:016x}"))
            ));
        }
        (Some(ok), expected, actual)
    } else {
        (None, None, None)
    };

    let verdict = if failures.is_empty() { Verdict::Pass } else { Verdict::Fail };
    ValidationReport {
        header_ok,
        size_ok,
        expected_size,
        actual_size,
        bin_rows,
        csv_rows: scan.rows,
        rows_ok,
        bin_columns,
        csv_columns: scan.columns,
        columns_ok,
        rows_checked,
        checksum_ok,
        expected_checksum,
        actual_checksum,
        verdict,
        failures,
    }
}

fn read_header(path: &Path) -> Result<BinaryHeader> {
    let mut file = File::open(path)?;
    let mut raw = [0u8; HEADER_LEN as usize];
    file.read_exact(&mut raw).map_err(|_| Error::SizeMismatch {
        what: "binary dataset header",
        expected: HEADER_LEN,
        found: file.metadata().map(|m| m.len()).unwrap_or(0),
    })?;
    BinaryHeader::decode(&raw)
}

#[derive(Debug, Default)]
struct CsvScan {
    rows: u64,
    columns: Option<usize>,
    sampled: BTreeMap<u64, Option<Vec<f64>>>,
    checksum: Option<u64>,
    parse_error: Option<String>,
}

/// One pass over the CSV: counts rows, parses the sampled ones and, when
/// asked, re-encodes every row to checksum what a conversion would produce.
fn scan_csv(
    csv_path: &Path,
    options: &ValidateOptions,
    bin_columns: Option<usize>,
    targets: &[u64],
) -> Result<CsvScan> {
    let mut reader = BufReader::with_capacity(1 << 20, File::open(csv_path)?);
    let mut scan = CsvScan::default();
    let mut crc = options.with_checksum.then(Checksum::new);
    let mut pending = Vec::with_capacity(1 << 16);
    let mut line = Vec::new();
    let mut values = Vec::new();
    let mut skip_header = options.csv.has_header;
    let mut next_target = targets.iter().copied().peekable();

    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            break;
        }
        if line.last() == Some(&b'\n') {
            line.pop();
            if line.last() == Some(&b'\r') {
                line.pop();
            }
        }
        if std::mem::take(&mut skip_header) {
            continue;
        }
        let row = scan.rows;
        let fields = *scan.columns.get_or_insert_with(|| line.iter().filter(|&&b| b == b',').count() + 1);
        let p = bin_columns.unwrap_or(fields);
        let wanted = next_target.peek() == Some(&row);
        if wanted || crc.is_some() {
            values.clear();
            match parse_line(&line, p, row + 1, &mut values) {
                Ok(()) => {
                    if let Some(c) = crc.as_mut() {
                        for v in &values {
                            pending.extend_from_slice(&v.to_le_bytes());
                        }
                        if pending.len() >= 1 << 16 {
                            c.update(&pending);
                            pending.clear();
                        }
                    }
                    if wanted {
                        scan.sampled.insert(row, Some(values.clone()));
                    }
                }
                Err(e) => {
                    if wanted {
                        scan.sampled.insert(row, None);
                    }
                    scan.parse_error.get_or_insert_with(|| e.to_string());
                }
            }
            if wanted {
                next_target.next();
            }
        }
        scan.rows += 1;
    }
    if let Some(mut c) = crc {
        c.update(&pending);
        scan.checksum = Some(c.finish());
    }
    Ok(scan)
}

/// Flips bits of one byte in place; fault-injection helper for validation tests.
pub fn corrupt_byte(path: &Path, offset: u64, mask: u8) -> Result<()> {
    let mut file = OpenOptions::new().read(true).write(true).open(path)?;
    let mut b = [0u8; 1];
    file.seek(SeekFrom::Start(offset))?;
    file.read_exact(&mut b)?;
    b[0] ^= mask;
    file.seek(SeekFrom::Start(offset))?;
    file.write_all(&b)?;
    file.sync_all()?;
    Ok(())
}
