//! Single-pass sufficient statistics: row count, column sums and the
//! cross-product matrix `XᵀX`, plus a centred co-moment accumulator used as
//! a numerically stable reference.
//!
//! Accumulation order is fixed: rows ascending, and within a row column
//! pairs `(j, k)` with `j <= k` in row-major order. Chunks are merged in
//! range order by [`crate::reduce::run_reduction`].

use std::ops::{AddAssign, Mul};
use std::path::Path;
use std::time::{Duration, Instant};

use crate::checksum::checksum;
use crate::error::{Error, Result};
use crate::ingest::CsvStream;
use crate::matrix::{packed_index, packed_len, SquareMatrix};
use crate::reduce::{run_reduction, PrecisionMode, Reduced, ReductionPlan, RowSource};
use crate::schema::{Chunk, DatasetSchema};

#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    schema: DatasetSchema,
    precision: PrecisionMode,
    n: u64,
    sums: Vec<f64>,
    /// Upper triangle of `XᵀX`, row-major.
    cross: Vec<f64>,
}

fn check_finite(chunk: &Chunk) -> Result<()> {
    for (i, row) in chunk.rows().enumerate() {
        if let Some((column, &value)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row: chunk.start_row() + i as u64, column, value });
        }
    }
    Ok(())
}

#[inline]
fn accumulate_rows<'a, T>(rows: impl Iterator<Item = &'a [T]>, sums: &mut [T], cross: &mut [T])
where
    T: Copy + AddAssign + Mul<Output = T> + 'a,
{
    let p = sums.len();
    for row in rows {
        let mut base = 0;
        for (j, &xj) in row.iter().enumerate() {
            sums[j] += xj;
            let tail = &row[j..];
            let out = &mut cross[base..base + tail.len()];
            for (acc, &xk) in out.iter_mut().zip(tail) {
                *acc += xj * xk;
            }
            base += p - j;
        }
    }
}

impl SuffStats {
    pub fn empty(schema: &DatasetSchema, precision: PrecisionMode) -> Self {
        let p = schema.column_count();
        Self { schema: schema.clone(), precision, n: 0, sums: vec![0.0; p], cross: vec![0.0; packed_len(p)] }
    }

    pub fn from_parts(
        schema: DatasetSchema,
        precision: PrecisionMode,
        n: u64,
        sums: Vec<f64>,
        cross_upper: Vec<f64>,
    ) -> Result<Self> {
        let p = schema.column_count();
        if sums.len() != p || cross_upper.len() != packed_len(p) {
            return Err(Error::SchemaMismatch(format!(
                "{} sums and {} cross products do not fit {p} columns",
                sums.len(),
                cross_upper.len()
            )));
        }
        Ok(Self { schema, precision, n, sums, cross: cross_upper })
    }

    /// Statistics of one chunk, accumulated in `precision`.
    pub fn accumulate_chunk(chunk: &Chunk, schema: &DatasetSchema, precision: PrecisionMode) -> Result<Self> {
        schema.ensure_columns(chunk.column_count())?;
        check_finite(chunk)?;
        let mut out = Self::empty(schema, precision);
        match precision {
            PrecisionMode::Binary64 => accumulate_rows(chunk.rows(), &mut out.sums, &mut out.cross),
            PrecisionMode::Binary32Diagnostic => {
                let mut acc = Binary32Accumulator::new(schema.column_count());
                acc.absorb(&to_f32(chunk));
                acc.store_into(&mut out);
            }
        }
        out.n = chunk.row_count() as u64;
        Ok(out)
    }

    /// Elementwise sum; `self` is the earlier range.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.schema != other.schema {
            return Err(Error::SchemaMismatch(format!(
                "cannot merge statistics over {} with {}",
                self.schema, other.schema
            )));
        }
        if self.precision != other.precision {
            return Err(Error::SchemaMismatch(format!(
                "cannot merge {} statistics with {}",
                self.precision, other.precision
            )));
        }
        let mode = self.precision;
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(&x, &y)| mode.add(x, y)).collect();
        Ok(Self {
            schema: self.schema.clone(),
            precision: mode,
            n: self.n + other.n,
            sums: add(&self.sums, &other.sums),
            cross: add(&self.cross, &other.cross),
        })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn precision(&self) -> PrecisionMode {
        self.precision
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn column_count(&self) -> usize {
        self.sums.len()
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn cross_upper(&self) -> &[f64] {
        &self.cross
    }

    /// Entry `(j, k)` of `XᵀX`.
    pub fn cross(&self, j: usize, k: usize) -> f64 {
        let (a, b) = if j <= k { (j, k) } else { (k, j) };
        self.cross[packed_index(self.column_count(), a, b)]
    }

    pub fn cross_matrix(&self) -> SquareMatrix {
        SquareMatrix::from_fn(self.column_count(), |j, k| self.cross(j, k))
    }

    /// Statistics restricted to the columns in `keep` (ascending).
    pub(crate) fn select(&self, keep: &[usize]) -> Self {
        let p = self.column_count();
        let mut cross = Vec::with_capacity(packed_len(keep.len()));
        for (a, &j) in keep.iter().enumerate() {
            for &k in &keep[a..] {
                cross.push(self.cross[packed_index(p, j, k)]);
            }
        }
        Self {
            schema: self.schema.select(keep),
            precision: self.precision,
            n: self.n,
            sums: keep.iter().map(|&j| self.sums[j]).collect(),
            cross,
        }
    }
}

fn to_f32(chunk: &Chunk) -> Vec<f32> {
    chunk.values().iter().map(|&v| v as f32).collect()
}

/// One running binary32 accumulator fed rows in order.
#[derive(Debug, Clone)]
struct Binary32Accumulator {
    n: u64,
    sums: Vec<f32>,
    cross: Vec<f32>,
}

impl Binary32Accumulator {
    fn new(p: usize) -> Self {
        Self { n: 0, sums: vec![0.0; p], cross: vec![0.0; packed_len(p)] }
    }

    fn absorb(&mut self, rows: &[f32]) {
        let p = self.sums.len();
        accumulate_rows(rows.chunks_exact(p), &mut self.sums, &mut self.cross);
        self.n += (rows.len() / p) as u64;
    }

    fn store_into(&self, out: &mut SuffStats) {
        out.n = self.n;
        out.sums = self.sums.iter().map(|&v| v as f64).collect();
        out.cross = self.cross.iter().map(|&v| v as f64).collect();
    }
}

enum Binary32Part {
    Rows(Vec<f32>),
    Running(Binary32Accumulator),
}

/// Accumulates sufficient statistics over every row of `source`.
///
/// In binary64 mode each range is accumulated independently and the
/// partials are merged in range order. The binary32 diagnostic mode instead
/// streams rows, in order, through a single binary32 accumulator, which is
/// how rounding error grows in one long naive pass; its result therefore
/// depends on neither worker count nor chunk size.
pub fn compute_suffstats<S: RowSource + ?Sized>(
    source: &S,
    schema: &DatasetSchema,
    plan: &ReductionPlan,
) -> Result<Reduced<SuffStats>> {
    schema.ensure_columns(source.column_count())?;
    match plan.precision {
        PrecisionMode::Binary64 => run_reduction(
            source,
            plan,
            |chunk| SuffStats::accumulate_chunk(chunk, schema, PrecisionMode::Binary64),
            |a, b| a.merge(&b).expect("partials share a schema"),
            SuffStats::empty(schema, PrecisionMode::Binary64),
        ),
        PrecisionMode::Binary32Diagnostic => {
            let reduced = run_reduction(
                source,
                plan,
                |chunk| {
                    check_finite(chunk)?;
                    Ok(Binary32Part::Rows(to_f32(chunk)))
                },
                |acc, part| match (acc, part) {
                    (Binary32Part::Running(mut acc), Binary32Part::Rows(rows)) => {
                        acc.absorb(&rows);
                        Binary32Part::Running(acc)
                    }
                    _ => unreachable!("the accumulator is always the left operand"),
                },
                Binary32Part::Running(Binary32Accumulator::new(schema.column_count())),
            )?;
            let Binary32Part::Running(acc) = reduced.value else { unreachable!() };
            let mut stats = SuffStats::empty(schema, PrecisionMode::Binary32Diagnostic);
            acc.store_into(&mut stats);
            Ok(Reduced {
                value: stats,
                ranges: reduced.ranges,
                wall: reduced.wall,
                read_time: reduced.read_time,
                compute_time: reduced.compute_time,
            })
        }
    }
}

/// Sufficient statistics over a CSV stream, one chunk at a time in file
/// order. Chunks are merged exactly as [`compute_suffstats`] merges ranges
/// of the same size, so both paths give identical bits.
pub fn compute_suffstats_csv(
    stream: &mut CsvStream,
    chunk_rows: usize,
    precision: PrecisionMode,
) -> Result<Reduced<SuffStats>> {
    let schema = stream.schema().clone();
    let started = Instant::now();
    let mut read_time = Duration::ZERO;
    let mut compute_time = Duration::ZERO;
    let mut ranges = 0;
    let mut acc = SuffStats::empty(&schema, precision);
    let mut running = Binary32Accumulator::new(schema.column_count());
    loop {
        let t0 = Instant::now();
        let Some(chunk) = stream.next_chunk(chunk_rows)? else {
            read_time += t0.elapsed();
            break;
        };
        let t1 = Instant::now();
        read_time += t1 - t0;
        match precision {
            PrecisionMode::Binary64 => {
                let part = SuffStats::accumulate_chunk(&chunk, &schema, precision)?;
                acc = acc.merge(&part)?;
            }
            PrecisionMode::Binary32Diagnostic => {
                check_finite(&chunk)?;
                running.absorb(&to_f32(&chunk));
            }
        }
        compute_time += t1.elapsed();
        ranges += 1;
    }
    if ranges == 0 {
        return Err(Error::Empty(format!("{} contains no data rows", stream.path().display())));
    }
    if precision == PrecisionMode::Binary32Diagnostic {
        running.store_into(&mut acc);
    }
    Ok(Reduced { value: acc, ranges, wall: started.elapsed(), read_time, compute_time })
}

/// Count, mean and centred cross-products `Σ(x-μ)(x-μ)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoMoments {
    schema: DatasetSchema,
    n: u64,
    mean: Vec<f64>,
    /// Upper triangle, row-major.
    m2: Vec<f64>,
}

impl CoMoments {
    pub fn empty(schema: &DatasetSchema) -> Self {
        let p = schema.column_count();
        Self { schema: schema.clone(), n: 0, mean: vec![0.0; p], m2: vec![0.0; packed_len(p)] }
    }

    /// Two-pass over the chunk: its mean first, then centred products.
    pub fn accumulate_chunk(chunk: &Chunk, schema: &DatasetSchema) -> Result<Self> {
        schema.ensure_columns(chunk.column_count())?;
        check_finite(chunk)?;
        let p = schema.column_count();
        let rows = chunk.row_count() as f64;
        let mut mean = vec![0.0; p];
        for row in chunk.rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= rows;
        }
        let mut m2 = vec![0.0; packed_len(p)];
        let mut centred = vec![0.0; p];
        let mut unused = vec![0.0; p];
        for row in chunk.rows() {
            for ((c, &x), &m) in centred.iter_mut().zip(row).zip(&mean) {
                *c = x - m;
            }
            accumulate_rows(std::iter::once(centred.as_slice()), &mut unused, &mut m2);
        }
        Ok(Self { schema: schema.clone(), n: chunk.row_count() as u64, mean, m2 })
    }

    /// Pairwise update: with `δ = μ_b - μ_a`,
    /// `μ = μ_a + δ n_b / n` and `M2 = M2_a + M2_b + δδᵀ n_a n_b / n`.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.schema != other.schema {
            return Err(Error::SchemaMismatch(format!(
                "cannot merge co-moments over {} with {}",
                self.schema, other.schema
            )));
        }
        if other.n == 0 {
            return Ok(self.clone());
        }
        if self.n == 0 {
            return Ok(other.clone());
        }
        let p = self.mean.len();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let mean = self.mean.iter().zip(&delta).map(|(a, d)| a + d * nb / n).collect();
        let w = na * nb / n;
        let mut m2 = Vec::with_capacity(self.m2.len());
        for j in 0..p {
            for k in j..p {
                let idx = packed_index(p, j, k);
                m2.push(self.m2[idx] + other.m2[idx] + delta[j] * delta[k] * w);
            }
        }
        Ok(Self { schema: self.schema.clone(), n: self.n + other.n, mean, m2 })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self, j: usize, k: usize) -> f64 {
        let (a, b) = if j <= k { (j, k) } else { (k, j) };
        self.m2[packed_index(self.mean.len(), a, b)]
    }

    pub fn m2_matrix(&self) -> SquareMatrix {
        SquareMatrix::from_fn(self.mean.len(), |j, k| self.m2(j, k))
    }

    /// `M2 / (n - ddof)`.
    pub fn covariance(&self, ddof: u8) -> Result<SquareMatrix> {
        if self.n <= ddof as u64 {
            return Err(Error::InvalidArgument(format!("covariance with ddof {ddof} needs more than {} rows", self.n)));
        }
        let denom = (self.n - ddof as u64) as f64;
        Ok(SquareMatrix::from_fn(self.mean.len(), |j, k| self.m2(j, k) / denom))
    }
}

pub fn compute_comoments<S: RowSource + ?Sized>(
    source: &S,
    schema: &DatasetSchema,
    plan: &ReductionPlan,
) -> Result<Reduced<CoMoments>> {
    schema.ensure_columns(source.column_count())?;
    run_reduction(
        source,
        plan,
        |chunk| CoMoments::accumulate_chunk(chunk, schema),
        |a, b| a.merge(&b).expect("partials share a schema"),
        CoMoments::empty(schema),
    )
}

pub const SIDECAR_MAGIC: [u8; 8] = *b"SSTATSUF";
pub const SIDECAR_VERSION: u32 = 1;
const WHAT: &str = "sufficient-statistics sidecar";

/// Encodes the sidecar file:
///
/// ```text
/// magic "SSTATSUF" | version u32 | precision u8 | 3 zero bytes
/// p u32 | p x (name length u32, UTF-8 name) | p x identifier flag u8
/// n u64 | p x sum f64 | p(p+1)/2 x upper-triangle XᵀX f64 (row-major)
/// CRC-64/XZ u64 of every preceding byte
/// ```
///
/// All integers and floats are little-endian.
pub fn encode_sidecar(ss: &SuffStats) -> Vec<u8> {
    let p = ss.column_count();
    let mut out = Vec::with_capacity(64 + 8 * (p + packed_len(p)));
    out.extend_from_slice(&SIDECAR_MAGIC);
    out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
    out.push(ss.precision.code());
    out.extend_from_slice(&[0; 3]);
    out.extend_from_slice(&(p as u32).to_le_bytes());
    for name in ss.schema.column_names() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out.extend((0..p).map(|j| ss.schema.is_identifier(j) as u8));
    out.extend_from_slice(&ss.n.to_le_bytes());
    for v in ss.sums.iter().chain(&ss.cross) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Truncated { what: WHAT });
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(Error::Truncated { what: WHAT })?)?;
        Ok(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }
}

pub fn decode_sidecar(bytes: &[u8]) -> Result<SuffStats> {
    let mut cur = Cursor { bytes };
    let magic: [u8; 8] = cur.array()?;
    if magic != SIDECAR_MAGIC {
        return Err(Error::BadMagic { what: WHAT, found: magic });
    }
    let version = cur.u32()?;
    if version != SIDECAR_VERSION {
        return Err(Error::UnsupportedVersion { what: WHAT, found: version });
    }
    let [code, r0, r1, r2] = cur.array::<4>()?;
    let corrupt = |reason: String| Error::Corrupt { what: WHAT, reason };
    let precision = PrecisionMode::from_code(code).ok_or_else(|| corrupt(format!("precision code {code}")))?;
    if [r0, r1, r2] != [0; 3] {
        return Err(corrupt("reserved bytes are not zero".into()));
    }
    let p = cur.u32()? as usize;
    let mut names = Vec::with_capacity(p.min(1 << 16));
    for _ in 0..p {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?).map_err(|e| corrupt(format!("column name: {e}")))?;
        names.push(name.to_string());
    }
    let flags = cur.take(p)?;
    let ids = flags.iter().enumerate().filter(|(_, &f)| f == 1).map(|(i, _)| i);
    if flags.iter().any(|&f| f > 1) {
        return Err(corrupt("identifier flag is neither 0 nor 1".into()));
    }
    let schema = DatasetSchema::new(names, ids)?;
    let n = cur.u64()?;
    let sums = cur.f64s(p)?;
    let cross = cur.f64s(packed_len(p))?;
    let body_len = bytes.len() - cur.bytes.len();
    let stored = cur.u64()?;
    if !cur.bytes.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", cur.bytes.len())));
    }
    let actual = checksum(&bytes[..body_len]);
    if stored != actual {
        return Err(corrupt(format!("checksum {stored:016x} != computed {actual:016x}")));
    }
    SuffStats::from_parts(schema, precision, n, sums, cross)
}

pub fn save_suffstats(ss: &SuffStats, path: &Path) -> Result<()> {
    std::fs::write(path, encode_sidecar(ss))?;
    Ok(())
}

pub fn load_suffstats(path: &Path) -> Result<SuffStats> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_sidecar(&bytes)
}

/// True when `bytes` start with the sidecar magic.
pub fn is_sidecar(bytes: &[u8]) -> bool {
    bytes.starts_with(&SIDECAR_MAGIC)
}
