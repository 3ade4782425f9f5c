//! Disjoint row partitioning and a worker pool whose partial results are
//! merged in ascending range order, so the result does not depend on the
//! number of workers or on which worker finishes first.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Chunk;

/// Default rows per chunk.
pub const DEFAULT_CHUNK_ROWS: usize = 1 << 20;

/// Arithmetic used while accumulating partial sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionMode {
    #[default]
    Binary64,
    /// Accumulate in `f32` through one running accumulator, to expose
    /// rounding and cancellation at modest N.
    #[serde(rename = "binary32")]
    Binary32Diagnostic,
}

impl PrecisionMode {
    /// Rounds a partial to the accumulation precision.
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            PrecisionMode::Binary64 => x,
            PrecisionMode::Binary32Diagnostic => x as f32 as f64,
        }
    }

    /// `a + b` evaluated in the accumulation precision.
    #[inline]
    pub fn add(self, a: f64, b: f64) -> f64 {
        match self {
            PrecisionMode::Binary64 => a + b,
            PrecisionMode::Binary32Diagnostic => (a as f32 + b as f32) as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PrecisionMode::Binary64 => "binary64",
            PrecisionMode::Binary32Diagnostic => "binary32",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            PrecisionMode::Binary64 => 0,
            PrecisionMode::Binary32Diagnostic => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PrecisionMode::Binary64),
            1 => Some(PrecisionMode::Binary32Diagnostic),
            _ => None,
        }
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary64" | "f64" => Ok(PrecisionMode::Binary64),
            "binary32" | "f32" => Ok(PrecisionMode::Binary32Diagnostic),
            _ => Err(Error::InvalidArgument(format!("unknown precision {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRange {
    pub start_row: u64,
    pub row_count: u64,
}

impl RowRange {
    pub fn end_row(&self) -> u64 {
        self.start_row + self.row_count
    }
}

/// Ordered, disjoint, contiguous ranges whose union is `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    ranges: Vec<RowRange>,
}

impl Partition {
    pub fn from_ranges(ranges: Vec<RowRange>) -> Result<Self> {
        let mut next = 0u64;
        for (i, r) in ranges.iter().enumerate() {
            if r.row_count == 0 {
                return Err(Error::InvalidArgument(format!("range {i} is empty")));
            }
            if r.start_row != next {
                return Err(Error::InvalidArgument(format!(
                    "range {i} starts at {} but previous coverage ends at {next}",
                    r.start_row
                )));
            }
            next = r.end_row();
        }
        if ranges.is_empty() {
            return Err(Error::InvalidArgument("partition has no ranges".into()));
        }
        Ok(Self { ranges })
    }

    pub fn ranges(&self) -> &[RowRange] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn total_rows(&self) -> u64 {
        self.ranges.last().map_or(0, RowRange::end_row)
    }
}

/// Splits `[0, n_rows)` into `ceil(n_rows / chunk_rows)` ranges; only the last may be short.
pub fn plan_partitions(n_rows: u64, chunk_rows: usize) -> Result<Partition> {
    if chunk_rows == 0 {
        return Err(Error::InvalidArgument("chunk_rows must be at least 1".into()));
    }
    if n_rows == 0 {
        return Err(Error::Empty("cannot partition zero rows".into()));
    }
    let step = chunk_rows as u64;
    let ranges = (0..n_rows.div_ceil(step))
        .map(|i| {
            let start_row = i * step;
            RowRange { start_row, row_count: step.min(n_rows - start_row) }
        })
        .collect();
    Ok(Partition { ranges })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MergeOrder {
    /// Partials are folded into the identity in ascending range index.
    #[default]
    ByRangeIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionPlan {
    pub partition: Partition,
    pub worker_count: usize,
    pub merge_order: MergeOrder,
    pub precision: PrecisionMode,
}

impl ReductionPlan {
    pub fn new(partition: Partition, worker_count: usize, precision: PrecisionMode) -> Result<Self> {
        if worker_count == 0 {
            return Err(Error::InvalidArgument("worker_count must be at least 1".into()));
        }
        Ok(Self { partition, worker_count, merge_order: MergeOrder::ByRangeIndex, precision })
    }

    /// Partition of `n_rows` into `chunk_rows`-row ranges.
    pub fn for_rows(n_rows: u64, chunk_rows: usize, worker_count: usize, precision: PrecisionMode) -> Result<Self> {
        Self::new(plan_partitions(n_rows, chunk_rows)?, worker_count, precision)
    }
}

/// Random-access row storage that workers can read concurrently.
pub trait RowSource: Sync {
    fn row_count(&self) -> u64;
    fn column_count(&self) -> usize;
    fn read_rows(&self, start_row: u64, count: usize) -> Result<Chunk>;
}

/// Rows held in memory; used for tests, benches and small derived datasets.
#[derive(Debug, Clone)]
pub struct MemorySource {
    column_count: usize,
    values: Vec<f64>,
}

impl MemorySource {
    pub fn new(column_count: usize, values: Vec<f64>) -> Result<Self> {
        let chunk = Chunk::new(0, column_count, values)?;
        Ok(Self { column_count, values: chunk.into_values() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl RowSource for MemorySource {
    fn row_count(&self) -> u64 {
        (self.values.len() / self.column_count) as u64
    }

    fn column_count(&self) -> usize {
        self.column_count
    }

    fn read_rows(&self, start_row: u64, count: usize) -> Result<Chunk> {
        let available = self.row_count();
        if count == 0 || start_row.checked_add(count as u64).is_none_or(|end| end > available) {
            return Err(Error::OutOfRange { start: start_row, count: count as u64, available });
        }
        let p = self.column_count;
        let lo = start_row as usize * p;
        Chunk::new(start_row, p, self.values[lo..lo + count * p].to_vec())
    }
}

/// Result of a reduction plus where the time went.
#[derive(Debug, Clone)]
pub struct Reduced<T> {
    pub value: T,
    pub ranges: usize,
    pub wall: Duration,
    /// Summed over workers.
    pub read_time: Duration,
    /// Summed over workers.
    pub compute_time: Duration,
}

/// Runs `per_chunk` over every range of the plan on `plan.worker_count`
/// threads. Workers pull ranges from a shared counter; results are merged
/// into `identity` strictly in range order.
pub fn run_reduction<S, T, F, M>(
    source: &S,
    plan: &ReductionPlan,
    per_chunk: F,
    mut merge: M,
    identity: T,
) -> Result<Reduced<T>>
where
    S: RowSource + ?Sized,
    T: Send,
    F: Fn(&Chunk) -> Result<T> + Sync,
    M: FnMut(T, T) -> T,
{
    let coverage = plan.partition.total_rows();
    if coverage != source.row_count() {
        return Err(Error::InvalidArgument(format!(
            "partition covers {coverage} rows but the source has {}",
            source.row_count()
        )));
    }
    let ranges = plan.partition.ranges();
    let read_ns = AtomicU64::new(0);
    let compute_ns = AtomicU64::new(0);
    let started = Instant::now();

    let mut acc = Some(identity);
    let outcome = ordered_for_each(
        ranges.len(),
        plan.worker_count,
        plan.worker_count * 2,
        |i| {
            let range = ranges[i];
            let t0 = Instant::now();
            let chunk = source.read_rows(range.start_row, range.row_count as usize)?;
            let t1 = Instant::now();
            let partial = per_chunk(&chunk)?;
            read_ns.fetch_add((t1 - t0).as_nanos() as u64, Ordering::Relaxed);
            compute_ns.fetch_add(t1.elapsed().as_nanos() as u64, Ordering::Relaxed);
            Ok(partial)
        },
        |_, partial| {
            let prev = acc.take().expect("accumulator present");
            acc = Some(merge(prev, partial));
            Ok(())
        },
    );
    if let Err((index, source)) = outcome {
        let range = ranges[index];
        return Err(Error::ChunkFailed {
            index,
            start_row: range.start_row,
            row_count: range.row_count,
            source: Box::new(source),
        });
    }
    Ok(Reduced {
        value: acc.expect("accumulator present"),
        ranges: ranges.len(),
        wall: started.elapsed(),
        read_time: Duration::from_nanos(read_ns.into_inner()),
        compute_time: Duration::from_nanos(compute_ns.into_inner()),
    })
}

/// Produces items `0..items` on up to `workers` threads and hands them to
/// `consume` in index order. At most `window` items run ahead of the
/// consumer. The first failure stops the pool and is returned with its index.
pub(crate) fn ordered_for_each<T, P, C>(
    items: usize,
    workers: usize,
    window: usize,
    produce: P,
    mut consume: C,
) -> std::result::Result<(), (usize, Error)>
where
    T: Send,
    P: Fn(usize) -> Result<T> + Sync,
    C: FnMut(usize, T) -> Result<()>,
{
    if items == 0 {
        return Ok(());
    }
    let workers = workers.clamp(1, items);
    let window = window.max(1);

    if workers == 1 {
        for i in 0..items {
            let item = produce(i).map_err(|e| (i, e))?;
            consume(i, item).map_err(|e| (i, e))?;
        }
        return Ok(());
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let consumed = Mutex::new(0usize);
    let advanced = Condvar::new();

    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<T>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, consumed, advanced, produce) = (&next, &abort, &consumed, &advanced, &produce);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items {
                    break;
                }
                {
                    let mut done = consumed.lock().unwrap();
                    while i >= *done + window && !abort.load(Ordering::Relaxed) {
                        done = advanced.wait(done).unwrap();
                    }
                }
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let out = produce(i);
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let stop = |err: (usize, Error)| {
            abort.store(true, Ordering::Relaxed);
            let _guard = consumed.lock().unwrap();
            advanced.notify_all();
            Err(err)
        };

        let mut pending = BTreeMap::new();
        let mut expected = 0usize;
        for (i, out) in rx {
            match out {
                Ok(item) => {
                    pending.insert(i, item);
                }
                Err(e) => return stop((i, e)),
            }
            while let Some(item) = pending.remove(&expected) {
                if let Err(e) = consume(expected, item) {
                    return stop((expected, e));
                }
                expected += 1;
                *consumed.lock().unwrap() = expected;
                advanced.notify_all();
            }
        }
        debug_assert_eq!(expected, items);
        Ok(())
    })
}

/// Sum of one column, in the plan's precision and, when every value is an
/// integer of magnitude at most 2^63, exactly in 128-bit integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSumResult {
    pub column: usize,
    pub rows: u64,
    pub precision: PrecisionMode,
    pub float_sum: f64,
    pub exact_sum: Option<i128>,
    /// Why `exact_sum` is absent.
    pub exact_note: Option<String>,
    pub float_path: FloatPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatPath {
    /// `float_sum` equals `exact_sum` exactly.
    Exact,
    /// `float_sum` deviates from `exact_sum`.
    Approximate,
    /// No exact sum to compare against.
    Unverified,
}

impl ColumnSumResult {
    /// Compares the exact sum against `expected`; `None` when no exact sum exists.
    pub fn matches(&self, expected: i128) -> Option<bool> {
        self.exact_sum.map(|s| s == expected)
    }
}

/// `1 + 2 + ... + n`, the identifier column's known total.
pub fn triangular(n: u64) -> i128 {
    let n = n as i128;
    n * (n + 1) / 2
}

const EXACT_LIMIT: f64 = 9_223_372_036_854_775_808.0; // 2^63

#[derive(Debug, Clone)]
struct ColumnPartial {
    float: f64,
    rows: u64,
    /// Exact sum, or the first row holding a value that is not an integer within ±2^63.
    exact: std::result::Result<i128, (u64, f64)>,
    /// Binary32 mode: the chunk's values, folded into the running sum at merge time.
    pending: Vec<f32>,
}

fn sum_chunk_column(chunk: &Chunk, column: usize, precision: PrecisionMode) -> ColumnPartial {
    let mut exact = Ok(0i128);
    let mut float = 0.0f64;
    let mut pending = Vec::new();
    for (i, v) in chunk.column(column).enumerate() {
        match precision {
            PrecisionMode::Binary64 => float += v,
            PrecisionMode::Binary32Diagnostic => pending.push(v as f32),
        }
        accumulate_exact(&mut exact, v, chunk.start_row() + i as u64);
    }
    ColumnPartial { float, rows: chunk.row_count() as u64, exact, pending }
}

#[inline]
fn accumulate_exact(acc: &mut std::result::Result<i128, (u64, f64)>, v: f64, row: u64) {
    if let Ok(sum) = acc {
        if v.fract() == 0.0 && v.abs() <= EXACT_LIMIT {
            *sum += v as i128;
        } else {
            *acc = Err((row, v));
        }
    }
}

/// Sums `column` over every row of `source` following `plan`.
pub fn column_sum<S: RowSource + ?Sized>(
    source: &S,
    column: usize,
    plan: &ReductionPlan,
) -> Result<Reduced<ColumnSumResult>> {
    let p = source.column_count();
    if column >= p {
        return Err(Error::InvalidArgument(format!("column {column} out of range for {p} columns")));
    }
    let precision = plan.precision;
    let identity = ColumnPartial { float: 0.0, rows: 0, exact: Ok(0), pending: Vec::new() };
    let reduced = run_reduction(
        source,
        plan,
        |chunk| Ok(sum_chunk_column(chunk, column, precision)),
        |a, b| ColumnPartial {
            float: match precision {
                PrecisionMode::Binary64 => a.float + b.float,
                PrecisionMode::Binary32Diagnostic => {
                    let mut s = a.float as f32;
                    for v in b.pending {
                        s += v;
                    }
                    s as f64
                }
            },
            rows: a.rows + b.rows,
            exact: match (a.exact, b.exact) {
                (Ok(x), Ok(y)) => Ok(x + y),
                (Err(e), _) | (Ok(_), Err(e)) => Err(e),
            },
            pending: Vec::new(),
        },
        identity,
    )?;
    let partial = reduced.value;
    Ok(Reduced {
        value: finish_column_sum(column, precision, partial),
        ranges: reduced.ranges,
        wall: reduced.wall,
        read_time: reduced.read_time,
        compute_time: reduced.compute_time,
    })
}

fn finish_column_sum(column: usize, precision: PrecisionMode, p: ColumnPartial) -> ColumnSumResult {
    let (exact_sum, exact_note) = match p.exact {
        Ok(s) => (Some(s), None),
        Err((row, v)) => (None, Some(format!("row {row} holds {v:?}, which is not an integer within ±2^63"))),
    };
    let float_path = match exact_sum {
        None => FloatPath::Unverified,
        Some(s) if p.float.fract() == 0.0 && p.float.abs() < 1.7e38 && p.float as i128 == s => FloatPath::Exact,
        Some(_) => FloatPath::Approximate,
    };
    ColumnSumResult { column, rows: p.rows, precision, float_sum: p.float, exact_sum, exact_note, float_path }
}

/// Worker count from the environment's available parallelism.
pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}
