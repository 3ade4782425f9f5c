//! `sstat` command implementations. Each command returns a [`RunReport`]
//! plus a short text summary; `main` maps the outcome to an exit status.

pub mod report;

use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sstat_core::analysis::AnalysisResult;
use sstat_core::binfile::{self, ConvertOptions, ValidateOptions, ValidationReport};
use sstat_core::reduce::{default_workers, triangular};
use sstat_core::suffstats::{is_sidecar, SIDECAR_MAGIC};
use sstat_core::*;

use report::{matrix, num, nums, secs, suffstats_json, RunReport, Stage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Bad invocation detected after argument parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Parser)]
#[command(name = "sstat", version, about = "Streaming sufficient statistics, covariance and PCA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Write the JSON run report to this file.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    /// Print the JSON report on stdout instead of the text summary.
    #[arg(long, global = true)]
    pub json: bool,

    /// Worker threads [default: available parallelism].
    #[arg(long, global = true, env = "SSTAT_WORKERS", value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,

    /// Rows per chunk.
    #[arg(long, global = true, default_value_t = DEFAULT_CHUNK_ROWS as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub chunk_rows: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Table1,
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Binary64,
    Binary32,
}

impl From<PrecisionArg> for PrecisionMode {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Binary64 => PrecisionMode::Binary64,
            PrecisionArg::Binary32 => PrecisionMode::Binary32Diagnostic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Correlation,
    Covariance,
}

impl From<BasisArg> for Basis {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Correlation => Basis::Correlation,
            BasisArg::Covariance => Basis::Covariance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckArg {
    /// Compare against n(n+1)/2 when the column is an identifier.
    Auto,
    Triangular,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    #[arg(long, value_enum, default_value = "table1")]
    pub kind: KindArg,
    /// Number of uniform variables for `--kind iid`.
    #[arg(long, default_value_t = 10)]
    pub variables: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lo: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub hi: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

impl GeneratorArgs {
    fn kind(&self) -> GeneratorKind {
        match self.kind {
            KindArg::Table1 => GeneratorKind::Table1,
            KindArg::Iid => GeneratorKind::IidUniform { variables: self.variables, lo: self.lo, hi: self.hi },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExclusionArgs {
    /// Keep identifier columns (reproduces the cancellation pathology).
    #[arg(long)]
    pub include_identifier: bool,
    /// Further column indices to drop.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<usize>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub ddof: u8,
    /// Accumulation precision; for analyze and pca, the sidecar must match it.
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
}

impl ExclusionArgs {
    fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            ddof: self.ddof,
            exclude: self.exclude.iter().copied().collect(),
            include_identifiers: self.include_identifier,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic CSV dataset.
    Generate {
        #[arg(long)]
        rows: u64,
        #[command(flatten)]
        generator: GeneratorArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write a header line.
        #[arg(long)]
        header: bool,
    },
    /// Convert CSV to the fixed-width binary format.
    Convert {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// table1, iid:P or generic:P[:ids].
        #[arg(long, default_value = "table1")]
        schema: String,
        /// The CSV starts with a header line.
        #[arg(long)]
        header: bool,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        skip_bad: bool,
    },
    /// Check a binary file against its CSV source.
    Validate {
        #[arg(long)]
        bin: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Also compare the payload checksum against the re-encoded CSV.
        #[arg(long)]
        checksum: bool,
        /// Number of rows to spot-check (first, middle and last are always included).
        #[arg(long, default_value_t = 3)]
        spots: usize,
        #[arg(long)]
        header: bool,
    },
    /// Sum one column of a binary file, exactly and in floating point.
    Sum {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        column: usize,
        #[arg(long, value_enum, default_value = "binary64")]
        precision: PrecisionArg,
        #[arg(long, value_enum, default_value = "auto")]
        check: CheckArg,
        /// Defaults to table1 for 11 columns, otherwise iid:P-1.
        #[arg(long)]
        schema: Option<String>,
    },
    /// One pass over a binary or CSV file producing a statistics sidecar.
    Suffstats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema: Option<String>,
        #[arg(long, value_enum, default_value = "binary64")]
        precision: PrecisionArg,
        /// CSV input starts with a header line.
        #[arg(long)]
        header: bool,
    },
    /// Means, covariance and correlation from a sidecar.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        exclusion: ExclusionArgs,
    },
    /// Principal components from a sidecar.
    Pca {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "correlation")]
        basis: BasisArg,
        #[command(flatten)]
        exclusion: ExclusionArgs,
    },
    /// generate → convert → validate → sum → suffstats → analyze → pca.
    Pipeline {
        #[arg(long)]
        rows: u64,
        #[command(flatten)]
        generator: GeneratorArgs,
        /// Directory for data.csv, data.bin and data.sst.
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long, value_enum, default_value = "correlation")]
        basis: BasisArg,
        #[command(flatten)]
        exclusion: ExclusionArgs,
        /// Validate with the payload checksum as well.
        #[arg(long)]
        checksum: bool,
        /// Also run the statistics pass over the CSV and compare timings.
        #[arg(long)]
        compare_csv: bool,
        /// Flip one byte of the binary file after conversion (testing aid).
        #[arg(long, hide = true)]
        inject_corruption: bool,
    },
}

pub struct Outcome {
    pub report: RunReport,
    pub text: String,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.succeeded() {
            EXIT_OK
        } else {
            EXIT_FAILURE
        }
    }
}

/// Exit status for an error returned by [`run`].
pub fn error_exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

struct Settings {
    workers: usize,
    chunk_rows: usize,
}

impl Settings {
    fn plan(&self, rows: u64, precision: PrecisionMode) -> Result<ReductionPlan> {
        Ok(ReductionPlan::for_rows(rows, self.chunk_rows, self.workers, precision)?)
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let settings = Settings {
        workers: cli.workers.map_or_else(default_workers, |w| w as usize),
        chunk_rows: usize::try_from(cli.chunk_rows).unwrap_or(usize::MAX),
    };
    let base = json!({ "workers": settings.workers, "chunk_rows": settings.chunk_rows });
    match &cli.command {
        Command::Generate { rows, generator, out, header } => {
            cmd_generate(&settings, base, *rows, generator, out, *header)
        }
        Command::Convert { csv, out, schema, header, skip_bad } => {
            cmd_convert(&settings, base, csv, out, schema, *header, *skip_bad)
        }
        Command::Validate { bin, csv, checksum, spots, header } => {
            cmd_validate(base, bin, csv, *checksum, *spots, *header)
        }
        Command::Sum { input, column, precision, check, schema } => {
            cmd_sum(&settings, base, input, *column, (*precision).into(), *check, schema.as_deref())
        }
        Command::Suffstats { input, out, schema, precision, header } => {
            cmd_suffstats(&settings, base, input, out, schema.as_deref(), (*precision).into(), *header)
        }
        Command::Analyze { input, exclusion } => cmd_analyze(base, input, exclusion),
        Command::Pca { input, basis, exclusion } => cmd_pca(base, input, (*basis).into(), exclusion),
        Command::Pipeline { .. } => cmd_pipeline(&settings, base, &cli.command),
    }
}

fn with(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Some(e)) = (base.as_object_mut(), extra.as_object()) {
        b.extend(e.clone());
    }
    base
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InputKind {
    Sidecar,
    Binary,
    Csv,
}

fn input_kind(path: &Path) -> Result<InputKind> {
    let mut head = [0u8; 8];
    let mut file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut got = 0;
    while got < head.len() {
        let n = file.read(&mut head[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    Ok(if is_sidecar(&head[..got]) {
        InputKind::Sidecar
    } else if head[..got] == binfile::MAGIC {
        InputKind::Binary
    } else {
        InputKind::Csv
    })
}

fn resolve_schema(spec: Option<&str>, columns: usize) -> Result<DatasetSchema> {
    let schema = match spec {
        Some(s) => DatasetSchema::parse_spec(s).map_err(|e| UsageError(e.to_string()))?,
        None if columns == 11 => DatasetSchema::table1(),
        None if columns >= 2 => DatasetSchema::iid(columns - 1),
        None => DatasetSchema::generic(columns, [])?,
    };
    if schema.column_count() != columns {
        return usage(format!("schema {schema} has {} columns but the input has {columns}", schema.column_count()));
    }
    Ok(schema)
}

fn cmd_generate(
    settings: &Settings,
    base: Value,
    rows: u64,
    g: &GeneratorArgs,
    out: &Path,
    header: bool,
) -> Result<Outcome> {
    if rows == 0 {
        return usage("--rows must be at least 1");
    }
    let kind = g.kind();
    let config = with(base, json!({ "rows": rows, "generator": kind, "seed": g.seed, "out": out, "header": header }));
    let mut report = RunReport::new("generate", config);
    let opts = GenerateOptions { header, workers: settings.workers, ..Default::default() };
    let t = Instant::now();
    let summary = generate_csv(rows, kind, g.seed, out, &opts).map_err(|e| match e {
        Error::InvalidArgument(_) | Error::InvalidRange { .. } => UsageError(e.to_string()).into(),
        e => anyhow::Error::from(e),
    })?;
    let mut stage = Stage::new(
        "generate",
        t.elapsed(),
        true,
        json!({
            "rows_written": summary.rows_written,
            "bytes_written": summary.bytes_written,
            "checksum": format!("{:016x}", summary.checksum),
        }),
    );
    stage.rows = Some(summary.rows_written);
    stage.bytes = Some(summary.bytes_written);
    report.stages.push(stage);
    let text = format!("wrote {} rows ({} bytes) to {}\n", summary.rows_written, summary.bytes_written, out.display());
    Ok(Outcome { report, text })
}

fn convert_stage(
    settings: &Settings,
    csv: &Path,
    out: &Path,
    schema: &DatasetSchema,
    header: bool,
    skip_bad: bool,
) -> Result<Stage> {
    let opts = ConvertOptions {
        csv: CsvOptions {
            has_header: header,
            error_policy: if skip_bad { ErrorPolicy::SkipAndCount } else { ErrorPolicy::FailFast },
        },
        chunk_rows: settings.chunk_rows,
    };
    let t = Instant::now();
    let s = binfile::convert_csv_to_binary(csv, out, schema, &opts)
        .with_context(|| format!("converting {}", csv.display()))?;
    let mut stage = Stage::new(
        "convert",
        t.elapsed(),
        true,
        json!({
            "rows": s.rows,
            "columns": s.columns,
            "bytes": s.bytes,
            "checksum": format!("{:016x}", s.checksum),
            "skipped_rows": s.skipped_rows,
        }),
    );
    stage.rows = Some(s.rows);
    stage.bytes = Some(s.bytes);
    Ok(stage)
}

fn cmd_convert(
    settings: &Settings,
    base: Value,
    csv: &Path,
    out: &Path,
    spec: &str,
    header: bool,
    skip_bad: bool,
) -> Result<Outcome> {
    let schema = DatasetSchema::parse_spec(spec).map_err(|e| UsageError(e.to_string()))?;
    let config = with(base, json!({ "csv": csv, "out": out, "schema": spec, "header": header, "skip_bad": skip_bad }));
    let mut report = RunReport::new("convert", config);
    let stage = convert_stage(settings, csv, out, &schema, header, skip_bad)?;
    let text = format!(
        "converted {} rows to {} ({} bytes)\n",
        stage.rows.unwrap_or(0),
        out.display(),
        stage.bytes.unwrap_or(0)
    );
    report.stages.push(stage);
    Ok(Outcome { report, text })
}

fn validation_json(v: &ValidationReport) -> Value {
    serde_json::to_value(v).expect("validation report serializes")
}

fn validate_stage(bin: &Path, csv: &Path, checksum: bool, spots: usize, header: bool) -> (Stage, ValidationReport) {
    let opts = ValidateOptions {
        spot_count: spots,
        with_checksum: checksum,
        csv: CsvOptions { has_header: header, ..Default::default() },
    };
    let t = Instant::now();
    let v = binfile::validate_binary(bin, csv, &opts);
    let stage = Stage::new("validate", t.elapsed(), v.passed(), validation_json(&v));
    (stage, v)
}

fn validation_text(v: &ValidationReport) -> String {
    let mut text = format!(
        "validation {}: {} rows, {} spot rows checked",
        if v.passed() { "PASS" } else { "FAIL" },
        v.bin_rows.unwrap_or(0),
        v.rows_checked.len()
    );
    if let Some(ok) = v.checksum_ok {
        let _ = write!(text, ", checksum {}", if ok { "ok" } else { "MISMATCH" });
    }
    text.push('\n');
    for f in &v.failures {
        let _ = writeln!(text, "  - {f}");
    }
    text
}

fn cmd_validate(base: Value, bin: &Path, csv: &Path, checksum: bool, spots: usize, header: bool) -> Result<Outcome> {
    let config = with(base, json!({ "bin": bin, "csv": csv, "checksum": checksum, "spots": spots }));
    let mut report = RunReport::new("validate", config);
    let (stage, v) = validate_stage(bin, csv, checksum, spots, header);
    if !v.passed() {
        report.fail(format!("validation failed: {}", v.failures.join("; ")));
    }
    report.stages.push(stage);
    Ok(Outcome { report, text: validation_text(&v) })
}

fn open_binary(input: &Path) -> Result<BinaryDataset> {
    match input_kind(input)? {
        InputKind::Binary => Ok(BinaryDataset::open(input)?),
        InputKind::Sidecar => usage(format!("{} is a statistics sidecar, not a binary dataset", input.display())),
        InputKind::Csv => usage(format!("{} is not a binary dataset; run `sstat convert` first", input.display())),
    }
}

/// Returns the stage and whether the exact sum matched its expectation.
fn sum_stage(
    settings: &Settings,
    ds: &BinaryDataset,
    column: usize,
    precision: PrecisionMode,
    check: CheckArg,
    schema: &DatasetSchema,
) -> Result<(Stage, Option<bool>, String)> {
    let rows = ds.header().row_count;
    let p = ds.header().column_count as usize;
    if column >= p {
        return usage(format!("column {column} out of range for {p} columns"));
    }
    let expect = match check {
        CheckArg::Triangular => true,
        CheckArg::Auto => schema.is_identifier(column),
        CheckArg::None => false,
    };
    let r = column_sum(ds, column, &settings.plan(rows, precision)?)?;
    let s = &r.value;
    let expected = expect.then(|| triangular(rows));
    let matched = expected.and_then(|e| s.matches(e));
    let ok = matched != Some(false) && !(expect && s.exact_sum.is_none());
    let result = json!({
        "column": column,
        "name": schema.column_names()[column],
        "rows": s.rows,
        "precision": s.precision.as_str(),
        "float_sum": num(s.float_sum),
        "exact_sum": s.exact_sum.map(|v| v.to_string()),
        "exact_note": s.exact_note,
        "float_path": s.float_path,
        "expected": expected.map(|v| v.to_string()),
        "match": matched,
    });
    let mut stage = Stage::new("sum", r.wall, ok, result);
    stage.read_seconds = Some(secs(r.read_time));
    stage.compute_seconds = Some(secs(r.compute_time));
    stage.rows = Some(rows);
    let mut text = format!(
        "column {column} ({}) over {} rows: exact {}, float {} [{:?}]\n",
        schema.column_names()[column],
        s.rows,
        s.exact_sum.map_or("n/a".into(), |v| v.to_string()),
        num(s.float_sum),
        s.float_path
    );
    if let Some(e) = expected {
        let _ = writeln!(text, "expected n(n+1)/2 = {e}: {}", if ok { "match" } else { "MISMATCH" });
    }
    Ok((stage, matched.or(if expect { Some(false) } else { None }), text))
}

fn cmd_sum(
    settings: &Settings,
    base: Value,
    input: &Path,
    column: usize,
    precision: PrecisionMode,
    check: CheckArg,
    spec: Option<&str>,
) -> Result<Outcome> {
    let config = with(
        base,
        json!({ "input": input, "column": column, "precision": precision.as_str(), "check": format!("{check:?}").to_lowercase() }),
    );
    let mut report = RunReport::new("sum", config);
    let ds = open_binary(input)?;
    let schema = resolve_schema(spec, ds.header().column_count as usize)?;
    let (stage, matched, text) = sum_stage(settings, &ds, column, precision, check, &schema)?;
    if matched == Some(false) {
        report.fail("column sum does not match n(n+1)/2");
    }
    report.stages.push(stage);
    Ok(Outcome { report, text })
}

/// Accumulates sufficient statistics from a binary or CSV file.
fn suffstats_stage(
    settings: &Settings,
    name: &str,
    input: &Path,
    spec: Option<&str>,
    precision: PrecisionMode,
    header: bool,
) -> Result<(Stage, SuffStats)> {
    let (reduced, rows, bytes) = match input_kind(input)? {
        InputKind::Sidecar => return usage(format!("{} is already a statistics sidecar", input.display())),
        InputKind::Binary => {
            let ds = BinaryDataset::open(input)?;
            let h = ds.header();
            let schema = resolve_schema(spec, h.column_count as usize)?;
            let plan = settings.plan(h.row_count, precision)?;
            (compute_suffstats(&ds, &schema, &plan)?, h.row_count, h.file_len().unwrap_or(0))
        }
        InputKind::Csv => {
            let schema = match spec {
                Some(s) => DatasetSchema::parse_spec(s).map_err(|e| UsageError(e.to_string()))?,
                None => return usage("CSV input needs --schema"),
            };
            let mut stream = open_csv_stream(input, &schema, CsvOptions { has_header: header, ..Default::default() })?;
            let r = compute_suffstats_csv(&mut stream, settings.chunk_rows, precision)?;
            let rows = r.value.n();
            (r, rows, stream.bytes_read())
        }
    };
    let mut stage = Stage::new(name, reduced.wall, true, Value::Null);
    stage.read_seconds = Some(secs(reduced.read_time));
    stage.compute_seconds = Some(secs(reduced.compute_time));
    stage.rows = Some(rows);
    stage.bytes = Some(bytes);
    Ok((stage, reduced.value))
}

fn cmd_suffstats(
    settings: &Settings,
    base: Value,
    input: &Path,
    out: &Path,
    spec: Option<&str>,
    precision: PrecisionMode,
    header: bool,
) -> Result<Outcome> {
    let config = with(base, json!({ "input": input, "out": out, "schema": spec, "precision": precision.as_str() }));
    let mut report = RunReport::new("suffstats", config);
    let (mut stage, ss) = suffstats_stage(settings, "suffstats", input, spec, precision, header)?;
    save_suffstats(&ss, out)?;
    stage.result = with(suffstats_json(&ss), json!({ "sidecar": out }));
    let text = format!(
        "{} rows, {} columns -> {} (read {:.3}s, accumulate {:.3}s, wall {:.3}s)\n",
        ss.n(),
        ss.column_count(),
        out.display(),
        stage.read_seconds.unwrap_or(0.0),
        stage.compute_seconds.unwrap_or(0.0),
        stage.wall_seconds
    );
    report.stages.push(stage);
    Ok(Outcome { report, text })
}

fn load_sidecar(input: &Path, command: &str) -> Result<SuffStats> {
    match input_kind(input)? {
        InputKind::Sidecar => Ok(load_suffstats(input)?),
        _ => usage(format!(
            "{command} reads only a statistics sidecar (magic {:?}); run `sstat suffstats` on {} first",
            String::from_utf8_lossy(&SIDECAR_MAGIC),
            input.display()
        )),
    }
}

fn check_precision(ss: &SuffStats, wanted: Option<PrecisionArg>) -> Result<()> {
    match wanted.map(PrecisionMode::from) {
        Some(p) if p != ss.precision() => usage(format!(
            "sidecar was accumulated in {}, not {p}; rerun `sstat suffstats --precision {p}`",
            ss.precision()
        )),
        _ => Ok(()),
    }
}

fn check_exclusions(ss: &SuffStats, opts: &AnalysisOptions) -> Result<()> {
    if let Some(&bad) = opts.exclude.iter().find(|&&c| c >= ss.column_count()) {
        return usage(format!("--exclude {bad}: only {} columns", ss.column_count()));
    }
    if opts.dropped(ss).len() >= ss.column_count() {
        return usage("every column would be excluded");
    }
    Ok(())
}

fn analysis_json(r: &AnalysisResult) -> Value {
    let named = |cols: &[usize]| -> Vec<&str> { cols.iter().map(|&c| r.column_names[c].as_str()).collect() };
    json!({
        "n": r.n,
        "ddof": r.ddof,
        "included_columns": r.included_columns,
        "column_names": r.column_names,
        "mean": nums(&r.mean),
        "covariance": matrix(&r.covariance),
        "correlation": r.correlation.as_ref().map(matrix),
        "diagnostics": {
            "kappa": nums(&r.diagnostics.kappa),
            "kappa_threshold": num(sstat_core::analysis::KAPPA_THRESHOLD),
            "flagged_columns": named(&r.diagnostics.flagged_columns),
            "negative_variance_columns": named(&r.diagnostics.negative_variance_columns),
        },
        "cancellation": r.cancellation.as_ref().map(|e| json!({
            "columns": e.columns,
            "labels": e.labels,
            "variances": nums(&e.variances),
        })),
    })
}

fn render_matrix(out: &mut String, title: &str, names: &[String], m: &SquareMatrix) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "\t{}", names.join("\t"));
    for (i, name) in names.iter().enumerate() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.14}")).collect();
        let _ = writeln!(out, "{name}\t{}", row.join("\t"));
    }
}

fn analysis_text(r: &AnalysisResult) -> String {
    let mut out = format!("n = {}, columns {}\n", r.n, r.column_names.join(","));
    let means: Vec<String> = r.mean.iter().map(|m| format!("{m:.10}")).collect();
    let _ = writeln!(out, "means\t{}", means.join("\t"));
    render_matrix(&mut out, "covariance", &r.column_names, &r.covariance);
    match (&r.correlation, &r.cancellation) {
        (Some(c), _) => render_matrix(&mut out, "correlation", &r.column_names, c),
        (None, Some(e)) => {
            let _ = writeln!(out, "correlation undefined: {e}");
        }
        (None, None) => {}
    }
    for &j in &r.diagnostics.flagged_columns {
        let _ = writeln!(
            out,
            "cancellation warning: {} has kappa = {:.6} (> {})",
            r.column_names[j],
            r.diagnostics.kappa[j],
            sstat_core::analysis::KAPPA_THRESHOLD
        );
    }
    for &j in &r.diagnostics.negative_variance_columns {
        let _ = writeln!(out, "negative variance: {} = {:e}", r.column_names[j], r.covariance[(j, j)]);
    }
    out
}

fn cmd_analyze(base: Value, input: &Path, ex: &ExclusionArgs) -> Result<Outcome> {
    let opts = ex.options();
    let config = with(
        base,
        json!({ "input": input, "ddof": opts.ddof, "exclude": opts.exclude, "include_identifier": opts.include_identifiers }),
    );
    let mut report = RunReport::new("analyze", config);
    let ss = load_sidecar(input, "analyze")?;
    check_precision(&ss, ex.precision)?;
    check_exclusions(&ss, &opts)?;
    let t = Instant::now();
    let r = analyze(&ss, &opts)?;
    let ok = r.cancellation.is_none();
    if let Some(e) = &r.cancellation {
        report.fail(e.to_string());
    }
    report.stages.push(Stage::new("analyze", t.elapsed(), ok, analysis_json(&r)));
    Ok(Outcome { report, text: analysis_text(&r) })
}

fn pca_json(r: &PcaResult) -> Value {
    json!({
        "basis": r.basis.as_str(),
        "n": r.n,
        "included_columns": r.included_columns,
        "column_names": r.column_names,
        "eigenvalues": nums(&r.eigenvalues),
        "variance_percent": nums(&r.variance_percent),
        "cumulative_percent": nums(&r.cumulative_percent),
        "cumulative_note": "running sum of variance_percent",
        "loadings_by_component": (0..r.eigenvalues.len()).map(|i| nums(&r.loadings.column(i))).collect::<Vec<_>>(),
        "trace": num(r.trace),
        "sweeps": r.sweeps,
        "spread": num(r.spread()),
        "spread_bound": num(sstat_core::pca::SPECTRUM_SPREAD_C / (r.n as f64).sqrt()),
        "negative_variance_columns": r.negative_variance_columns,
    })
}

fn cmd_pca(base: Value, input: &Path, basis: Basis, ex: &ExclusionArgs) -> Result<Outcome> {
    let opts = ex.options();
    let config = with(
        base,
        json!({ "input": input, "basis": basis.as_str(), "ddof": opts.ddof, "exclude": opts.exclude, "include_identifier": opts.include_identifiers }),
    );
    let mut report = RunReport::new("pca", config);
    let ss = load_sidecar(input, "pca")?;
    check_precision(&ss, ex.precision)?;
    check_exclusions(&ss, &opts)?;
    let t = Instant::now();
    let r = run_pca(&ss, basis, &opts)?;
    report.stages.push(Stage::new("pca", t.elapsed(), true, pca_json(&r)));
    Ok(Outcome { report, text: r.render_table() })
}

fn cmd_pipeline(settings: &Settings, base: Value, command: &Command) -> Result<Outcome> {
    let Command::Pipeline { rows, generator, workdir, basis, exclusion, checksum, compare_csv, inject_corruption } =
        command
    else {
        unreachable!()
    };
    if *rows == 0 {
        return usage("--rows must be at least 1");
    }
    let precision = exclusion.precision.map_or(PrecisionMode::Binary64, PrecisionMode::from);
    let basis = Basis::from(*basis);
    let kind = generator.kind();
    let schema = kind.schema();
    let opts = exclusion.options();
    let config = with(
        base,
        json!({
            "rows": rows, "generator": kind, "seed": generator.seed, "workdir": workdir,
            "precision": precision.as_str(), "basis": basis.as_str(), "ddof": opts.ddof,
            "exclude": opts.exclude, "include_identifier": opts.include_identifiers,
            "checksum": checksum, "compare_csv": compare_csv,
        }),
    );
    let mut report = RunReport::new("pipeline", config);
    std::fs::create_dir_all(workdir).with_context(|| format!("creating {}", workdir.display()))?;
    let csv = workdir.join("data.csv");
    let bin = workdir.join("data.bin");
    let sidecar = workdir.join("data.sst");
    let mut text = String::new();

    let gen = cmd_generate(settings, Value::Null, *rows, generator, &csv, false)?;
    report.stages.extend(gen.report.stages);
    text += &gen.text;

    let stage = convert_stage(settings, &csv, &bin, &schema, false, false)?;
    let _ = writeln!(text, "converted to {} ({} bytes)", bin.display(), stage.bytes.unwrap_or(0));
    report.stages.push(stage);

    if *inject_corruption {
        let middle = rows / 2;
        let offset = binfile::HEADER_LEN + middle * schema.column_count() as u64 * 8 + 3;
        binfile::corrupt_byte(&bin, offset, 0x40)?;
        let _ = writeln!(text, "injected corruption at byte {offset}");
        report.stages.push(Stage::new("inject_corruption", Default::default(), true, json!({ "offset": offset })));
    }

    let (stage, v) = validate_stage(&bin, &csv, *checksum, 3, false);
    text += &validation_text(&v);
    report.stages.push(stage);
    if !v.passed() {
        report.fail("validation failed; later stages not run");
        return Ok(Outcome { report, text });
    }

    let ds = BinaryDataset::open(&bin)?;
    if let Some(&id) = schema.identifier_columns().iter().next() {
        let (stage, matched, t) = sum_stage(settings, &ds, id, PrecisionMode::Binary64, CheckArg::Triangular, &schema)?;
        text += &t;
        report.stages.push(stage);
        if matched != Some(true) {
            report.fail("identifier column sum does not match n(n+1)/2; later stages not run");
            return Ok(Outcome { report, text });
        }
    }
    drop(ds);

    let spec = match kind {
        GeneratorKind::Table1 => "table1".to_string(),
        GeneratorKind::IidUniform { variables, .. } => format!("iid:{variables}"),
    };
    let (mut stage, ss) = suffstats_stage(settings, "suffstats", &bin, Some(&spec), precision, false)?;
    save_suffstats(&ss, &sidecar)?;
    stage.result = with(suffstats_json(&ss), json!({ "sidecar": sidecar }));
    let binary_wall = stage.wall_seconds;
    let _ = writeln!(
        text,
        "suffstats (binary): read {:.3}s, accumulate {:.3}s, wall {:.3}s",
        stage.read_seconds.unwrap_or(0.0),
        stage.compute_seconds.unwrap_or(0.0),
        binary_wall
    );
    report.stages.push(stage);

    if *compare_csv {
        let (mut stage, from_csv) = suffstats_stage(settings, "suffstats_csv", &csv, Some(&spec), precision, false)?;
        let identical = sstat_core::suffstats::encode_sidecar(&from_csv) == sstat_core::suffstats::encode_sidecar(&ss);
        let speedup = stage.wall_seconds / binary_wall.max(1e-9);
        stage.result = json!({
            "identical_to_binary": identical,
            "binary_wall_seconds": binary_wall,
            "csv_wall_seconds": stage.wall_seconds,
            "binary_speedup": speedup,
        });
        let _ = writeln!(
            text,
            "suffstats (CSV): read+parse {:.3}s, accumulate {:.3}s, wall {:.3}s; binary is {speedup:.1}x faster{}",
            stage.read_seconds.unwrap_or(0.0),
            stage.compute_seconds.unwrap_or(0.0),
            stage.wall_seconds,
            if identical { "" } else { " (RESULTS DIFFER)" }
        );
        stage.ok = identical;
        report.stages.push(stage);
        if !identical {
            report.fail("CSV and binary statistics differ");
            return Ok(Outcome { report, text });
        }
    }

    check_exclusions(&ss, &opts)?;
    let ss = load_suffstats(&sidecar)?;
    let t = Instant::now();
    let r = analyze(&ss, &opts)?;
    let ok = r.cancellation.is_none();
    text += &analysis_text(&r);
    report.stages.push(Stage::new("analyze", t.elapsed(), ok, analysis_json(&r)));
    if let Some(e) = &r.cancellation {
        report.fail(format!("{e}; PCA not run"));
        return Ok(Outcome { report, text });
    }

    let t = Instant::now();
    let p = run_pca(&ss, basis, &opts)?;
    text += &p.render_table();
    report.stages.push(Stage::new("pca", t.elapsed(), true, pca_json(&p)));
    Ok(Outcome { report, text })
}
