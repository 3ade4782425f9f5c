use std::path::Path;

use sstat_core::analysis::{correlation, covariance};
use sstat_core::binfile::{
    convert_csv_to_binary, corrupt_byte, validate_binary, ConvertOptions, ValidateOptions, HEADER_LEN,
};
use sstat_core::oracle::two_pass_correlation;
use sstat_core::suffstats::encode_sidecar;
use sstat_core::*;

fn generate(dir: &Path, n: u64, kind: GeneratorKind) -> std::path::PathBuf {
    let csv = dir.join("data.csv");
    generate_csv(n, kind, 42, &csv, &GenerateOptions::default()).unwrap();
    csv
}

fn parse_all(csv: &Path, schema: &DatasetSchema) -> Vec<f64> {
    let mut s = open_csv_stream(csv, schema, CsvOptions::default()).unwrap();
    let mut out = Vec::new();
    while let Some(c) = s.next_chunk(usize::MAX >> 8).unwrap() {
        out.extend_from_slice(c.values());
    }
    out
}

#[test]
fn csv_binary_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generate(dir.path(), 5_000, GeneratorKind::Table1);
    let schema = DatasetSchema::table1();
    let direct = parse_all(&csv, &schema);
    let mut first = None;
    for chunk_rows in [1, 1000, 1 << 20] {
        let bin = dir.path().join(format!("d{chunk_rows}.bin"));
        let opts = ConvertOptions { chunk_rows, ..Default::default() };
        let summary = convert_csv_to_binary(&csv, &bin, &schema, &opts).unwrap();
        assert_eq!(summary.rows, 5_000);
        let ds = BinaryDataset::open(&bin).unwrap();
        let back = ds.read_rows(0, 5_000).unwrap();
        assert!(back.values().iter().zip(&direct).all(|(a, b)| a.to_bits() == b.to_bits()));
        let bytes = std::fs::read(&bin).unwrap();
        match &first {
            None => first = Some(bytes),
            Some(f) => assert_eq!(f, &bytes),
        }
    }
}

#[test]
fn validation_detects_corruption_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generate(dir.path(), 1_000, GeneratorKind::Table1);
    let schema = DatasetSchema::table1();
    let bin = dir.path().join("d.bin");
    convert_csv_to_binary(&csv, &bin, &schema, &ConvertOptions::default()).unwrap();
    let pristine = std::fs::read(&bin).unwrap();
    let with_crc = ValidateOptions { with_checksum: true, ..Default::default() };
    assert!(validate_binary(&bin, &csv, &ValidateOptions::default()).passed());
    assert!(validate_binary(&bin, &csv, &with_crc).passed());

    // A byte inside a spot-checked row (the middle one, 500).
    let row_bytes = 11 * 8;
    corrupt_byte(&bin, HEADER_LEN + 500 * row_bytes + 13, 0x01).unwrap();
    assert!(!validate_binary(&bin, &csv, &ValidateOptions::default()).passed());
    std::fs::write(&bin, &pristine).unwrap();

    // Any byte anywhere, with the checksum on.
    for offset in [0, 9, 13, 30, 63, 64, 200, 44_000, pristine.len() as u64 - 1] {
        corrupt_byte(&bin, offset, 0x80).unwrap();
        assert!(!validate_binary(&bin, &csv, &with_crc).passed(), "offset {offset}");
        std::fs::write(&bin, &pristine).unwrap();
    }

    std::fs::write(&bin, &pristine[..pristine.len() - 8]).unwrap();
    assert!(!validate_binary(&bin, &csv, &ValidateOptions::default()).passed());
}

#[test]
fn sidecars_identical_across_workers_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let csv = generate(dir.path(), 20_000, GeneratorKind::Table1);
    let schema = DatasetSchema::table1();
    let bin = dir.path().join("d.bin");
    convert_csv_to_binary(&csv, &bin, &schema, &ConvertOptions::default()).unwrap();
    let ds = BinaryDataset::open(&bin).unwrap();
    let run = |w| {
        let plan = ReductionPlan::for_rows(20_000, 1_500, w, PrecisionMode::Binary64).unwrap();
        compute_suffstats(&ds, &schema, &plan).unwrap().value
    };
    let base = run(1);
    for w in [2, 4, 8] {
        assert_eq!(encode_sidecar(&run(w)), encode_sidecar(&base));
    }
    let path = dir.path().join("d.sst");
    save_suffstats(&base, &path).unwrap();
    let loaded = load_suffstats(&path).unwrap();
    assert_eq!(encode_sidecar(&loaded), encode_sidecar(&base));

    let sum =
        column_sum(&ds, 0, &ReductionPlan::for_rows(20_000, 1_500, 3, PrecisionMode::Binary64).unwrap()).unwrap().value;
    assert_eq!(sum.exact_sum, Some(reduce::triangular(20_000)));
    assert_eq!(sum.float_path, FloatPath::Exact);
}

#[test]
fn table1_correlation_matches_two_pass() {
    let kind = GeneratorKind::Table1;
    let n = 200_000u64;
    let mut values = Vec::with_capacity(n as usize * 10);
    let mut row = Vec::new();
    for i in 1..=n {
        datagen::row_values(&kind, 3, i, &mut row).unwrap();
        values.extend_from_slice(&row[1..]);
    }
    let schema = kind.schema().select(&(1..11).collect::<Vec<_>>());
    let src = MemorySource::new(10, values.clone()).unwrap();
    let plan = ReductionPlan::for_rows(n, 1 << 16, 2, PrecisionMode::Binary64).unwrap();
    let ss = compute_suffstats(&src, &schema, &plan).unwrap().value;
    let cov = covariance(&ss, 1).unwrap();
    let r = correlation(&cov.matrix).unwrap();
    let reference = two_pass_correlation(&values, 10);
    for j in 0..10 {
        assert_eq!(r[(j, j)], 1.0);
        for k in 0..10 {
            assert!(r[(j, k)].is_finite() && r[(j, k)].abs() <= 1.0);
            assert!((r[(j, k)] - reference[(j, k)]).abs() < 1e-8, "({j},{k})");
        }
    }
}

#[test]
fn identifier_pathology_is_flagged() {
    let n = 100_000u64;
    let kind = GeneratorKind::Table1;
    let mut values = Vec::with_capacity(n as usize * 11);
    let mut row = Vec::new();
    for i in 1..=n {
        datagen::row_values(&kind, 1, i, &mut row).unwrap();
        values.extend_from_slice(&row);
    }
    let src = MemorySource::new(11, values).unwrap();
    let plan = ReductionPlan::for_rows(n, 1 << 14, 1, PrecisionMode::Binary64).unwrap();
    let ss = compute_suffstats(&src, &kind.schema(), &plan).unwrap().value;
    let with_id = analyze(&ss, &AnalysisOptions { include_identifiers: true, ..Default::default() }).unwrap();
    assert!(with_id.diagnostics.kappa[0] > 0.7);
    assert!(with_id.diagnostics.flagged_columns.contains(&0));
    let without = analyze(&ss, &AnalysisOptions::default()).unwrap();
    assert_eq!(without.included_columns, (1..11).collect::<Vec<_>>());
    assert!(without.correlation.is_some());
}
