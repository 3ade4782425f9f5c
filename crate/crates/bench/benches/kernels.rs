use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use sstat_core::datagen::{row_values, write_row, RngState};
use sstat_core::ingest::parse_line;
use sstat_core::*;

fn table1_rows(n: u64) -> Vec<f64> {
    let kind = GeneratorKind::Table1;
    let mut values = Vec::with_capacity(n as usize * 11);
    let mut row = Vec::new();
    for i in 1..=n {
        row_values(&kind, 42, i, &mut row).unwrap();
        values.extend_from_slice(&row);
    }
    values
}

fn accumulate(c: &mut Criterion) {
    let rows = 1u64 << 16;
    let schema = DatasetSchema::table1();
    let chunk = Chunk::new(0, 11, table1_rows(rows)).unwrap();
    let mut g = c.benchmark_group("accumulate_chunk");
    g.throughput(Throughput::Elements(rows));
    for precision in [PrecisionMode::Binary64, PrecisionMode::Binary32Diagnostic] {
        g.bench_function(precision.as_str(), |b| {
            b.iter(|| SuffStats::accumulate_chunk(black_box(&chunk), &schema, precision).unwrap())
        });
    }
    g.bench_function("comoments", |b| b.iter(|| CoMoments::accumulate_chunk(black_box(&chunk), &schema).unwrap()));
    g.finish();
}

fn merge(c: &mut Criterion) {
    let schema = DatasetSchema::table1();
    let chunk = Chunk::new(0, 11, table1_rows(1024)).unwrap();
    let a = SuffStats::accumulate_chunk(&chunk, &schema, PrecisionMode::Binary64).unwrap();
    c.bench_function("suffstats_merge", |b| b.iter(|| black_box(&a).merge(black_box(&a)).unwrap()));
}

fn parse(c: &mut Criterion) {
    let kind = GeneratorKind::Table1;
    let mut text = Vec::new();
    for i in 1..=10_000 {
        write_row(&kind, 42, i, &mut text).unwrap();
    }
    let lines: Vec<&[u8]> = text.split(|&b| b == b'\n').filter(|l| !l.is_empty()).collect();
    let mut g = c.benchmark_group("parse_line");
    g.throughput(Throughput::Bytes(text.len() as u64));
    g.bench_function("table1_10k_rows", |b| {
        let mut out = Vec::with_capacity(lines.len() * 11);
        b.iter(|| {
            out.clear();
            for (i, line) in lines.iter().enumerate() {
                parse_line(line, 11, i as u64 + 1, &mut out).unwrap();
            }
            black_box(out.len())
        })
    });
    g.finish();
}

fn jacobi(c: &mut Criterion) {
    let mut g = c.benchmark_group("eigh_symmetric");
    for p in [4usize, 10, 32] {
        let mut rng = RngState::new(1, p as u64);
        let m = SquareMatrix::from_fn(p, |_, _| rng.uniform(-1.0, 1.0)).symmetrized();
        g.bench_with_input(BenchmarkId::from_parameter(p), &m, |b, m| b.iter(|| eigh_symmetric(black_box(m)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, accumulate, merge, parse, jacobi);
criterion_main!(benches);
