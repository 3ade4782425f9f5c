//! Streaming sufficient statistics for large tabular datasets.
//!
//! Data flows CSV → fixed-width binary → one pass producing `n`, column sums
//! and `XᵀX` → means, covariance, correlation and PCA computed from those
//! statistics alone.

pub mod analysis;
pub mod binfile;
pub mod checksum;
pub mod datagen;
pub mod error;
pub mod ingest;
pub mod matrix;
pub mod oracle;
pub mod pca;
pub mod reduce;
pub mod schema;
pub mod suffstats;

pub use analysis::{analyze, AnalysisOptions, AnalysisResult, CancellationDiagnostics};
pub use binfile::{BinaryDataset, BinaryHeader, ConversionSummary, ValidationReport, Verdict};
pub use datagen::{generate_csv, GenerateOptions, GenerationSummary, GeneratorKind};
pub use error::{CancellationError, Error, Result};
pub use ingest::{open_csv_stream, CsvOptions, CsvStream, ErrorPolicy};
pub use matrix::SquareMatrix;
pub use pca::{eigh_symmetric, run_pca, Basis, PcaResult};
pub use reduce::{
    column_sum, plan_partitions, ColumnSumResult, FloatPath, MemorySource, Partition, PrecisionMode, Reduced,
    ReductionPlan, RowRange, RowSource, DEFAULT_CHUNK_ROWS,
};
pub use schema::{Chunk, DatasetSchema};
pub use suffstats::{
    compute_comoments, compute_suffstats, compute_suffstats_csv, load_suffstats, save_suffstats, CoMoments, SuffStats,
};
