//! JSON run report. Layout is documented in `docs/report-schema.md`.

use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};
use sstat_core::{SquareMatrix, SuffStats};

pub const SCHEMA_VERSION: u32 = 1;

/// Full 17-significant-digit rendering; parses back to the same binary64.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn nums(v: &[f64]) -> Vec<String> {
    v.iter().map(|&x| num(x)).collect()
}

pub fn matrix(m: &SquareMatrix) -> Vec<Vec<String>> {
    (0..m.dim()).map(|i| nums(m.row(i))).collect()
}

pub fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub read_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compute_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    pub ok: bool,
    pub result: Value,
}

impl Stage {
    pub fn new(name: &str, wall: Duration, ok: bool, result: Value) -> Self {
        Self {
            name: name.into(),
            wall_seconds: secs(wall),
            read_seconds: None,
            compute_seconds: None,
            rows: None,
            bytes: None,
            ok,
            result,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub artifact_version: String,
    pub command: String,
    pub config: Value,
    pub stages: Vec<Stage>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            stages: Vec::new(),
            status: "ok".into(),
            error: None,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn fail(&mut self, message: impl Into<String>) {
        self.status = "failed".into();
        self.error = Some(message.into());
    }

    pub fn succeeded(&self) -> bool {
        self.status == "ok"
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n")
    }
}

pub fn suffstats_json(ss: &SuffStats) -> Value {
    json!({
        "n": ss.n(),
        "precision": ss.precision().as_str(),
        "columns": ss.schema().column_names(),
        "identifier_columns": ss.schema().identifier_columns(),
        "sums": nums(ss.sums()),
        "cross_products": matrix(&ss.cross_matrix()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 5e-324, 1.7976931348623157e308, -0.0, 50000005000000.0] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
