//! Evaluation report files: a versioned JSON summary plus a CSV with one
//! row per scored object.

use std::path::Path;

use gcame_core::metrics::{EvalRecord, EvalReport, MethodReport, MetricSummary};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Schema version stamped into every report JSON.
pub const REPORT_VERSION: &str = "v1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SummaryJson {
    pub count: usize,
    pub pointing_game: f64,
    pub energy_pg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_drop_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub information_drop_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MethodJson {
    pub method: String,
    pub overall: SummaryJson,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tiny: Option<SummaryJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportJson {
    pub version: String,
    /// Scores are averaged per object, then over objects.
    pub averaging: String,
    pub seed: u64,
    pub methods: Vec<MethodJson>,
}

fn summary_json(s: &MetricSummary) -> SummaryJson {
    SummaryJson {
        count: s.count,
        pointing_game: s.pointing_game,
        energy_pg: s.energy_pg,
        confidence_drop_pct: s.confidence_drop_pct,
        information_drop_pct: s.information_drop_pct,
        mean_runtime_ms: s.mean_runtime_ms,
    }
}

fn method_json(m: &MethodReport) -> MethodJson {
    MethodJson {
        method: m.method.as_str().to_string(),
        overall: summary_json(&m.overall),
        tiny: m.tiny.as_ref().map(summary_json),
    }
}

/// Writes the aggregated report as pretty JSON.
pub fn write_report_json(path: &Path, report: &EvalReport, seed: u64) -> Result<()> {
    let doc = ReportJson {
        version: REPORT_VERSION.to_string(),
        averaging: "per-object".to_string(),
        seed,
        methods: report.methods.iter().map(method_json).collect(),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Json {
        path: path.into(),
        source: e,
    })?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_report_json(path: &Path) -> Result<ReportJson> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.into(),
        source: e,
    })
}

/// Writes one CSV row per record. Missing optional scores render as empty
/// fields.
pub fn write_records_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| {
        CliError::Config(format!("csv {}: {e}", path.display()))
    })?;
    w.write_record([
        "image_id",
        "detection_index",
        "method",
        "pg_hit",
        "energy_pg",
        "confidence_drop_pct",
        "information_drop_pct",
        "tiny",
        "runtime_ms",
    ])
    .and_then(|()| {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in records {
            w.write_record([
                r.image_id.to_string(),
                r.detection_index.to_string(),
                r.method.as_str().to_string(),
                r.pg_hit.to_string(),
                r.energy_pg.to_string(),
                opt(r.confidence_drop_pct),
                opt(r.information_drop_pct),
                r.tiny.to_string(),
                opt(r.runtime_ms),
            ])?;
        }
        w.flush().map_err(csv::Error::from)
    })
    .map_err(|e| CliError::Config(format!("csv {}: {e}", path.display())))
}
