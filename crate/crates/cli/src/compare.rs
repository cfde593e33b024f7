//! Side-by-side method comparison on one image: runs every explainer on
//! the same matched detections and formats a timing/metric table, with
//! published large-scale reference scores printed alongside for
//! orientation.

use gcame_core::metrics::{reference, EvalRecord, Method};
use gcame_core::{DetectorModel, ImageInput};

use crate::error::Result;
use crate::evaluate::{evaluate_image, EvaluateOptions};

/// Per-method means over the compared image's objects, plus total wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: Method,
    pub objects: usize,
    pub pointing_game: f64,
    pub energy_pg: f64,
    pub confidence_drop_pct: Option<f64>,
    pub information_drop_pct: Option<f64>,
    pub wall_ms: f64,
}

fn row_from(method: Method, records: &[&EvalRecord]) -> CompareRow {
    let n = records.len().max(1) as f64;
    let mean_opt = |get: fn(&EvalRecord) -> Option<f64>| {
        let vals: Vec<f64> = records.iter().filter_map(|r| get(r)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    CompareRow {
        method,
        objects: records.len(),
        pointing_game: records.iter().filter(|r| r.pg_hit).count() as f64 / n,
        energy_pg: records.iter().map(|r| r.energy_pg).sum::<f64>() / n,
        confidence_drop_pct: mean_opt(|r| r.confidence_drop_pct),
        information_drop_pct: mean_opt(|r| r.information_drop_pct),
        wall_ms: records.iter().filter_map(|r| r.runtime_ms).sum(),
    }
}

/// Runs all three methods on the image's matched detections.
pub fn compare_methods(
    model: &(impl DetectorModel + Sync),
    image: &ImageInput,
    gts: &[gcame_core::metrics::GroundTruthBox],
    opts: &EvaluateOptions,
) -> Result<Vec<CompareRow>> {
    let mut opts = opts.clone();
    opts.methods = vec![Method::Gcame, Method::GradCam, Method::DRise];
    let (records, _) = evaluate_image(model, image, gts, 0, &opts)?;
    Ok(opts
        .methods
        .iter()
        .map(|&m| {
            let group: Vec<&EvalRecord> = records.iter().filter(|r| r.method == m).collect();
            row_from(m, &group)
        })
        .collect())
}

fn fmt_opt(v: Option<f64>, width: usize) -> String {
    match v {
        Some(v) => format!("{v:>width$.2}"),
        None => format!("{:>width$}", "-"),
    }
}

/// Formats the comparison as a fixed-width table. The right block holds
/// published reference scores from a large-scale benchmark (80-class
/// dataset, one-stage detector); they orient the reader and are not
/// expectations for the local model.
pub fn format_table(rows: &[CompareRow], num_masks: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<8} {:>4} {:>6} {:>6} {:>7} {:>7} {:>10}   | {:>6} {:>6} {:>7} {:>7} {:>8}\n",
        "method", "n", "pg", "ebpg", "conf%", "info%", "wall ms", "pg*", "ebpg*", "conf%*", "info%*", "wall s*"
    ));
    for row in rows {
        let published: [Option<f64>; 5] = match row.method {
            Method::Gcame => [
                Some(reference::GCAME_POINTING_GAME),
                Some(reference::GCAME_ENERGY_PG),
                Some(reference::GCAME_CONFIDENCE_DROP_PCT),
                Some(reference::GCAME_INFORMATION_DROP_PCT),
                Some(reference::GCAME_RUNTIME_S),
            ],
            Method::DRise => [
                Some(reference::DRISE_POINTING_GAME),
                Some(reference::DRISE_ENERGY_PG),
                Some(reference::DRISE_CONFIDENCE_DROP_PCT),
                Some(reference::DRISE_INFORMATION_DROP_PCT),
                Some(reference::DRISE_RUNTIME_S),
            ],
            Method::GradCam => [None; 5],
        };
        out.push_str(&format!(
            "{:<8} {:>4} {:>6.2} {:>6.3} {} {} {:>10.1}   | {} {} {} {} {}\n",
            row.method.as_str(),
            row.objects,
            row.pointing_game,
            row.energy_pg,
            fmt_opt(row.confidence_drop_pct, 7),
            fmt_opt(row.information_drop_pct, 7),
            row.wall_ms,
            fmt_opt(published[0], 6),
            fmt_opt(published[1], 6),
            fmt_opt(published[2], 7),
            fmt_opt(published[3], 7),
            fmt_opt(published[4], 8),
        ));
    }
    out.push_str(&format!(
        "drise masks: {num_masks}; * published reference values, large-scale benchmark\n"
    ));
    out
}
