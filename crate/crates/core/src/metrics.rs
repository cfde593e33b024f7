//! Quantitative scores for saliency explanations.
//!
//! Localization quality comes from the pointing game (does the strongest
//! saliency pixel land in the annotated box) and its energy variant (what
//! share of total saliency mass lands there). Faithfulness comes from
//! perturbation: hide the top-salient pixels and measure how much the
//! detector's confidence in the target drops. Records from many objects
//! aggregate into per-method summaries with a tiny-object subset.

use alloc::vec::Vec;

use crate::detector::{BoxPx, DetectorModel, ExplanationTarget};
use crate::error::Error;
use crate::grid::Grid2;
use crate::image::ImageInput;

/// An annotated box a saliency map is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BoxPx,
    pub class_index: usize,
}

/// Intersection over union of two boxes, in f64 for exactness on
/// integer-coordinate boxes.
pub fn pairwise_iou(a: &BoxPx, b: &BoxPx) -> f64 {
    let ix = (f64::from(a.x2.min(b.x2)) - f64::from(a.x1.max(b.x1))).max(0.0);
    let iy = (f64::from(a.y2.min(b.y2)) - f64::from(a.y1.max(b.y1))).max(0.0);
    let inter = ix * iy;
    let area_a = (f64::from(a.x2) - f64::from(a.x1)).max(0.0)
        * (f64::from(a.y2) - f64::from(a.y1)).max(0.0);
    let area_b = (f64::from(b.x2) - f64::from(b.x1)).max(0.0)
        * (f64::from(b.y2) - f64::from(b.y1)).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Pixel membership test shared by the localization scores: pixel `(row,
/// col)` covers the unit square `[col, col+1) x [row, row+1)` and counts as
/// inside when its index falls in the half-open box extent.
fn pixel_in_box(row: usize, col: usize, b: &BoxPx) -> bool {
    let (x, y) = (col as f32, row as f32);
    x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2
}

/// Pointing game: true when a global-maximum saliency pixel lies inside the
/// annotated box. A plateau of equal maxima counts as a hit if any of its
/// pixels is inside.
pub fn pointing_game(saliency: &Grid2, gt: &GroundTruthBox) -> bool {
    let (_, max) = saliency.min_max();
    for r in 0..saliency.h() {
        for c in 0..saliency.w() {
            if saliency.get(r, c) == max && pixel_in_box(r, c, &gt.bbox) {
                return true;
            }
        }
    }
    false
}

/// Energy-based pointing game score with its degenerate-input flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyScore {
    /// Fraction of total saliency energy inside the box, in `[0, 1]`.
    pub value: f64,
    /// The map had zero total energy; `value` is 0 by convention.
    pub empty_saliency: bool,
}

/// Share of total saliency mass falling inside the annotated box.
/// Accumulated in f64, row-major, so the result is order-stable.
pub fn energy_based_pg(saliency: &Grid2, gt: &GroundTruthBox) -> EnergyScore {
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for r in 0..saliency.h() {
        for c in 0..saliency.w() {
            let v = f64::from(saliency.get(r, c));
            total += v;
            if pixel_in_box(r, c, &gt.bbox) {
                inside += v;
            }
        }
    }
    if total == 0.0 {
        EnergyScore {
            value: 0.0,
            empty_saliency: true,
        }
    } else {
        EnergyScore {
            value: inside / total,
            empty_saliency: false,
        }
    }
}

/// Area ratio at or below which a predicted box counts as a tiny object.
pub const TINY_AREA_RATIO: f64 = 0.005;

/// True when the box covers at most [`TINY_AREA_RATIO`] of the image.
pub fn is_tiny(bbox: &BoxPx, image_h: usize, image_w: usize) -> bool {
    let image_area = (image_h * image_w) as f64;
    if image_area == 0.0 {
        return false;
    }
    f64::from(bbox.area()) / image_area <= TINY_AREA_RATIO
}

// ---------------------------------------------------------------------------
// Top-fraction masks and the confidence-drop perturbation
// ---------------------------------------------------------------------------

/// How a top-fraction mask treats pixels tied at the cut-off value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieMode {
    /// Exactly `round(fraction * n)` pixels; ties broken by row-major index.
    ExactBudget,
    /// Every pixel at or above the cut-off value, so the budget can grow.
    /// Pixels with zero saliency are never selected.
    IncludeTies,
}

/// Binary mask (values 0 or 1) selecting the most salient `fraction` of
/// pixels.
pub fn top_fraction_mask(saliency: &Grid2, fraction: f32, ties: TieMode) -> Grid2 {
    let n = saliency.data().len();
    let mut mask = Grid2::zeros(saliency.h(), saliency.w());
    let budget = (libm::round(f64::from(fraction) * n as f64) as usize).min(n);
    if budget == 0 {
        return mask;
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort by value descending keeps row-major order inside ties.
    order.sort_by(|&a, &b| saliency.data()[b].partial_cmp(&saliency.data()[a]).unwrap());
    match ties {
        TieMode::ExactBudget => {
            for &idx in &order[..budget] {
                mask.data_mut()[idx] = 1.0;
            }
        }
        TieMode::IncludeTies => {
            // A zero cut-off would otherwise select the entire map.
            let cutoff = saliency.data()[order[budget - 1]];
            for (idx, &v) in saliency.data().iter().enumerate() {
                if v >= cutoff && v > 0.0 {
                    mask.data_mut()[idx] = 1.0;
                }
            }
        }
    }
    mask
}

/// Settings for the confidence-drop perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    /// Fraction of pixels hidden, picked from the top of the saliency map.
    pub top_fraction: f32,
    /// Objectness threshold when re-detecting on the perturbed image.
    pub detection_threshold: f32,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            top_fraction: 0.2,
            detection_threshold: crate::DEFAULT_OBJECTNESS_THRESHOLD,
        }
    }
}

/// Outcome of one confidence-drop measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceDropOutcome {
    /// Drop in percent, clamped to `[0, 100]`.
    pub drop_pct: f64,
    pub original_score: f64,
    pub perturbed_score: f64,
    /// No detection survived on the perturbed image; drop is 100 by
    /// convention.
    pub vanished: bool,
}

/// Hides the top-salient pixels behind the image mean and measures how much
/// the detector's confidence in the target drops.
///
/// The perturbed-image score is the best `IoU(target, d) * p_class(d)` over
/// all re-detections; the drop is `(orig - pert) / orig`, floored at zero, as
/// a percentage.
pub fn confidence_drop<M: DetectorModel>(
    model: &M,
    image: &ImageInput,
    target: &ExplanationTarget,
    saliency: &Grid2,
    spec: &PerturbationSpec,
) -> Result<ConfidenceDropOutcome, Error> {
    if saliency.h() != image.h() || saliency.w() != image.w() {
        return Err(Error::ShapeMismatch {
            context: "saliency map vs image",
        });
    }
    let original_score = f64::from(
        *target
            .detection
            .class_scores
            .get(target.target_class)
            .ok_or_else(|| Error::InvalidTarget("target class out of range".into()))?,
    );
    if original_score <= 0.0 {
        return Err(Error::InvalidTarget(
            "target has non-positive class score".into(),
        ));
    }
    let mask = top_fraction_mask(saliency, spec.top_fraction, TieMode::ExactBudget);
    let perturbed = crate::imageops::mean_fill(image, &mask)?;
    let detections = model.detect(&perturbed, spec.detection_threshold)?;
    let mut perturbed_score = 0.0f64;
    for d in &detections {
        let p = d
            .class_scores
            .get(target.target_class)
            .copied()
            .unwrap_or(0.0);
        let s = pairwise_iou(&target.detection.bbox, &d.bbox) * f64::from(p);
        if s > perturbed_score {
            perturbed_score = s;
        }
    }
    if detections.is_empty() {
        return Ok(ConfidenceDropOutcome {
            drop_pct: 100.0,
            original_score,
            perturbed_score: 0.0,
            vanished: true,
        });
    }
    let drop_pct = ((original_score - perturbed_score).max(0.0) / original_score) * 100.0;
    Ok(ConfidenceDropOutcome {
        drop_pct,
        original_score,
        perturbed_score,
        vanished: false,
    })
}

// ---------------------------------------------------------------------------
// Record aggregation
// ---------------------------------------------------------------------------

/// Explanation methods the harness can score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Gcame,
    GradCam,
    DRise,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Gcame => "gcame",
            Method::GradCam => "gradcam",
            Method::DRise => "drise",
        }
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scores for one explained object.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image_id: u64,
    pub detection_index: usize,
    pub method: Method,
    pub pg_hit: bool,
    pub energy_pg: f64,
    pub confidence_drop_pct: Option<f64>,
    pub information_drop_pct: Option<f64>,
    pub tiny: bool,
    pub runtime_ms: Option<f64>,
}

/// Mean scores over a set of records.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub count: usize,
    /// Hit rate of the pointing game, in `[0, 1]`.
    pub pointing_game: f64,
    pub energy_pg: f64,
    /// None when no record in the set carried the score.
    pub confidence_drop_pct: Option<f64>,
    pub information_drop_pct: Option<f64>,
    pub mean_runtime_ms: Option<f64>,
}

/// Per-method aggregation with a tiny-object subset.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub overall: MetricSummary,
    /// Summary over tiny-object records only; None when there were none.
    pub tiny: Option<MetricSummary>,
}

/// Full aggregation over every method present in the input.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub methods: Vec<MethodReport>,
}

fn summarize(records: &[&EvalRecord]) -> MetricSummary {
    let count = records.len();
    let hits = records.iter().filter(|r| r.pg_hit).count();
    let energy: f64 = records.iter().map(|r| r.energy_pg).sum();
    let mean_opt = |get: fn(&EvalRecord) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = records.iter().filter_map(|r| get(r)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    MetricSummary {
        count,
        pointing_game: hits as f64 / count as f64,
        energy_pg: energy / count as f64,
        confidence_drop_pct: mean_opt(|r| r.confidence_drop_pct),
        information_drop_pct: mean_opt(|r| r.information_drop_pct),
        mean_runtime_ms: mean_opt(|r| r.runtime_ms),
    }
}

/// Groups records by method (first-seen order) and averages each group, with
/// a separate tiny-object summary. Errors on empty input rather than
/// producing a report full of NaN.
pub fn aggregate_report(records: &[EvalRecord]) -> Result<EvalReport, Error> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut methods: Vec<Method> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        let group: Vec<&EvalRecord> = records.iter().filter(|r| r.method == m).collect();
        let tiny_group: Vec<&EvalRecord> = group.iter().copied().filter(|r| r.tiny).collect();
        out.push(MethodReport {
            method: m,
            overall: summarize(&group),
            tiny: if tiny_group.is_empty() {
                None
            } else {
                Some(summarize(&tiny_group))
            },
        });
    }
    Ok(EvalReport { methods: out })
}

/// Published reference scores for these methods on a common 80-class
/// detection benchmark with a one-stage detector. The `compare` output prints
/// them beside locally measured numbers for orientation; they are not
/// expectations for the bundled toy model.
pub mod reference {
    pub const GCAME_POINTING_GAME: f64 = 0.98;
    pub const GCAME_ENERGY_PG: f64 = 0.671;
    pub const GCAME_CONFIDENCE_DROP_PCT: f64 = 36.8;
    pub const GCAME_INFORMATION_DROP_PCT: f64 = 29.15;
    pub const GCAME_RUNTIME_S: f64 = 0.435;

    pub const DRISE_POINTING_GAME: f64 = 0.86;
    pub const DRISE_ENERGY_PG: f64 = 0.184;
    pub const DRISE_CONFIDENCE_DROP_PCT: f64 = 42.3;
    pub const DRISE_INFORMATION_DROP_PCT: f64 = 31.58;
    pub const DRISE_RUNTIME_S: f64 = 252.0;

    pub const GCAME_TINY_POINTING_GAME: f64 = 0.158;
    pub const GCAME_TINY_ENERGY_PG: f64 = 0.261;
    pub const DRISE_TINY_POINTING_GAME: f64 = 0.127;
    pub const DRISE_TINY_ENERGY_PG: f64 = 0.009;
}
