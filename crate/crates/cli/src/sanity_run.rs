//! The model-randomization sanity protocol: for each randomization seed,
//! compare the explanation on the intact model against explanations on
//! progressively randomized copies (cascading from the output end), plus a
//! no-op control that must reproduce the baseline exactly.

use std::path::Path;

use gcame_core::sanity::{sanity_suite, RandomizationMode, RandomizationPlan, SanityOutcome};
use gcame_core::{
    explain, ExplanationTarget, GcameConfig, ImageInput, RandomizableModel,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::render::{contact_sheet, overlay_rgb, save_png};

#[derive(Debug, Clone)]
pub struct SanityOptions {
    /// Number of randomization seeds to sweep.
    pub seeds: usize,
    pub seed_base: u64,
    pub init_std: f32,
    pub objectness_threshold: f32,
}

impl Default for SanityOptions {
    fn default() -> Self {
        SanityOptions {
            seeds: 20,
            seed_base: 0,
            init_std: 0.1,
            objectness_threshold: gcame_core::DEFAULT_OBJECTNESS_THRESHOLD,
        }
    }
}

/// Cascading plans over `candidates` (ordered output-end-first): the k-th
/// plan randomizes the first k layers. The no-op control comes first.
pub fn cascading_plans(candidates: &[&str], init_std: f32, seed: u64) -> Vec<RandomizationPlan> {
    let mut plans = vec![RandomizationPlan::no_op(seed)];
    for k in 1..=candidates.len() {
        plans.push(RandomizationPlan {
            mode: RandomizationMode::Cascading,
            layer_ids: candidates[..k].iter().map(|s| s.to_string()).collect(),
            init_std,
            seed,
        });
    }
    plans
}

fn plan_label(plan: &RandomizationPlan) -> String {
    match plan.layer_ids.last() {
        None => "no-op".to_string(),
        Some(last) => format!("cascade-to:{last}"),
    }
}

/// One similarity measurement, flattened for the report table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SanityRow {
    pub seed: u64,
    pub plan: String,
    pub spearman: f64,
    pub ssim: f64,
    pub no_detection: bool,
    pub empty_explanation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SanityReport {
    pub version: String,
    pub seeds: usize,
    pub rows: Vec<SanityRow>,
    /// Seeds whose full-cascade rank correlation fell below 0.5.
    pub full_cascade_below_half: usize,
    /// Every no-op control reproduced the baseline exactly.
    pub noop_always_exact: bool,
}

fn rows_from(seed: u64, outcomes: &[SanityOutcome]) -> Vec<SanityRow> {
    outcomes
        .iter()
        .map(|o| SanityRow {
            seed,
            plan: plan_label(&o.plan),
            spearman: o.similarity.spearman,
            ssim: o.similarity.ssim,
            no_detection: o.no_detection,
            empty_explanation: o.empty_explanation,
        })
        .collect()
}

/// Sweeps the randomization seeds on one image/target and aggregates the
/// table. The candidate list is ordered output-end-first; the full cascade
/// (every candidate) is the row the summary counts.
pub fn run_sanity_protocol<M: RandomizableModel>(
    model: &M,
    image: &ImageInput,
    target: &ExplanationTarget,
    candidates: &[&str],
    opts: &SanityOptions,
) -> Result<SanityReport> {
    if opts.seeds == 0 || candidates.is_empty() {
        return Err(CliError::Usage(
            "sanity needs at least one seed and one candidate layer".into(),
        ));
    }
    let config = GcameConfig {
        objectness_threshold: opts.objectness_threshold,
        ..GcameConfig::default()
    };
    let mut rows = Vec::new();
    let mut below_half = 0usize;
    let mut noop_exact = true;
    for s in 0..opts.seeds {
        let seed = opts.seed_base + s as u64;
        let plans = cascading_plans(candidates, opts.init_std, seed);
        let outcomes = sanity_suite(model, image, target, &plans, &config)?;
        // Plan order: no-op first, full cascade last.
        if outcomes[0].similarity.spearman != 1.0 || outcomes[0].similarity.ssim != 1.0 {
            noop_exact = false;
        }
        if outcomes[outcomes.len() - 1].similarity.spearman < 0.5 {
            below_half += 1;
        }
        rows.extend(rows_from(seed, &outcomes));
    }
    Ok(SanityReport {
        version: crate::report::REPORT_VERSION.to_string(),
        seeds: opts.seeds,
        rows,
        full_cascade_below_half: below_half,
        noop_always_exact: noop_exact,
    })
}

pub fn write_sanity_json(path: &Path, report: &SanityReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Json {
        path: path.into(),
        source: e,
    })?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Contact sheet for one seed: the baseline explanation tile followed by
/// one tile per plan.
pub fn render_sanity_sheet<M: RandomizableModel>(
    model: &M,
    image: &ImageInput,
    target: &ExplanationTarget,
    candidates: &[&str],
    opts: &SanityOptions,
    out_png: &Path,
) -> Result<()> {
    let config = GcameConfig {
        objectness_threshold: opts.objectness_threshold,
        ..GcameConfig::default()
    };
    let baseline = explain(model, image, target, &config)?;
    let plans = cascading_plans(candidates, opts.init_std, opts.seed_base);
    let outcomes = sanity_suite(model, image, target, &plans, &config)?;
    let mut tiles = vec![(
        "baseline".to_string(),
        overlay_rgb(image, &baseline.values, &target.detection, "")?,
    )];
    for o in &outcomes {
        let caption = match o.plan.layer_ids.len() {
            0 => "no-op".to_string(),
            k => format!("k{k} s{:.2}", o.similarity.spearman),
        };
        tiles.push((
            caption,
            overlay_rgb(image, &o.saliency.values, &target.detection, "")?,
        ));
    }
    let sheet = contact_sheet(&tiles, 4)?;
    save_png(out_png, &sheet)
}
