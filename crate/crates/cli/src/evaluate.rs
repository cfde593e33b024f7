//! Dataset evaluation: explain every matched detection with the requested
//! methods and score each explanation against its ground-truth box.
//!
//! Images are processed by a worker pool (one model session per worker,
//! created inside each explanation call); results funnel through a single
//! aggregator and are ordered by dataset position, so the output is
//! independent of thread scheduling.

use std::sync::mpsc;
use std::time::Instant;

use gcame_core::baselines::{drise_explain_batch, gradcam_explain, DRiseConfig};
use gcame_core::metrics::{
    confidence_drop, energy_based_pg, is_tiny, pairwise_iou, pointing_game, EvalRecord, Method,
    PerturbationSpec,
};
use gcame_core::{explain, DetectorModel, ExplanationTarget, GcameConfig, ImageInput};

use crate::coco::DatasetIndex;
use crate::error::{CliError, Result};
use crate::infodrop::information_drop;
use crate::render::load_image;

/// Which scores to compute. At least one must be on. The localization
/// scores (pg, ebpg) are pure map scans and are always recorded; the flags
/// here gate the model-in-the-loop faithfulness metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSet {
    pub pg: bool,
    pub ebpg: bool,
    pub confidence_drop: bool,
    pub information_drop: bool,
}

impl MetricSet {
    /// Parses metric names; an empty list is a usage error, never a silent
    /// no-op.
    pub fn from_names(names: &[String]) -> Result<MetricSet> {
        if names.is_empty() {
            return Err(CliError::Usage("no metrics requested".into()));
        }
        let mut set = MetricSet {
            pg: false,
            ebpg: false,
            confidence_drop: false,
            information_drop: false,
        };
        for n in names {
            match n.as_str() {
                "pg" => set.pg = true,
                "ebpg" => set.ebpg = true,
                "confidence-drop" => set.confidence_drop = true,
                "information-drop" => set.information_drop = true,
                other => {
                    return Err(CliError::Usage(format!("unknown metric {other:?}")));
                }
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub methods: Vec<Method>,
    pub metrics: MetricSet,
    pub objectness_threshold: f32,
    pub drise_masks: usize,
    pub seed: u64,
    pub workers: usize,
    /// Score only tiny detections (area at most 0.5% of the image).
    pub tiny_only: bool,
    /// Minimum IoU for a detection to count as matching a ground-truth box.
    pub match_iou: f64,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            methods: vec![Method::Gcame],
            metrics: MetricSet {
                pg: true,
                ebpg: true,
                confidence_drop: true,
                information_drop: true,
            },
            objectness_threshold: gcame_core::DEFAULT_OBJECTNESS_THRESHOLD,
            drise_masks: crate::config::DEFAULT_DRISE_MASKS,
            seed: 0,
            workers: 1,
            tiny_only: false,
            match_iou: 0.5,
        }
    }
}

/// Counters the records alone cannot carry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvaluateStats {
    pub images: usize,
    pub matched_objects: usize,
    /// Ground-truth boxes no detection matched.
    pub unmatched_objects: usize,
}

/// Mask-stream seed for one image, derived only from stable identifiers so
/// worker scheduling cannot change it.
fn drise_seed(base: u64, image_id: u64) -> u64 {
    base ^ image_id.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct MatchedPair {
    gt_index: usize,
    detection_index: usize,
}

/// Greedy one-to-one matching: each ground-truth box takes the highest-IoU
/// unused detection of its class.
fn match_detections(
    gts: &[gcame_core::metrics::GroundTruthBox],
    detections: &[gcame_core::Detection],
    match_iou: f64,
) -> (Vec<MatchedPair>, usize) {
    let mut used = vec![false; detections.len()];
    let mut pairs = Vec::new();
    let mut unmatched = 0usize;
    for (gi, gt) in gts.iter().enumerate() {
        let best = detections
            .iter()
            .enumerate()
            .filter(|(di, d)| !used[*di] && d.class_index == gt.class_index)
            .map(|(di, d)| (di, pairwise_iou(&gt.bbox, &d.bbox)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((di, iou)) if iou >= match_iou => {
                used[di] = true;
                pairs.push(MatchedPair {
                    gt_index: gi,
                    detection_index: di,
                });
            }
            _ => unmatched += 1,
        }
    }
    (pairs, unmatched)
}

fn score_map(
    model: &(impl DetectorModel + Sync),
    image: &ImageInput,
    map: &gcame_core::SaliencyMap,
    gt: &gcame_core::metrics::GroundTruthBox,
    detection: &gcame_core::Detection,
    detection_index: usize,
    image_id: u64,
    method: Method,
    runtime_ms: f64,
    opts: &EvaluateOptions,
) -> Result<EvalRecord> {
    let conf = if opts.metrics.confidence_drop {
        let target = ExplanationTarget::for_detection(detection.clone());
        let spec = PerturbationSpec {
            detection_threshold: opts.objectness_threshold,
            ..PerturbationSpec::default()
        };
        Some(confidence_drop(model, image, &target, &map.values, &spec)?.drop_pct)
    } else {
        None
    };
    let info = if opts.metrics.information_drop {
        information_drop(image, &map.values)?
    } else {
        None
    };
    Ok(EvalRecord {
        image_id,
        detection_index,
        method,
        pg_hit: pointing_game(&map.values, gt),
        energy_pg: energy_based_pg(&map.values, gt).value,
        confidence_drop_pct: conf,
        information_drop_pct: info,
        tiny: is_tiny(&detection.bbox, image.h(), image.w()),
        runtime_ms: Some(runtime_ms),
    })
}

/// Evaluates one image: detect, match, explain each matched pair with every
/// requested method, and score. Returns the records plus the count of
/// unmatched ground-truth boxes.
pub fn evaluate_image(
    model: &(impl DetectorModel + Sync),
    image: &ImageInput,
    gts: &[gcame_core::metrics::GroundTruthBox],
    image_id: u64,
    opts: &EvaluateOptions,
) -> Result<(Vec<EvalRecord>, usize)> {
    let detections = model.detect(image, opts.objectness_threshold)?;
    let (mut pairs, unmatched) = match_detections(gts, &detections, opts.match_iou);
    if opts.tiny_only {
        pairs.retain(|p| {
            is_tiny(&detections[p.detection_index].bbox, image.h(), image.w())
        });
    }
    let mut records = Vec::new();
    if pairs.is_empty() {
        return Ok((records, unmatched));
    }

    for &method in &opts.methods {
        match method {
            Method::Gcame => {
                for pair in &pairs {
                    let detection = &detections[pair.detection_index];
                    let target = ExplanationTarget::for_detection(detection.clone());
                    let config = GcameConfig {
                        objectness_threshold: opts.objectness_threshold,
                        ..GcameConfig::default()
                    };
                    let started = Instant::now();
                    let map = explain(model, image, &target, &config)?;
                    let ms = started.elapsed().as_secs_f64() * 1e3;
                    records.push(score_map(
                        model,
                        image,
                        &map,
                        &gts[pair.gt_index],
                        detection,
                        pair.detection_index,
                        image_id,
                        method,
                        ms,
                        opts,
                    )?);
                }
            }
            Method::GradCam => {
                // The map depends only on the class, so detections of one
                // class receive identical (cheap to recompute) maps.
                for pair in &pairs {
                    let detection = &detections[pair.detection_index];
                    let started = Instant::now();
                    let map = gradcam_explain(
                        model,
                        image,
                        detection.class_index,
                        opts.objectness_threshold,
                    )?;
                    let ms = started.elapsed().as_secs_f64() * 1e3;
                    records.push(score_map(
                        model,
                        image,
                        &map,
                        &gts[pair.gt_index],
                        detection,
                        pair.detection_index,
                        image_id,
                        method,
                        ms,
                        opts,
                    )?);
                }
            }
            Method::DRise => {
                // One mask stream scores every target on this image.
                let targets: Vec<gcame_core::Detection> = pairs
                    .iter()
                    .map(|p| detections[p.detection_index].clone())
                    .collect();
                let config = DRiseConfig {
                    num_masks: opts.drise_masks,
                    seed: drise_seed(opts.seed, image_id),
                    detection_threshold: opts.objectness_threshold,
                    ..DRiseConfig::default()
                };
                let started = Instant::now();
                let maps = drise_explain_batch(model, image, &targets, &config)?;
                let ms = started.elapsed().as_secs_f64() * 1e3 / pairs.len() as f64;
                for (pair, map) in pairs.iter().zip(&maps) {
                    records.push(score_map(
                        model,
                        image,
                        map,
                        &gts[pair.gt_index],
                        &detections[pair.detection_index],
                        pair.detection_index,
                        image_id,
                        method,
                        ms,
                        opts,
                    )?);
                }
            }
        }
    }
    Ok((records, unmatched))
}

/// Evaluates a whole dataset with a worker pool. Records come back grouped
/// by image in dataset order, then by method in request order.
pub fn evaluate_dataset(
    model: &(impl DetectorModel + Sync),
    index: &DatasetIndex,
    opts: &EvaluateOptions,
) -> Result<(Vec<EvalRecord>, EvaluateStats)> {
    if opts.methods.is_empty() {
        return Err(CliError::Usage("no methods requested".into()));
    }
    let workers = opts.workers.clamp(1, index.images.len().max(1));
    let (tx, rx) = mpsc::channel::<(usize, Result<(Vec<EvalRecord>, usize)>)>();

    std::thread::scope(|scope| {
        for worker in 0..workers {
            let tx = tx.clone();
            scope.spawn(move || {
                for (pos, entry) in index.images.iter().enumerate() {
                    if pos % workers != worker {
                        continue;
                    }
                    let outcome = load_image(&entry.path).and_then(|image| {
                        evaluate_image(
                            model,
                            &image,
                            index.annotations_for(entry.image_id),
                            entry.image_id,
                            opts,
                        )
                    });
                    if tx.send((pos, outcome)).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);

        // Single aggregator: collect per-image results, then order them.
        let mut slots: Vec<Option<(Vec<EvalRecord>, usize)>> =
            (0..index.images.len()).map(|_| None).collect();
        for (pos, outcome) in rx {
            slots[pos] = Some(outcome?);
        }
        let mut records = Vec::new();
        let mut stats = EvaluateStats::default();
        for slot in slots {
            let (mut image_records, unmatched) =
                slot.expect("every image position reported once");
            stats.images += 1;
            stats.unmatched_objects += unmatched;
            records.append(&mut image_records);
        }
        stats.matched_objects =
            records.len() / opts.methods.len().max(1);
        Ok((records, stats))
    })
}
