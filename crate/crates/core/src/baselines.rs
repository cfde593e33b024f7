//! Reference explainers the main method is compared against.
//!
//! `gradcam_explain` is the ungated signed gradient-weighted map: the same
//! combiner as the main pipeline with every Gaussian mask replaced by 1, and
//! the class score summed over all detections of the class, so it highlights
//! every instance at once. `drise_explain` is the perturbation baseline: the
//! model re-runs on thousands of randomly masked copies of the image and
//! each mask is credited with the best IoU-weighted class score it retains.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::{Detection, DetectorModel, ExplanationTarget, ScoreKind};
use crate::error::Error;
use crate::gcame::{combine_saliency, weight_feature_maps, ChannelMasks, LayerCombination, SaliencyMap};
use crate::grid::{Grid2, NormalizeOutcome};
use crate::image::ImageInput;
use crate::metrics::{pairwise_iou, Method};

/// Class-level gradient-weighted saliency without Gaussian gating.
///
/// Sums the target-class score over every detection of that class (one
/// backward pass each, gradients added), weights channels by mean gradient,
/// and fuses layers exactly like the main pipeline. The returned map's
/// target is the highest-objectness detection of the class.
pub fn gradcam_explain<M: DetectorModel>(
    model: &M,
    image: &ImageInput,
    target_class: usize,
    objectness_threshold: f32,
) -> Result<SaliencyMap, Error> {
    let layer_set = crate::detector::select_target_layers(&model.layer_graph(), model.kind())
        .map_err(|e| e.at_stage("select-target-layers"))?;
    let (detections, session) = model
        .forward_with_capture(image, &layer_set, objectness_threshold)
        .map_err(|e| e.at_stage("forward-capture"))?;
    let of_class: Vec<&Detection> = detections
        .iter()
        .filter(|d| d.class_index == target_class)
        .collect();
    if of_class.is_empty() {
        return Err(Error::InvalidTarget(alloc::format!(
            "no detections of class {target_class}"
        )));
    }
    // Gradients are linear in the score, so the gradient of the summed class
    // score is the sum of per-detection gradients.
    let mut summed: Vec<crate::detector::GradientCapture> = Vec::new();
    for det in &of_class {
        let target = ExplanationTarget {
            detection: (*det).clone(),
            score_kind: ScoreKind::ClassScore,
            target_class,
        };
        let captures = model
            .backward_scores(&session, &target)
            .map_err(|e| e.at_stage("gradient-maps"))?;
        if summed.is_empty() {
            summed = captures;
        } else {
            for (acc, cap) in summed.iter_mut().zip(captures) {
                for (g, v) in acc.gradient.data_mut().iter_mut().zip(cap.gradient.data()) {
                    *g += v;
                }
            }
        }
    }
    let combinations: Vec<LayerCombination> = summed
        .into_iter()
        .filter(|c| !c.gradient_is_zero())
        .map(|capture| {
            let weighting = weight_feature_maps(&capture);
            LayerCombination {
                capture,
                weighting,
                masks: ChannelMasks::Uniform,
            }
        })
        .collect();
    let representative = of_class[0].clone();
    combine_saliency(
        &combinations,
        image.h(),
        image.w(),
        ExplanationTarget {
            detection: representative,
            score_kind: ScoreKind::ClassScore,
            target_class,
        },
        Method::GradCam,
    )
    .map_err(|e| e.at_stage("combine"))
}

// ---------------------------------------------------------------------------
// D-RISE
// ---------------------------------------------------------------------------

/// Settings for the random-mask perturbation explainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DRiseConfig {
    /// Coarse occlusion grid resolution.
    pub grid_h: usize,
    pub grid_w: usize,
    /// Probability that a grid cell stays visible.
    pub occurrence_prob: f32,
    pub num_masks: usize,
    pub seed: u64,
    /// Masked forward passes a worker may group together.
    pub batch_size: usize,
    /// Multiply the class score by objectness when scoring masked images.
    pub score_includes_objectness: bool,
    /// Objectness threshold for detections on masked images.
    pub detection_threshold: f32,
}

impl Default for DRiseConfig {
    fn default() -> Self {
        DRiseConfig {
            grid_h: 16,
            grid_w: 16,
            occurrence_prob: 0.5,
            num_masks: 4000,
            seed: 0,
            batch_size: 32,
            score_includes_objectness: false,
            detection_threshold: crate::DEFAULT_OBJECTNESS_THRESHOLD,
        }
    }
}

impl DRiseConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.grid_h < 2 || self.grid_w < 2 {
            return Err(Error::Configuration(
                "occlusion grid must be at least 2x2".into(),
            ));
        }
        if !(self.occurrence_prob > 0.0 && self.occurrence_prob < 1.0) {
            return Err(Error::Configuration(
                "occurrence probability must be strictly between 0 and 1".into(),
            ));
        }
        if self.num_masks == 0 {
            return Err(Error::Configuration("need at least one mask".into()));
        }
        Ok(())
    }
}

/// Reproducible stream of soft occlusion masks at image resolution.
///
/// Each mask starts as a Bernoulli grid one cell larger than the configured
/// resolution, is bilinearly upsampled by the cell size, and is cropped at a
/// random sub-cell offset so cell boundaries do not align across masks.
pub struct MaskStream {
    rng: ChaCha8Rng,
    grid_h: usize,
    grid_w: usize,
    occurrence_prob: f32,
    cell_h: usize,
    cell_w: usize,
    out_h: usize,
    out_w: usize,
    remaining: usize,
}

/// Opens a mask stream for an image shape. The sequence is a pure function
/// of the config.
pub fn generate_random_masks(
    config: &DRiseConfig,
    image_shape: (usize, usize),
) -> Result<MaskStream, Error> {
    config.validate()?;
    let (out_h, out_w) = image_shape;
    let cell_h = out_h.div_ceil(config.grid_h);
    let cell_w = out_w.div_ceil(config.grid_w);
    Ok(MaskStream {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        grid_h: config.grid_h,
        grid_w: config.grid_w,
        occurrence_prob: config.occurrence_prob,
        cell_h,
        cell_w,
        out_h,
        out_w,
        remaining: config.num_masks,
    })
}

impl Iterator for MaskStream {
    type Item = Grid2;

    fn next(&mut self) -> Option<Grid2> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let (gh, gw) = (self.grid_h + 1, self.grid_w + 1);
        let mut coarse = Grid2::zeros(gh, gw);
        for v in coarse.data_mut() {
            *v = if self.rng.gen::<f32>() < self.occurrence_prob {
                1.0
            } else {
                0.0
            };
        }
        let up = coarse.resize_bilinear(gh * self.cell_h, gw * self.cell_w);
        let dy = self.rng.gen_range(0..self.cell_h);
        let dx = self.rng.gen_range(0..self.cell_w);
        let mut mask = Grid2::zeros(self.out_h, self.out_w);
        for r in 0..self.out_h {
            for c in 0..self.out_w {
                mask.set(r, c, up.get(r + dy, c + dx));
            }
        }
        Some(mask)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for MaskStream {}

/// Perturbation saliency for one detection. See [`drise_explain_batch`] for
/// explaining several detections of the same image at shared cost.
pub fn drise_explain<M: DetectorModel>(
    model: &M,
    image: &ImageInput,
    target: &Detection,
    config: &DRiseConfig,
) -> Result<SaliencyMap, Error> {
    let mut maps = drise_explain_batch(model, image, core::slice::from_ref(target), config)?;
    Ok(maps.pop().expect("one target in, one map out"))
}

/// Runs the mask stream once and scores every target against each masked
/// forward pass, so n targets cost the same model time as one.
///
/// Per mask, a target is credited with `max_j IoU(target, d_j) * p_class(d_j)`
/// over the masked image's detections; each pixel averages the credits of
/// the masks that kept it visible, and the map is min-max normalized. A
/// target that never scores (e.g. nothing is ever re-detected) yields the
/// flagged all-zero map.
pub fn drise_explain_batch<M: DetectorModel>(
    model: &M,
    image: &ImageInput,
    targets: &[Detection],
    config: &DRiseConfig,
) -> Result<Vec<SaliencyMap>, Error> {
    if targets.is_empty() {
        return Err(Error::InvalidTarget("no targets to explain".into()));
    }
    let (h, w) = (image.h(), image.w());
    let n = h * w;
    let mut weighted: Vec<Vec<f64>> = vec![vec![0.0; n]; targets.len()];
    let mut occupancy = vec![0.0f64; n];
    for mask in generate_random_masks(config, (h, w))? {
        let masked = image.masked(&mask)?;
        let detections = model.detect(&masked, config.detection_threshold)?;
        for (t, target) in targets.iter().enumerate() {
            let mut score = 0.0f64;
            for d in &detections {
                let p = d
                    .class_scores
                    .get(target.class_index)
                    .copied()
                    .unwrap_or(0.0);
                let mut s = pairwise_iou(&target.bbox, &d.bbox) * f64::from(p);
                if config.score_includes_objectness {
                    s *= f64::from(d.objectness);
                }
                if s > score {
                    score = s;
                }
            }
            if score > 0.0 {
                for (acc, &m) in weighted[t].iter_mut().zip(mask.data()) {
                    *acc += score * f64::from(m);
                }
            }
        }
        for (occ, &m) in occupancy.iter_mut().zip(mask.data()) {
            *occ += f64::from(m);
        }
    }
    let mut out = Vec::with_capacity(targets.len());
    for (t, target) in targets.iter().enumerate() {
        let mut values = Grid2::zeros(h, w);
        for (idx, v) in values.data_mut().iter_mut().enumerate() {
            if occupancy[idx] > 0.0 {
                *v = (weighted[t][idx] / occupancy[idx]) as f32;
            }
        }
        let outcome = values.normalize_min_max();
        out.push(SaliencyMap {
            values,
            target: ExplanationTarget::for_detection(target.clone()),
            method: Method::DRise,
            constant: outcome == NormalizeOutcome::Constant,
        });
    }
    Ok(out)
}
