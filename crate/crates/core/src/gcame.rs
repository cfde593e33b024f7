//! Saliency maps for single detections from one gradient pass.
//!
//! The pipeline explains one predicted box at a time: a backward pass of the
//! box's class score yields a gradient map per target layer; each feature
//! channel is weighted by its mean gradient; an adaptive Gaussian mask
//! centered on the gradient's hot pixel gates every weighted channel to the
//! target object; the gated sums from all layers are fused into one
//! normalized heat map at input resolution. One forward and one backward
//! pass per explanation, so the cost is a small multiple of inference.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::detector::{DetectorModel, ExplanationTarget, ModelKind};
pub use crate::detector::GradientCapture;
use crate::error::Error;
use crate::grid::{Grid2, NormalizeOutcome};
use crate::image::ImageInput;
use crate::metrics::Method;

/// Lower clamp for the Gaussian mask's standard deviation, in feature px.
pub const SIGMA_MIN: f64 = 0.1;

/// Tuning knobs for [`explain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcameConfig {
    /// Objectness threshold for the capture forward pass.
    pub objectness_threshold: f32,
    /// Replaces every Gaussian mask with 1, collapsing the method onto the
    /// plain signed gradient-weighted baseline. Exists so the reduction can
    /// be cross-checked; leave off for real explanations.
    pub force_uniform_masks: bool,
}

impl Default for GcameConfig {
    fn default() -> Self {
        GcameConfig {
            objectness_threshold: crate::DEFAULT_OBJECTNESS_THRESHOLD,
            force_uniform_masks: false,
        }
    }
}

/// Final per-pixel attribution for one explained detection.
///
/// Values are min-max normalized to `[0, 1]` and share the input image's
/// shape. A map that came out constant (no signal) is all zero and flagged.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub values: Grid2,
    pub target: ExplanationTarget,
    pub method: Method,
    /// Pre-normalization map was constant; values are all zero.
    pub constant: bool,
}

// ---------------------------------------------------------------------------
// Gradient localization
// ---------------------------------------------------------------------------

/// Feature-map pixel the target object's gradient points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CenterEstimate {
    pub row: usize,
    pub col: usize,
    /// One-stage gradients should concentrate on a single pixel; when they
    /// do not, the argmax is used instead and this flag is set.
    pub fell_back: bool,
}

/// Finds the feature-map pixel carrying the target's gradient: the unique
/// nonzero pixel when there is one, otherwise the argmax of the
/// channel-summed gradient magnitude. Ties break to the smallest row-major
/// index.
pub fn locate_center(capture: &GradientCapture, kind: ModelKind) -> Result<CenterEstimate, Error> {
    let (k, h, w) = (capture.channels(), capture.feature_h(), capture.feature_w());
    let mut best_idx = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    let mut nonzero = 0usize;
    for r in 0..h {
        for c in 0..w {
            let mut mag = 0.0f64;
            for ch in 0..k {
                mag += f64::from(capture.gradient.get(ch, r, c)).abs();
            }
            if mag > 0.0 {
                nonzero += 1;
            }
            if mag > best_v {
                best_v = mag;
                best_idx = r * w + c;
            }
        }
    }
    if nonzero == 0 {
        return Err(Error::NoGradientSignal(capture.layer_id.clone()));
    }
    Ok(CenterEstimate {
        row: best_idx / w,
        col: best_idx % w,
        fell_back: kind == ModelKind::OneStage && nonzero > 1,
    })
}

// ---------------------------------------------------------------------------
// Channel weighting
// ---------------------------------------------------------------------------

/// Per-channel gradient means with the sign partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeighting {
    /// Mean gradient of each channel.
    pub alpha: Vec<f64>,
    /// Channels with positive mean gradient.
    pub positive: Vec<usize>,
    /// Channels with negative mean gradient. Zero-mean channels belong to
    /// neither set and do not contribute.
    pub negative: Vec<usize>,
}

impl ChannelWeighting {
    /// True when no channel carries a nonzero mean gradient.
    pub fn is_empty(&self) -> bool {
        self.positive.is_empty() && self.negative.is_empty()
    }
}

/// Weights each feature channel by the mean of its gradient map and splits
/// the channels by the weight's sign.
pub fn weight_feature_maps(capture: &GradientCapture) -> ChannelWeighting {
    let k = capture.channels();
    let mut alpha = Vec::with_capacity(k);
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for ch in 0..k {
        let a = capture.gradient.channel_mean_f64(ch);
        if a > 0.0 {
            positive.push(ch);
        } else if a < 0.0 {
            negative.push(ch);
        }
        alpha.push(a);
    }
    ChannelWeighting {
        alpha,
        positive,
        negative,
    }
}

// ---------------------------------------------------------------------------
// Adaptive Gaussian masks
// ---------------------------------------------------------------------------

/// Everything needed to materialize one channel's Gaussian mask, plus the
/// intermediate terms for auditability.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMaskSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Peak pixel `(row, col)`, from [`locate_center`].
    pub center: (usize, usize),
    /// Standard deviation in feature px, clamped to `[SIGMA_MIN, q/3]` where
    /// `q = floor((sqrt(grid_h * grid_w) - 1) / 2)`.
    pub sigma: f64,
    /// Log-magnitude of the channel's mean gradient (0 when degenerate).
    pub scale_r: f64,
    /// Linear upscaling factor from feature map to input image.
    pub scale_s: f64,
    /// Feature-map pixel count.
    pub normalizer_z: usize,
    /// The raw formula left `[SIGMA_MIN, sigma_max]` and was clamped.
    pub clamped: bool,
    /// The formula was undefined (zero mean gradient or a grid too small
    /// for the radius term); sigma fell back to [`SIGMA_MIN`].
    pub degenerate: bool,
}

/// Upper sigma clamp for a feature grid: a third of its half-diagonal-ish
/// radius `q = floor((sqrt(h*w) - 1) / 2)`, so three sigmas stay inside.
pub fn sigma_max(grid_h: usize, grid_w: usize) -> f64 {
    let q = libm::floor((libm::sqrt((grid_h * grid_w) as f64) - 1.0) / 2.0);
    q / 3.0
}

/// Derives the mask width for one channel from its mean gradient magnitude
/// and the feature-to-input scale: `sigma = ln|mean| * ln(scale) * 3 / q`,
/// clamped; zero-mean channels and degenerate grids fall back to
/// [`SIGMA_MIN`].
pub fn compute_sigma(
    capture: &GradientCapture,
    channel: usize,
    center: (usize, usize),
    image_h: usize,
    image_w: usize,
) -> Result<GaussianMaskSpec, Error> {
    let (h, w) = (capture.feature_h(), capture.feature_w());
    if channel >= capture.channels() {
        return Err(Error::Configuration(alloc::format!(
            "channel {channel} out of range for {} channels",
            capture.channels()
        )));
    }
    let z = h * w;
    let scale_s = libm::sqrt((image_h * image_w) as f64 / z as f64);
    let q = libm::floor((libm::sqrt(z as f64) - 1.0) / 2.0);
    let mean = capture.gradient.channel_mean_f64(channel);
    let mut spec = GaussianMaskSpec {
        grid_h: h,
        grid_w: w,
        center,
        sigma: SIGMA_MIN,
        scale_r: 0.0,
        scale_s,
        normalizer_z: z,
        clamped: false,
        degenerate: false,
    };
    if mean == 0.0 || q <= 0.0 {
        spec.degenerate = true;
        return Ok(spec);
    }
    let r = libm::log(mean.abs());
    let raw = r * libm::log(scale_s) * 3.0 / q;
    let hi = q / 3.0;
    spec.scale_r = r;
    spec.sigma = raw.clamp(SIGMA_MIN, hi);
    spec.clamped = raw != spec.sigma;
    Ok(spec)
}

/// A materialized Gaussian mask: peak exactly 1 at the center, values in
/// `(0, 1]`. Kept in f64 so closed-form checks hold to tight tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMask {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl GaussianMask {
    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.w + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Evaluates the 2-D Gaussian `(1 / 2*pi*sigma^2) * exp(-(dx^2 + dy^2) /
/// (2*sigma^2))` on the spec's grid and normalizes so the center pixel is
/// exactly 1. Symmetric pixels get bit-identical values because the kernel
/// depends only on the squared integer distance.
pub fn generate_gaussian_mask(spec: &GaussianMaskSpec) -> GaussianMask {
    let amplitude = 1.0 / (2.0 * core::f64::consts::PI * spec.sigma * spec.sigma);
    let inv_two_var = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let (ci, cj) = (spec.center.0 as f64, spec.center.1 as f64);
    let mut values = vec![0.0f64; spec.grid_h * spec.grid_w];
    for i in 0..spec.grid_h {
        for j in 0..spec.grid_w {
            let di = i as f64 - ci;
            let dj = j as f64 - cj;
            values[i * spec.grid_w + j] = amplitude * libm::exp(-(di * di + dj * dj) * inv_two_var);
        }
    }
    let peak = values[spec.center.0 * spec.grid_w + spec.center.1];
    for v in &mut values {
        *v /= peak;
    }
    GaussianMask {
        h: spec.grid_h,
        w: spec.grid_w,
        values,
    }
}

// ---------------------------------------------------------------------------
// Combination
// ---------------------------------------------------------------------------

/// Masks to apply during combination: one per weighted channel, or the
/// all-one mask that turns the method into the ungated baseline.
#[derive(Debug, Clone)]
pub enum ChannelMasks {
    /// Every mask is 1 everywhere.
    Uniform,
    /// Indexed by channel; entries must be present for every channel in the
    /// weighting's sign sets.
    PerChannel(Vec<Option<GaussianMask>>),
}

/// One target layer's inputs to [`combine_saliency`].
#[derive(Debug, Clone)]
pub struct LayerCombination {
    pub capture: GradientCapture,
    pub weighting: ChannelWeighting,
    pub masks: ChannelMasks,
}

/// Fuses per-layer weighted feature maps into one input-resolution map.
///
/// Per layer: the positively-weighted masked channels are summed, the
/// negatively-weighted masked sum is subtracted as-is, and the result passes
/// through one ReLU. Layer maps are bilinearly upsampled to `(input_h,
/// input_w)`, summed with equal weight, and min-max normalized. A constant
/// result normalizes to all zero and is flagged.
pub fn combine_saliency(
    layers: &[LayerCombination],
    input_h: usize,
    input_w: usize,
    target: ExplanationTarget,
    method: Method,
) -> Result<SaliencyMap, Error> {
    let mut total = Grid2::zeros(input_h, input_w);
    let mut contributed = false;
    for layer in layers {
        if layer.capture.gradient_is_zero() || layer.weighting.is_empty() {
            continue;
        }
        let (h, w) = (layer.capture.feature_h(), layer.capture.feature_w());
        let mut acc = vec![0.0f64; h * w];
        for (channels, sign) in [(&layer.weighting.positive, 1.0), (&layer.weighting.negative, -1.0)]
        {
            for &ch in channels.iter() {
                let alpha = layer.weighting.alpha[ch];
                let activation = layer.capture.activation.channel(ch);
                match &layer.masks {
                    ChannelMasks::Uniform => {
                        for (idx, &a) in activation.iter().enumerate() {
                            acc[idx] += sign * alpha * f64::from(a);
                        }
                    }
                    ChannelMasks::PerChannel(masks) => {
                        let mask = masks
                            .get(ch)
                            .and_then(|m| m.as_ref())
                            .ok_or(Error::Configuration(alloc::format!(
                                "no mask for weighted channel {ch}"
                            )))?;
                        if mask.h() != h || mask.w() != w {
                            return Err(Error::ShapeMismatch {
                                context: "gaussian mask vs feature map",
                            });
                        }
                        for (idx, &a) in activation.iter().enumerate() {
                            acc[idx] += sign * alpha * mask.values()[idx] * f64::from(a);
                        }
                    }
                }
            }
        }
        let mut layer_map = Grid2::zeros(h, w);
        for (out, &v) in layer_map.data_mut().iter_mut().zip(acc.iter()) {
            *out = v.max(0.0) as f32;
        }
        total.add_assign(&layer_map.resize_bilinear(input_h, input_w));
        contributed = true;
    }
    if !contributed {
        return Err(Error::EmptyExplanation);
    }
    let outcome = total.normalize_min_max();
    Ok(SaliencyMap {
        values: total,
        target,
        method,
        constant: outcome == NormalizeOutcome::Constant,
    })
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// One backward pass of the target's score through the captured forward,
/// producing a paired activation/gradient grid per target layer. Layers the
/// score does not depend on come back with all-zero gradients.
pub fn compute_gradient_maps<M: DetectorModel>(
    model: &M,
    session: &M::Session,
    target: &ExplanationTarget,
) -> Result<Vec<GradientCapture>, Error> {
    model.backward_scores(session, target)
}

/// Per-layer diagnostics from one explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub layer_id: String,
    pub stride: u32,
    /// Layer contributed nothing (zero gradient or all-zero channel means).
    pub skipped: bool,
    pub center: Option<(usize, usize)>,
    pub center_fell_back: bool,
    pub positive_channels: usize,
    pub negative_channels: usize,
    /// Mask sigmas of the weighted channels, in channel order.
    pub sigmas: Vec<f64>,
    pub sigma_clamped: usize,
    pub sigma_degenerate: usize,
}

/// A saliency map together with how each layer contributed.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub saliency: SaliencyMap,
    pub layers: Vec<LayerReport>,
}

/// Explains one detection: forward with activation capture, one backward
/// pass, per-channel weighting and Gaussian gating, and cross-layer fusion.
/// Deterministic for fixed weights and input.
pub fn explain<M: DetectorModel>(
    model: &M,
    image: &ImageInput,
    target: &ExplanationTarget,
    config: &GcameConfig,
) -> Result<SaliencyMap, Error> {
    explain_with_details(model, image, target, config).map(|e| e.saliency)
}

/// [`explain`], keeping the per-layer diagnostics.
pub fn explain_with_details<M: DetectorModel>(
    model: &M,
    image: &ImageInput,
    target: &ExplanationTarget,
    config: &GcameConfig,
) -> Result<Explanation, Error> {
    let layer_set = crate::detector::select_target_layers(&model.layer_graph(), model.kind())
        .map_err(|e| e.at_stage("select-target-layers"))?;
    let (_, session) = model
        .forward_with_capture(image, &layer_set, config.objectness_threshold)
        .map_err(|e| e.at_stage("forward-capture"))?;
    let captures = compute_gradient_maps(model, &session, target)
        .map_err(|e| e.at_stage("gradient-maps"))?;

    let mut combinations = Vec::new();
    let mut reports = Vec::new();
    for capture in captures {
        let stride = layer_set
            .layers
            .iter()
            .find(|l| l.id == capture.layer_id)
            .map(|l| l.stride)
            .unwrap_or(0);
        let mut report = LayerReport {
            layer_id: capture.layer_id.clone(),
            stride,
            skipped: true,
            center: None,
            center_fell_back: false,
            positive_channels: 0,
            negative_channels: 0,
            sigmas: Vec::new(),
            sigma_clamped: 0,
            sigma_degenerate: 0,
        };
        if capture.gradient_is_zero() {
            reports.push(report);
            continue;
        }
        let center =
            locate_center(&capture, model.kind()).map_err(|e| e.at_stage("locate-center"))?;
        report.center = Some((center.row, center.col));
        report.center_fell_back = center.fell_back;
        let weighting = weight_feature_maps(&capture);
        report.positive_channels = weighting.positive.len();
        report.negative_channels = weighting.negative.len();
        if weighting.is_empty() {
            reports.push(report);
            continue;
        }
        let masks = if config.force_uniform_masks {
            ChannelMasks::Uniform
        } else {
            let mut per_channel: Vec<Option<GaussianMask>> = vec![None; capture.channels()];
            let mut weighted: Vec<usize> = weighting.positive.clone();
            weighted.extend_from_slice(&weighting.negative);
            weighted.sort_unstable();
            for ch in weighted {
                let spec = compute_sigma(
                    &capture,
                    ch,
                    (center.row, center.col),
                    image.h(),
                    image.w(),
                )
                .map_err(|e| e.at_stage("compute-sigma"))?;
                report.sigmas.push(spec.sigma);
                report.sigma_clamped += usize::from(spec.clamped);
                report.sigma_degenerate += usize::from(spec.degenerate);
                per_channel[ch] = Some(generate_gaussian_mask(&spec));
            }
            ChannelMasks::PerChannel(per_channel)
        };
        report.skipped = false;
        reports.push(report);
        combinations.push(LayerCombination {
            capture,
            weighting,
            masks,
        });
    }
    let saliency = combine_saliency(
        &combinations,
        image.h(),
        image.w(),
        target.clone(),
        Method::Gcame,
    )
    .map_err(|e| e.at_stage("combine"))?;
    Ok(Explanation {
        saliency,
        layers: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{BoxPx, Detection};
    use crate::grid::Grid3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn capture(gradient: Grid3) -> GradientCapture {
        let activation = Grid3::zeros(gradient.c(), gradient.h(), gradient.w());
        GradientCapture {
            layer_id: "layer".into(),
            stride: 8,
            activation,
            gradient,
        }
    }

    fn dummy_target() -> ExplanationTarget {
        ExplanationTarget::for_detection(Detection {
            bbox: BoxPx::new(0.0, 0.0, 8.0, 8.0),
            objectness: 0.9,
            class_scores: vec![0.8, 0.2],
            class_index: 0,
            box_index: 0,
        })
    }

    #[test]
    fn center_is_the_unique_nonzero_pixel() {
        let mut g = Grid3::zeros(4, 8, 8);
        g.set(2, 3, 7, 1.0);
        let c = locate_center(&capture(g), ModelKind::OneStage).unwrap();
        assert_eq!((c.row, c.col, c.fell_back), (3, 7, false));
    }

    #[test]
    fn center_tie_breaks_row_major() {
        let mut g = Grid3::zeros(1, 8, 8);
        g.set(0, 0, 0, 2.0);
        g.set(0, 5, 5, 2.0);
        let c = locate_center(&capture(g), ModelKind::Toy).unwrap();
        assert_eq!((c.row, c.col), (0, 0));
    }

    #[test]
    fn center_flags_one_stage_fallback() {
        let mut g = Grid3::zeros(1, 8, 8);
        g.set(0, 1, 1, 1.0);
        g.set(0, 2, 2, 3.0);
        let c = locate_center(&capture(g.clone()), ModelKind::OneStage).unwrap();
        assert_eq!((c.row, c.col, c.fell_back), (2, 2, true));
        let c = locate_center(&capture(g), ModelKind::TwoStage).unwrap();
        assert!(!c.fell_back);
    }

    #[test]
    fn center_requires_signal() {
        let g = Grid3::zeros(2, 4, 4);
        assert!(matches!(
            locate_center(&capture(g), ModelKind::Toy),
            Err(Error::NoGradientSignal(_))
        ));
    }

    #[test]
    fn weighting_partitions_by_sign_and_drops_zero_mean() {
        let mut g = Grid3::zeros(3, 2, 2);
        for (i, v) in [2.0, 2.0, 2.0, 2.0].iter().enumerate() {
            g.channel_mut(0)[i] = *v;
        }
        g.channel_mut(1).copy_from_slice(&[1.0, -1.0, 1.0, -1.0]);
        g.channel_mut(2).copy_from_slice(&[-0.5, -0.5, -0.5, -0.5]);
        let w = weight_feature_maps(&capture(g));
        assert_eq!(w.alpha[0], 2.0);
        assert_eq!(w.alpha[1], 0.0);
        assert_eq!(w.alpha[2], -0.5);
        assert_eq!(w.positive, vec![0]);
        assert_eq!(w.negative, vec![2]);
    }

    #[test]
    fn weighting_matches_brute_force_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Grid3::zeros(8, 5, 7);
        for v in g.data_mut() {
            *v = rng.gen_range(-1.0f32..1.0);
        }
        let w = weight_feature_maps(&capture(g.clone()));
        for ch in 0..8 {
            let mut sum = 0.0f64;
            for &v in g.channel(ch) {
                sum += f64::from(v);
            }
            let mean = sum / 35.0;
            assert!((w.alpha[ch] - mean).abs() < 1e-9);
        }
    }

    fn sigma_capture(h: usize, w: usize, fill: f32) -> GradientCapture {
        let mut g = Grid3::zeros(1, h, w);
        g.channel_mut(0).fill(fill);
        capture(g)
    }

    #[test]
    fn sigma_matches_hand_evaluated_case() {
        // 80x80 features in a 640x640 input, mean gradient e^2: the scale
        // terms are ln(e^2) = 2 and ln(8), the radius term is 39.
        let cap = sigma_capture(80, 80, core::f32::consts::E * core::f32::consts::E);
        let spec = compute_sigma(&cap, 0, (40, 40), 640, 640).unwrap();
        let expected = 2.0 * libm::log(8.0) * 3.0 / 39.0;
        assert!((spec.sigma - expected).abs() < 1e-6, "sigma {}", spec.sigma);
        assert!((spec.sigma - 0.3199).abs() < 1e-4);
        assert!(!spec.clamped);
        assert!(!spec.degenerate);
        assert_eq!(spec.normalizer_z, 6400);
        assert!((spec.scale_s - 8.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_clamps_to_min_when_log_terms_vanish() {
        // Mean gradient 1 makes the magnitude term ln(1) = 0.
        let cap = sigma_capture(80, 80, 1.0);
        let spec = compute_sigma(&cap, 0, (0, 0), 640, 640).unwrap();
        assert_eq!(spec.sigma, SIGMA_MIN);
        assert!(spec.clamped);
        // Equal feature and input size makes the scale term ln(1) = 0.
        let cap = sigma_capture(80, 80, 7.0);
        let spec = compute_sigma(&cap, 0, (0, 0), 80, 80).unwrap();
        assert_eq!(spec.sigma, SIGMA_MIN);
        assert!(spec.clamped);
    }

    #[test]
    fn sigma_flags_zero_mean_as_degenerate() {
        let mut g = Grid3::zeros(1, 4, 4);
        g.channel_mut(0)[0] = 1.0;
        g.channel_mut(0)[1] = -1.0;
        let spec = compute_sigma(&capture(g), 0, (0, 0), 64, 64).unwrap();
        assert_eq!(spec.sigma, SIGMA_MIN);
        assert!(spec.degenerate);
    }

    #[test]
    fn sigma_flags_tiny_grids_as_degenerate() {
        // sqrt(4) = 2 makes the radius term floor((2-1)/2) = 0.
        let cap = sigma_capture(2, 2, 7.0);
        let spec = compute_sigma(&cap, 0, (0, 0), 64, 64).unwrap();
        assert_eq!(spec.sigma, SIGMA_MIN);
        assert!(spec.degenerate);
    }

    #[test]
    fn sigma_rejects_bad_channel() {
        let cap = sigma_capture(8, 8, 1.0);
        assert!(matches!(
            compute_sigma(&cap, 3, (0, 0), 64, 64),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn sigma_upper_clamp_engages_for_huge_means() {
        let cap = sigma_capture(16, 16, 1.0e30);
        let spec = compute_sigma(&cap, 0, (8, 8), 640, 640).unwrap();
        assert_eq!(spec.sigma, sigma_max(16, 16));
        assert!(spec.clamped);
    }

    fn mask_spec(h: usize, w: usize, center: (usize, usize), sigma: f64) -> GaussianMaskSpec {
        GaussianMaskSpec {
            grid_h: h,
            grid_w: w,
            center,
            sigma,
            scale_r: 0.0,
            scale_s: 1.0,
            normalizer_z: h * w,
            clamped: false,
            degenerate: false,
        }
    }

    #[test]
    fn mask_peak_is_exactly_one() {
        for sigma in [0.1, 0.5, 1.0, 3.0] {
            let m = generate_gaussian_mask(&mask_spec(9, 9, (4, 4), sigma));
            assert_eq!(m.get(4, 4), 1.0);
        }
    }

    #[test]
    fn mask_off_center_value_is_the_closed_form_ratio() {
        let m = generate_gaussian_mask(&mask_spec(5, 5, (2, 2), 1.0));
        let expected = libm::exp(-0.5);
        assert!((m.get(2, 1) - expected).abs() < 1e-9);
        assert!((m.get(1, 2) - expected).abs() < 1e-9);
    }

    #[test]
    fn mask_is_exactly_symmetric_about_an_interior_center() {
        let m = generate_gaussian_mask(&mask_spec(9, 9, (4, 4), 0.8));
        for d in 1..=4usize {
            assert_eq!(m.get(4 + d, 4), m.get(4 - d, 4));
            assert_eq!(m.get(4, 4 + d), m.get(4, 4 - d));
            assert_eq!(m.get(4 + d, 4 + d), m.get(4 - d, 4 - d));
        }
    }

    #[test]
    fn wider_sigma_never_decreases_off_center_values() {
        let narrow = generate_gaussian_mask(&mask_spec(11, 11, (5, 5), 0.5));
        let wide = generate_gaussian_mask(&mask_spec(11, 11, (5, 5), 2.5));
        for (n, w) in narrow.values().iter().zip(wide.values()) {
            assert!(w >= n);
        }
    }

    #[test]
    fn min_sigma_mask_decays_within_one_pixel() {
        let m = generate_gaussian_mask(&mask_spec(7, 7, (3, 3), SIGMA_MIN));
        for i in 0..7 {
            for j in 0..7 {
                if (i, j) != (3, 3) {
                    assert!(m.get(i, j) < 0.01);
                }
            }
        }
    }

    fn single_channel_layer(mask_sigma: f64) -> LayerCombination {
        // One channel, gradient mean 1 (positive), activation constant 1.
        let (h, w) = (16, 16);
        let mut gradient = Grid3::zeros(1, h, w);
        gradient.channel_mut(0).fill(1.0);
        let mut activation = Grid3::zeros(1, h, w);
        activation.channel_mut(0).fill(1.0);
        let capture = GradientCapture {
            layer_id: "layer".into(),
            stride: 1,
            activation,
            gradient,
        };
        let weighting = weight_feature_maps(&capture);
        let mask = generate_gaussian_mask(&mask_spec(h, w, (7, 7), mask_sigma));
        LayerCombination {
            capture,
            weighting,
            masks: ChannelMasks::PerChannel(vec![Some(mask)]),
        }
    }

    #[test]
    fn constant_activation_saliency_follows_the_mask() {
        let layer = single_channel_layer(2.0);
        let map = combine_saliency(&[layer], 16, 16, dummy_target(), Method::Gcame).unwrap();
        assert_eq!(map.values.argmax(), (7, 7));
        // Ordering survives the normalization: nearer the center is hotter.
        assert!(map.values.get(7, 8) > map.values.get(7, 10));
        assert!(map.values.get(10, 7) > map.values.get(13, 7));
        assert!(!map.constant);
    }

    #[test]
    fn combine_rejects_all_skippable_layers() {
        let g = Grid3::zeros(2, 4, 4);
        let cap = capture(g);
        let weighting = weight_feature_maps(&cap);
        let layer = LayerCombination {
            capture: cap,
            weighting,
            masks: ChannelMasks::Uniform,
        };
        assert!(matches!(
            combine_saliency(&[layer], 32, 32, dummy_target(), Method::Gcame),
            Err(Error::EmptyExplanation)
        ));
        assert!(matches!(
            combine_saliency(&[], 32, 32, dummy_target(), Method::Gcame),
            Err(Error::EmptyExplanation)
        ));
    }

    #[test]
    fn combine_flags_constant_maps() {
        // Negative-weighted channel on positive activations drives the whole
        // accumulator through the literal subtraction to a uniform positive
        // map; min-max then collapses it to zero and flags it.
        let (h, w) = (8, 8);
        let mut gradient = Grid3::zeros(1, h, w);
        gradient.channel_mut(0).fill(-1.0);
        let mut activation = Grid3::zeros(1, h, w);
        activation.channel_mut(0).fill(1.0);
        let cap = GradientCapture {
            layer_id: "layer".into(),
            stride: 1,
            activation,
            gradient,
        };
        let weighting = weight_feature_maps(&cap);
        let layer = LayerCombination {
            capture: cap,
            weighting,
            masks: ChannelMasks::Uniform,
        };
        let map = combine_saliency(&[layer], 8, 8, dummy_target(), Method::GradCam).unwrap();
        assert!(map.constant);
        assert!(map.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_weighted_sum_is_subtracted_as_written() {
        // One positive and one negative channel with distinct activations:
        // the negative channel's subtraction adds |alpha| * A.
        let (h, w) = (2, 2);
        let mut gradient = Grid3::zeros(2, h, w);
        gradient.channel_mut(0).fill(1.0);
        gradient.channel_mut(1).fill(-2.0);
        let mut activation = Grid3::zeros(2, h, w);
        activation.channel_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        activation.channel_mut(1).copy_from_slice(&[0.0, 1.0, 0.0, 0.0]);
        let cap = GradientCapture {
            layer_id: "layer".into(),
            stride: 1,
            activation,
            gradient,
        };
        let weighting = weight_feature_maps(&cap);
        let layer = LayerCombination {
            capture: cap,
            weighting,
            masks: ChannelMasks::Uniform,
        };
        let map = combine_saliency(&[layer], 2, 2, dummy_target(), Method::GradCam).unwrap();
        // Pre-normalization: pixel0 = 1*1 = 1, pixel1 = -(-2*1) = 2.
        // After min-max: pixel1 = 1, pixel0 = 0.5.
        assert_eq!(map.values.get(0, 1), 1.0);
        assert!((map.values.get(0, 0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn saliency_values_stay_in_unit_range_under_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let (k, h, w) = (4, 6, 6);
            let mut gradient = Grid3::zeros(k, h, w);
            let mut activation = Grid3::zeros(k, h, w);
            for v in gradient.data_mut() {
                *v = rng.gen_range(-1.0f32..1.0);
            }
            for v in activation.data_mut() {
                *v = rng.gen_range(-1.0f32..1.0);
            }
            let cap = GradientCapture {
                layer_id: "layer".into(),
                stride: 8,
                activation,
                gradient,
            };
            let center = locate_center(&cap, ModelKind::Toy).unwrap();
            let weighting = weight_feature_maps(&cap);
            let mut masks: Vec<Option<GaussianMask>> = vec![None; k];
            for ch in 0..k {
                if weighting.alpha[ch] != 0.0 {
                    let spec =
                        compute_sigma(&cap, ch, (center.row, center.col), 48, 48).unwrap();
                    masks[ch] = Some(generate_gaussian_mask(&spec));
                }
            }
            let layer = LayerCombination {
                capture: cap,
                weighting,
                masks: ChannelMasks::PerChannel(masks),
            };
            let map =
                combine_saliency(&[layer], 48, 48, dummy_target(), Method::Gcame).unwrap();
            assert!(map.values.all_finite());
            let (lo, hi) = map.values.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
        }
    }
}
