//! Uniform interface over object detectors.
//!
//! A detector exposes three things to the explanation pipeline: its parsed
//! predictions, a set of target layers carrying spatial feature maps, and a
//! differentiable accessor for the target score. The bundled toy detector
//! implements the whole contract; real one-stage (YOLOX-style) and two-stage
//! (Faster-RCNN-style) models plug in through [`DetectorModel`], and their
//! standard layer layouts ship as graph presets so target-layer selection
//! works without the weights.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::grid::Grid3;
use crate::image::ImageInput;

/// Axis-aligned box in input-image pixels, corners `(x1, y1)`-`(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxPx {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BoxPx {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        BoxPx { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f32 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }
}

/// One predicted box: corners, objectness, and the per-class score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoxPx,
    pub objectness: f32,
    pub class_scores: Vec<f32>,
    /// Argmax of `class_scores`.
    pub class_index: usize,
    /// Row index in the raw model output, kept for gradient routing.
    pub box_index: usize,
}

/// Which score the backward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    /// Raw class score of the target box.
    #[default]
    ClassScore,
    /// Class score multiplied by objectness.
    ObjectnessWeighted,
}

/// A detector prediction selected for explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationTarget {
    pub detection: Detection,
    pub score_kind: ScoreKind,
    pub target_class: usize,
}

impl ExplanationTarget {
    /// Explains the detection's own predicted class with the default score.
    pub fn for_detection(detection: Detection) -> Self {
        let target_class = detection.class_index;
        ExplanationTarget {
            detection,
            score_kind: ScoreKind::ClassScore,
            target_class,
        }
    }
}

/// Raw detector output: `n` rows of `4 + 1 + C` values each
/// `(x1, y1, x2, y2, objectness, class scores...)`.
#[derive(Debug, Clone)]
pub struct RawOutput {
    num_classes: usize,
    stride: usize,
    data: Vec<f32>,
}

impl RawOutput {
    /// Wraps a flat row-major buffer. `stride` is the per-row length and must
    /// equal `4 + 1 + num_classes`; checked again by [`parse_detections`].
    pub fn new(num_classes: usize, stride: usize, data: Vec<f32>) -> Self {
        RawOutput {
            num_classes,
            stride,
            data,
        }
    }

    pub fn num_rows(&self) -> usize {
        if self.stride == 0 {
            0
        } else {
            self.data.len() / self.stride
        }
    }

    pub fn row(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.stride..(idx + 1) * self.stride]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Parses raw rows into detections with objectness at or above `threshold`,
/// sorted by objectness descending. `box_index` preserves the origin row.
///
/// Pure function: the same raw output always yields the identical list.
pub fn parse_detections(raw: &RawOutput, threshold: f32) -> Result<Vec<Detection>, Error> {
    let expected = 4 + 1 + raw.num_classes;
    if raw.stride != expected || raw.data.len() % expected != 0 {
        return Err(Error::MalformedOutput {
            expected_row_len: expected,
            got: raw.stride,
        });
    }
    let mut out = Vec::new();
    for idx in 0..raw.num_rows() {
        let row = raw.row(idx);
        let objectness = row[4];
        if objectness < threshold {
            continue;
        }
        let class_scores = row[5..].to_owned();
        let class_index = argmax_slice(&class_scores);
        out.push(Detection {
            bbox: BoxPx::new(row[0], row[1], row[2], row[3]),
            objectness,
            class_scores,
            class_index,
            box_index: idx,
        });
    }
    // Stable sort keeps row order among equal-objectness detections.
    out.sort_by(|a, b| b.objectness.partial_cmp(&a.objectness).unwrap());
    Ok(out)
}

fn argmax_slice(values: &[f32]) -> usize {
    let mut best = 0usize;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Greedy class-aware non-maximum suppression, highest objectness first.
pub fn nms(detections: &[Detection], iou_threshold: f32) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .objectness
            .partial_cmp(&detections[a].objectness)
            .unwrap()
    });
    let mut keep: Vec<Detection> = Vec::new();
    for &i in &order {
        let d = &detections[i];
        let suppressed = keep.iter().any(|k| {
            k.class_index == d.class_index
                && crate::metrics::pairwise_iou(&k.bbox, &d.bbox) > f64::from(iou_threshold)
        });
        if !suppressed {
            keep.push(d.clone());
        }
    }
    keep
}

// ---------------------------------------------------------------------------
// Layer graphs and target-layer selection
// ---------------------------------------------------------------------------

/// Detector families with distinct target-layer rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    OneStage,
    TwoStage,
    Toy,
}

/// Which branch of the network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Backbone,
    /// Feature pyramid branch `i` (two-stage models).
    Fpn(u8),
    /// Shared per-branch head stem `i` feeding both predictors.
    HeadStem(u8),
    /// Classification branch of head `i`.
    HeadClass(u8),
    /// Regression branch of head `i`; never selected as a target.
    HeadRegression(u8),
}

/// One layer in a model's graph description.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: String,
    pub is_conv: bool,
    pub branch: Branch,
    /// Input pixels per feature-map pixel at this layer's output.
    pub stride: u32,
    /// Final 1x1 predictor conv emitting box/score values.
    pub is_predictor: bool,
    /// Toy models declare their target layer explicitly.
    pub declared_target: bool,
}

/// Ordered layer description of a model, input end first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGraph {
    pub layers: Vec<LayerNode>,
}

impl LayerGraph {
    pub fn find(&self, id: &str) -> Option<&LayerNode> {
        self.layers.iter().find(|l| l.id == id)
    }
}

/// One selected target layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLayer {
    pub id: String,
    /// Input pixels per feature-map pixel.
    pub stride: u32,
}

/// Ordered set of layers the explainer hooks.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetLayerSet {
    pub layers: Vec<TargetLayer>,
}

impl TargetLayerSet {
    pub fn ids(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.id.as_str()).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.layers.iter().any(|l| l.id == id)
    }
}

/// Which convolution of a one-stage classification branch to hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OneStageTargetPolicy {
    /// Last feature conv of the classification branch (the layer feeding the
    /// 1x1 predictor). Default.
    #[default]
    FeatureConv,
    /// The 1x1 predictor conv itself.
    PredictorConv,
}

/// Selects explanation target layers for a model family.
///
/// One-stage: the final convolution of each detection-head branch, never a
/// regression-branch layer. Two-stage: the final convolution of each feature
/// pyramid branch. Toy: the model's declared head layer(s).
pub fn select_target_layers(graph: &LayerGraph, kind: ModelKind) -> Result<TargetLayerSet, Error> {
    select_target_layers_with(graph, kind, OneStageTargetPolicy::default())
}

/// [`select_target_layers`] with an explicit one-stage hook policy.
pub fn select_target_layers_with(
    graph: &LayerGraph,
    kind: ModelKind,
    policy: OneStageTargetPolicy,
) -> Result<TargetLayerSet, Error> {
    if !graph.layers.iter().any(|l| l.is_conv) {
        return Err(Error::UnsupportedArchitecture(
            "model exposes no convolution layers".into(),
        ));
    }
    let mut layers: Vec<TargetLayer> = Vec::new();
    match kind {
        ModelKind::Toy => {
            for node in graph.layers.iter().filter(|l| l.declared_target) {
                layers.push(TargetLayer {
                    id: node.id.clone(),
                    stride: node.stride,
                });
            }
        }
        ModelKind::OneStage => {
            for b in branch_indices(graph, |br| matches!(br, Branch::HeadClass(_))) {
                let candidates: Vec<&LayerNode> = graph
                    .layers
                    .iter()
                    .filter(|l| l.is_conv && l.branch == Branch::HeadClass(b))
                    .collect();
                let pick = match policy {
                    OneStageTargetPolicy::FeatureConv => candidates
                        .iter()
                        .filter(|l| !l.is_predictor)
                        .last()
                        .or_else(|| candidates.last()),
                    OneStageTargetPolicy::PredictorConv => candidates.last(),
                };
                if let Some(node) = pick {
                    layers.push(TargetLayer {
                        id: node.id.clone(),
                        stride: node.stride,
                    });
                }
            }
        }
        ModelKind::TwoStage => {
            for b in branch_indices(graph, |br| matches!(br, Branch::Fpn(_))) {
                if let Some(node) = graph
                    .layers
                    .iter()
                    .filter(|l| l.is_conv && l.branch == Branch::Fpn(b))
                    .last()
                {
                    layers.push(TargetLayer {
                        id: node.id.clone(),
                        stride: node.stride,
                    });
                }
            }
        }
    }
    if layers.is_empty() {
        return Err(Error::UnsupportedArchitecture(format!(
            "no target layers found for {kind:?}"
        )));
    }
    Ok(TargetLayerSet { layers })
}

fn branch_indices(graph: &LayerGraph, pred: impl Fn(Branch) -> bool) -> Vec<u8> {
    let mut seen: Vec<u8> = Vec::new();
    for l in &graph.layers {
        let idx = match l.branch {
            Branch::Fpn(i) | Branch::HeadStem(i) | Branch::HeadClass(i) | Branch::HeadRegression(i) => i,
            Branch::Backbone => continue,
        };
        if pred(l.branch) && !seen.contains(&idx) {
            seen.push(idx);
        }
    }
    seen.sort_unstable();
    seen
}

/// Standard one-stage head layout: three branches at strides 8/16/32, each
/// with classification and regression sub-branches ending in 1x1 predictors.
pub fn one_stage_graph_preset() -> LayerGraph {
    let mut layers = Vec::new();
    for (i, name) in ["backbone.dark3", "backbone.dark4", "backbone.dark5"]
        .iter()
        .enumerate()
    {
        layers.push(LayerNode {
            id: (*name).into(),
            is_conv: true,
            branch: Branch::Backbone,
            stride: 8 << i,
            is_predictor: false,
            declared_target: false,
        });
    }
    for b in 0u8..3 {
        let stride = 8u32 << b;
        layers.push(LayerNode {
            id: format!("head.stem{b}"),
            is_conv: true,
            branch: Branch::HeadStem(b),
            stride,
            is_predictor: false,
            declared_target: false,
        });
        for c in 0..2 {
            layers.push(LayerNode {
                id: format!("head.cls_conv{b}.{c}"),
                is_conv: true,
                branch: Branch::HeadClass(b),
                stride,
                is_predictor: false,
                declared_target: false,
            });
        }
        layers.push(LayerNode {
            id: format!("head.cls_pred{b}"),
            is_conv: true,
            branch: Branch::HeadClass(b),
            stride,
            is_predictor: true,
            declared_target: false,
        });
        for c in 0..2 {
            layers.push(LayerNode {
                id: format!("head.reg_conv{b}.{c}"),
                is_conv: true,
                branch: Branch::HeadRegression(b),
                stride,
                is_predictor: false,
                declared_target: false,
            });
        }
        layers.push(LayerNode {
            id: format!("head.reg_pred{b}"),
            is_conv: true,
            branch: Branch::HeadRegression(b),
            stride,
            is_predictor: true,
            declared_target: false,
        });
    }
    LayerGraph { layers }
}

/// Standard two-stage layout: four feature-pyramid branches P2-P5.
pub fn two_stage_graph_preset() -> LayerGraph {
    let mut layers = Vec::new();
    layers.push(LayerNode {
        id: "backbone.res2".into(),
        is_conv: true,
        branch: Branch::Backbone,
        stride: 4,
        is_predictor: false,
        declared_target: false,
    });
    for b in 0u8..4 {
        let stride = 4u32 << b;
        layers.push(LayerNode {
            id: format!("fpn.lateral{}", b + 2),
            is_conv: true,
            branch: Branch::Fpn(b),
            stride,
            is_predictor: false,
            declared_target: false,
        });
        layers.push(LayerNode {
            id: format!("fpn.output{}", b + 2),
            is_conv: true,
            branch: Branch::Fpn(b),
            stride,
            is_predictor: false,
            declared_target: false,
        });
    }
    LayerGraph { layers }
}

// ---------------------------------------------------------------------------
// Capture sessions and the model trait
// ---------------------------------------------------------------------------

/// Retained activations for one forward pass, keyed by target layer.
pub trait CaptureSession {
    /// Activation grid of a captured layer; layers outside the target set are
    /// a lookup error.
    fn activation(&self, layer_id: &str) -> Result<&Grid3, Error>;

    /// Ids of the captured layers, in target-set order.
    fn captured_layer_ids(&self) -> Vec<String>;

    /// Detections parsed from this forward pass.
    fn detections(&self) -> &[Detection];
}

/// Paired activation and gradient map for one target layer.
#[derive(Debug, Clone)]
pub struct GradientCapture {
    pub layer_id: String,
    /// Input pixels per feature-map pixel.
    pub stride: u32,
    /// Activation `A`: k x h x w.
    pub activation: Grid3,
    /// Gradient of the target score w.r.t. `A`: same shape.
    pub gradient: Grid3,
}

impl GradientCapture {
    pub fn channels(&self) -> usize {
        self.activation.c()
    }

    pub fn feature_h(&self) -> usize {
        self.activation.h()
    }

    pub fn feature_w(&self) -> usize {
        self.activation.w()
    }

    /// True when every gradient value is exactly zero (no signal; skippable).
    pub fn gradient_is_zero(&self) -> bool {
        self.gradient.data().iter().all(|&v| v == 0.0)
    }
}

/// Contract every runnable detector implements for the explanation pipeline.
///
/// A session binds retained activations to one forward pass; sessions are
/// single-threaded. Parallelism comes from running multiple (model, session)
/// pairs side by side.
pub trait DetectorModel {
    type Session: CaptureSession;

    fn kind(&self) -> ModelKind;
    fn num_classes(&self) -> usize;
    fn layer_graph(&self) -> LayerGraph;

    /// Forward pass with native post-processing (threshold + NMS).
    fn detect(&self, image: &ImageInput, objectness_threshold: f32)
        -> Result<Vec<Detection>, Error>;

    /// Forward pass that also retains activations for every target layer.
    fn forward_with_capture(
        &self,
        image: &ImageInput,
        layers: &TargetLayerSet,
        objectness_threshold: f32,
    ) -> Result<(Vec<Detection>, Self::Session), Error>;

    /// One backward pass of the target score, yielding a gradient capture per
    /// target layer. Layers with no gradient flow come back all-zero.
    fn backward_scores(
        &self,
        session: &Self::Session,
        target: &ExplanationTarget,
    ) -> Result<Vec<GradientCapture>, Error>;

    /// Hash of all weights, for mutation checks.
    fn weights_hash(&self) -> u64;
}

/// Models whose layers can be reinitialized for randomization sanity checks.
pub trait RandomizableModel: DetectorModel + Clone {
    /// Reinitializes the named layers in place from `N(0, std)`.
    fn randomize_layers(&mut self, layer_ids: &[String], std: f32, seed: u64)
        -> Result<(), Error>;
}
