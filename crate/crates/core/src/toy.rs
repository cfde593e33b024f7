//! A small, fully self-contained CNN detector used as the test workhorse.
//!
//! Three conv/pool backbone stages feed one (optionally two) detection
//! heads; each head has a shared 3x3 stem convolution — the explanation
//! target layer — and two 1x1 predictors for class logits and box/objectness
//! logits. Every cell of a head's grid predicts one box in the
//! `(x1, y1, x2, y2, objectness, class scores...)` layout.
//!
//! The forward pass is plain sequential f32 arithmetic, so identical inputs
//! and weights produce bit-identical outputs on every platform. Gradients of
//! a detection's score w.r.t. the stem activations are computed analytically
//! through the 1x1 predictors; full backpropagation for training lives in
//! [`train`].

pub mod scene;
pub mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::{
    nms, parse_detections, Branch, CaptureSession, Detection, DetectorModel, ExplanationTarget,
    GradientCapture, LayerGraph, LayerNode, ModelKind, RandomizableModel, RawOutput,
    TargetLayerSet,
};
use crate::error::Error;
use crate::grid::Grid3;
use crate::hash::Fnv1a;
use crate::image::ImageInput;

/// IoU threshold of the detector's native non-maximum suppression.
pub const TOY_NMS_IOU: f32 = 0.5;

/// Box size logits are clamped to this magnitude before exponentiation.
const BOX_LOG_CLAMP: f32 = 4.0;

/// Layer ids eligible for randomization checks, ordered from the output end
/// of the network down to the input. The regression predictor is excluded:
/// randomizing it destroys the box and with it the notion of a target.
pub const RANDOMIZATION_CANDIDATES: [&str; 5] = [
    "head0.cls",
    "head0.stem",
    "backbone.conv3",
    "backbone.conv2",
    "backbone.conv1",
];

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

// ---------------------------------------------------------------------------
// Convolution primitive
// ---------------------------------------------------------------------------

/// Dense 2-D convolution, stride 1, zero padding `k/2` (so 3x3 keeps the
/// spatial size and 1x1 is pointwise). Weights are `[out_c][in_c][k][k]`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn zeros(in_c: usize, out_c: usize, k: usize) -> Self {
        ConvLayer {
            in_c,
            out_c,
            k,
            weights: vec![0.0; out_c * in_c * k * k],
            bias: vec![0.0; out_c],
        }
    }

    /// He-style seeded initialization: weights from N(0, sqrt(2 / fan_in)),
    /// biases zero.
    pub fn init(in_c: usize, out_c: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = ConvLayer::zeros(in_c, out_c, k);
        let std = libm::sqrtf(2.0 / (in_c * k * k) as f32);
        for w in &mut layer.weights {
            *w = sample_normal(rng) * std;
        }
        layer
    }

    #[inline]
    fn w(&self, oc: usize, ic: usize, ki: usize, kj: usize) -> f32 {
        self.weights[((oc * self.in_c + ic) * self.k + ki) * self.k + kj]
    }

    pub fn forward(&self, input: &Grid3) -> Grid3 {
        debug_assert_eq!(input.c(), self.in_c);
        let (h, w) = (input.h(), input.w());
        let pad = self.k / 2;
        let mut out = Grid3::zeros(self.out_c, h, w);
        for oc in 0..self.out_c {
            let plane = out.channel_mut(oc);
            for ic in 0..self.in_c {
                let src = input.channel(ic);
                for ki in 0..self.k {
                    for kj in 0..self.k {
                        let wv = self.w(oc, ic, ki, kj);
                        if wv == 0.0 {
                            continue;
                        }
                        let di = ki as isize - pad as isize;
                        let dj = kj as isize - pad as isize;
                        let i0 = (-di).max(0) as usize;
                        let i1 = (h as isize - di).min(h as isize) as usize;
                        for i in i0..i1 {
                            let si = (i as isize + di) as usize;
                            let j0 = (-dj).max(0) as usize;
                            let j1 = (w as isize - dj).min(w as isize) as usize;
                            let dst = &mut plane[i * w + j0..i * w + j1];
                            let srow = &src[si * w + (j0 as isize + dj) as usize
                                ..si * w + (j1 as isize + dj) as usize];
                            for (d, s) in dst.iter_mut().zip(srow) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
            for v in out.channel_mut(oc) {
                *v += self.bias[oc];
            }
        }
        out
    }

    /// Gradients of a scalar loss w.r.t. this layer's input, weights, and
    /// biases, given the gradient w.r.t. its output.
    pub fn backward(&self, input: &Grid3, grad_out: &Grid3) -> (Grid3, ConvGrads) {
        let (h, w) = (input.h(), input.w());
        let pad = self.k / 2;
        let mut grad_in = Grid3::zeros(self.in_c, h, w);
        let mut grads = ConvGrads::zeros(self);
        for oc in 0..self.out_c {
            let gout = grad_out.channel(oc);
            grads.bias[oc] += gout.iter().sum::<f32>();
            for ic in 0..self.in_c {
                let src = input.channel(ic);
                let gin = grad_in.channel_mut(ic);
                for ki in 0..self.k {
                    for kj in 0..self.k {
                        let di = ki as isize - pad as isize;
                        let dj = kj as isize - pad as isize;
                        let wv = self.w(oc, ic, ki, kj);
                        let widx = ((oc * self.in_c + ic) * self.k + ki) * self.k + kj;
                        let mut wgrad = 0.0f32;
                        for i in 0..h {
                            let si = i as isize + di;
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            let si = si as usize;
                            for j in 0..w {
                                let sj = j as isize + dj;
                                if sj < 0 || sj >= w as isize {
                                    continue;
                                }
                                let sj = sj as usize;
                                let g = gout[i * w + j];
                                wgrad += g * src[si * w + sj];
                                gin[si * w + sj] += g * wv;
                            }
                        }
                        grads.weights[widx] += wgrad;
                    }
                }
            }
        }
        (grad_in, grads)
    }
}

/// Parameter gradients for one convolution layer.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvGrads {
    pub fn zeros(layer: &ConvLayer) -> Self {
        ConvGrads {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f32 {
    // Box-Muller; 1 - u keeps the log argument strictly positive.
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    (libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)) as f32
}

fn relu(mut g: Grid3) -> Grid3 {
    for v in g.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    g
}

/// 2x2 max pooling with stride 2. Returns the pooled grid and the flat input
/// index each output element took its value from (ties: first in scan
/// order), for exact gradient routing.
pub fn maxpool2(input: &Grid3) -> (Grid3, Vec<u32>) {
    let (c, h, w) = (input.c(), input.h(), input.w());
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Grid3::zeros(c, oh, ow);
    let mut idx = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let src = input.channel(ch);
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_at = 0usize;
                for di in 0..2 {
                    for dj in 0..2 {
                        let at = (2 * i + di) * w + 2 * j + dj;
                        if src[at] > best {
                            best = src[at];
                            best_at = at;
                        }
                    }
                }
                out.set(ch, i, j, best);
                idx[(ch * oh + i) * ow + j] = best_at as u32;
            }
        }
    }
    (out, idx)
}

/// Scatters pooled-output gradients back to the argmax input positions.
pub fn maxpool2_backward(grad_out: &Grid3, indices: &[u32], in_h: usize, in_w: usize) -> Grid3 {
    let c = grad_out.c();
    let (oh, ow) = (grad_out.h(), grad_out.w());
    let mut grad_in = Grid3::zeros(c, in_h, in_w);
    for ch in 0..c {
        let gin = grad_in.channel_mut(ch);
        let gout = grad_out.channel(ch);
        for o in 0..oh * ow {
            gin[indices[(ch * oh * ow) + o] as usize] += gout[o];
        }
    }
    grad_in
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// One detection head: a 3x3 stem (the explanation target layer) and two
/// 1x1 predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyHead {
    pub stem: ConvLayer,
    /// Class logits, `num_classes` channels.
    pub cls: ConvLayer,
    /// Box and objectness logits: tx, ty, tw, th, obj.
    pub reg: ConvLayer,
    /// Input pixels per cell of this head's grid.
    pub stride: u32,
}

/// Where [`build_toy_detector`] takes its weights from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    /// Fresh seeded initialization.
    Seed(u64),
    /// The checkpoint compiled into the crate.
    Bundled,
}

/// Architecture request for [`build_toy_detector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySpec {
    pub input_h: usize,
    pub input_w: usize,
    pub num_classes: usize,
    /// 1 or 2; the second head sees a further-pooled feature map.
    pub num_heads: usize,
    pub weights: WeightSource,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            input_h: 128,
            input_w: 128,
            num_classes: 2,
            num_heads: 1,
            weights: WeightSource::Bundled,
        }
    }
}

const STEM_CHANNELS: usize = 16;
const BACKBONE_CHANNELS: [usize; 3] = [8, 16, 32];

/// The detector: three conv/pool backbone stages and one or two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetector {
    pub input_h: usize,
    pub input_w: usize,
    num_classes: usize,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub conv3: ConvLayer,
    pub heads: Vec<ToyHead>,
}

/// Builds the detector per `spec`, either freshly initialized from a seed or
/// from the bundled checkpoint. A bundled request whose architecture fields
/// disagree with the checkpoint is a configuration error.
pub fn build_toy_detector(spec: &ToySpec) -> Result<ToyDetector, Error> {
    if !(1..=2).contains(&spec.num_heads) {
        return Err(Error::Configuration("supported head counts are 1 and 2".into()));
    }
    if spec.num_classes == 0 {
        return Err(Error::Configuration("need at least one class".into()));
    }
    if spec.input_h % 16 != 0 || spec.input_w % 16 != 0 {
        return Err(Error::Configuration(
            "input sides must be divisible by 16 so pooling stays exact".into(),
        ));
    }
    match spec.weights {
        WeightSource::Seed(seed) => Ok(ToyDetector::seeded(spec, seed)),
        WeightSource::Bundled => {
            let model = ToyDetector::from_checkpoint(BUNDLED_CHECKPOINT)?;
            if model.input_h != spec.input_h
                || model.input_w != spec.input_w
                || model.num_classes != spec.num_classes
                || model.heads.len() != spec.num_heads
            {
                return Err(Error::Configuration(format!(
                    "bundled checkpoint is {}x{}, {} classes, {} head(s); spec disagrees",
                    model.input_h,
                    model.input_w,
                    model.num_classes,
                    model.heads.len()
                )));
            }
            Ok(model)
        }
    }
}

static BUNDLED_CHECKPOINT: &[u8] = include_bytes!("../fixtures/toy_detector.gtd");

/// Detection recall of the bundled checkpoint over its 200-scene evaluation
/// split (IoU >= 0.5, matching class), measured once after training and
/// frozen here. The evaluation is deterministic, so reruns must reproduce it
/// exactly.
pub const BUNDLED_EVAL_RECALL: f64 = 1.0;

impl ToyDetector {
    fn seeded(spec: &ToySpec, seed: u64) -> ToyDetector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = ConvLayer::init(3, BACKBONE_CHANNELS[0], 3, &mut rng);
        let conv2 = ConvLayer::init(BACKBONE_CHANNELS[0], BACKBONE_CHANNELS[1], 3, &mut rng);
        let conv3 = ConvLayer::init(BACKBONE_CHANNELS[1], BACKBONE_CHANNELS[2], 3, &mut rng);
        let mut heads = Vec::new();
        for h in 0..spec.num_heads {
            let stem = ConvLayer::init(BACKBONE_CHANNELS[2], STEM_CHANNELS, 3, &mut rng);
            let cls = ConvLayer::init(STEM_CHANNELS, spec.num_classes, 1, &mut rng);
            let mut reg = ConvLayer::init(STEM_CHANNELS, 5, 1, &mut rng);
            // Start objectness pessimistic so early training is not flooded
            // with positives.
            reg.bias[4] = -2.0;
            heads.push(ToyHead {
                stem,
                cls,
                reg,
                stride: 8u32 << h,
            });
        }
        ToyDetector {
            input_h: spec.input_h,
            input_w: spec.input_w,
            num_classes: spec.num_classes,
            conv1,
            conv2,
            conv3,
            heads,
        }
    }

    /// The bundled trained detector.
    pub fn bundled() -> ToyDetector {
        build_toy_detector(&ToySpec::default()).expect("bundled checkpoint matches default spec")
    }

    pub fn head(&self, idx: usize) -> &ToyHead {
        &self.heads[idx]
    }

    fn layer_mut(&mut self, id: &str) -> Option<&mut ConvLayer> {
        match id {
            "backbone.conv1" => Some(&mut self.conv1),
            "backbone.conv2" => Some(&mut self.conv2),
            "backbone.conv3" => Some(&mut self.conv3),
            _ => {
                let (head, which) = id.strip_prefix("head")?.split_once('.')?;
                let h: usize = head.parse().ok()?;
                let head = self.heads.get_mut(h)?;
                match which {
                    "stem" => Some(&mut head.stem),
                    "cls" => Some(&mut head.cls),
                    "reg" => Some(&mut head.reg),
                    _ => None,
                }
            }
        }
    }

    fn validate_input(&self, image: &ImageInput) -> Result<(), Error> {
        if image.h() != self.input_h || image.w() != self.input_w {
            return Err(Error::InvalidImage(format!(
                "model expects {}x{} input, got {}x{}",
                self.input_h,
                self.input_w,
                image.h(),
                image.w()
            )));
        }
        Ok(())
    }

    /// Full forward pass retaining every intermediate needed for gradients.
    pub fn forward_trace(&self, image: &ImageInput) -> Result<ForwardTrace, Error> {
        self.validate_input(image)?;
        let input = image.pixels().clone();
        let c1_pre = self.conv1.forward(&input);
        let (p1, i1) = maxpool2(&relu(c1_pre.clone()));
        let c2_pre = self.conv2.forward(&p1);
        let (p2, i2) = maxpool2(&relu(c2_pre.clone()));
        let c3_pre = self.conv3.forward(&p2);
        let (p3, i3) = maxpool2(&relu(c3_pre.clone()));
        let mut heads = Vec::with_capacity(self.heads.len());
        let mut feature = p3.clone();
        for (h, head) in self.heads.iter().enumerate() {
            let (feature_in, pool_idx) = if h == 0 {
                (feature.clone(), None)
            } else {
                let (pooled, idx) = maxpool2(&feature);
                (pooled, Some(idx))
            };
            let stem_pre = head.stem.forward(&feature_in);
            let stem_out = relu(stem_pre.clone());
            let cls_out = head.cls.forward(&stem_out);
            let reg_out = head.reg.forward(&stem_out);
            feature = feature_in.clone();
            heads.push(HeadTrace {
                feature_in,
                pool_idx,
                stem_pre,
                stem_out,
                cls_out,
                reg_out,
            });
        }
        Ok(ForwardTrace {
            input,
            c1_pre,
            p1,
            i1,
            c2_pre,
            p2,
            i2,
            c3_pre,
            p3,
            i3,
            heads,
        })
    }

    /// Decodes head logits into raw detection rows. Row order is head 0's
    /// cells row-major, then head 1's.
    pub fn decode(&self, trace: &ForwardTrace) -> RawOutput {
        let row_len = 5 + self.num_classes;
        let mut data = Vec::new();
        for (head, ht) in self.heads.iter().zip(&trace.heads) {
            let (gh, gw) = (ht.stem_out.h(), ht.stem_out.w());
            let s = head.stride as f32;
            for i in 0..gh {
                for j in 0..gw {
                    let tx = ht.reg_out.get(0, i, j);
                    let ty = ht.reg_out.get(1, i, j);
                    let tw = ht.reg_out.get(2, i, j).clamp(-BOX_LOG_CLAMP, BOX_LOG_CLAMP);
                    let th = ht.reg_out.get(3, i, j).clamp(-BOX_LOG_CLAMP, BOX_LOG_CLAMP);
                    let obj = sigmoid(ht.reg_out.get(4, i, j));
                    let cx = (j as f32 + sigmoid(tx)) * s;
                    let cy = (i as f32 + sigmoid(ty)) * s;
                    let bw = s * libm::expf(tw);
                    let bh = s * libm::expf(th);
                    data.push((cx - bw / 2.0).clamp(0.0, self.input_w as f32));
                    data.push((cy - bh / 2.0).clamp(0.0, self.input_h as f32));
                    data.push((cx + bw / 2.0).clamp(0.0, self.input_w as f32));
                    data.push((cy + bh / 2.0).clamp(0.0, self.input_h as f32));
                    data.push(obj);
                    for c in 0..self.num_classes {
                        data.push(sigmoid(ht.cls_out.get(c, i, j)));
                    }
                }
            }
        }
        RawOutput::new(self.num_classes, row_len, data)
    }

    /// Maps a raw row index back to its head and grid cell.
    fn locate_box(&self, trace_dims: &[(usize, usize)], box_index: usize) -> Option<(usize, usize, usize)> {
        let mut offset = 0usize;
        for (h, &(gh, gw)) in trace_dims.iter().enumerate() {
            let n = gh * gw;
            if box_index < offset + n {
                let local = box_index - offset;
                return Some((h, local / gw, local % gw));
            }
            offset += n;
        }
        None
    }
}

/// Retained intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Grid3,
    pub c1_pre: Grid3,
    pub p1: Grid3,
    pub i1: Vec<u32>,
    pub c2_pre: Grid3,
    pub p2: Grid3,
    pub i2: Vec<u32>,
    pub c3_pre: Grid3,
    pub p3: Grid3,
    pub i3: Vec<u32>,
    pub heads: Vec<HeadTrace>,
}

/// Per-head retained intermediates.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub feature_in: Grid3,
    pub pool_idx: Option<Vec<u32>>,
    pub stem_pre: Grid3,
    pub stem_out: Grid3,
    pub cls_out: Grid3,
    pub reg_out: Grid3,
}

/// Activations retained for one toy forward pass.
pub struct ToySession {
    trace: ForwardTrace,
    detections: Vec<Detection>,
    captured: Vec<(String, usize)>,
    grid_dims: Vec<(usize, usize)>,
}

impl ToySession {
    pub fn trace(&self) -> &ForwardTrace {
        &self.trace
    }
}

impl CaptureSession for ToySession {
    fn activation(&self, layer_id: &str) -> Result<&Grid3, Error> {
        let (_, head) = self
            .captured
            .iter()
            .find(|(id, _)| id == layer_id)
            .ok_or_else(|| Error::LayerNotCaptured(layer_id.into()))?;
        Ok(&self.trace.heads[*head].stem_out)
    }

    fn captured_layer_ids(&self) -> Vec<String> {
        self.captured.iter().map(|(id, _)| id.clone()).collect()
    }

    fn detections(&self) -> &[Detection] {
        &self.detections
    }
}

impl DetectorModel for ToyDetector {
    type Session = ToySession;

    fn kind(&self) -> ModelKind {
        ModelKind::Toy
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn layer_graph(&self) -> LayerGraph {
        let mut layers = vec![
            LayerNode {
                id: "backbone.conv1".into(),
                is_conv: true,
                branch: Branch::Backbone,
                stride: 2,
                is_predictor: false,
                declared_target: false,
            },
            LayerNode {
                id: "backbone.conv2".into(),
                is_conv: true,
                branch: Branch::Backbone,
                stride: 4,
                is_predictor: false,
                declared_target: false,
            },
            LayerNode {
                id: "backbone.conv3".into(),
                is_conv: true,
                branch: Branch::Backbone,
                stride: 8,
                is_predictor: false,
                declared_target: false,
            },
        ];
        for (h, head) in self.heads.iter().enumerate() {
            let hb = h as u8;
            layers.push(LayerNode {
                id: format!("head{h}.stem"),
                is_conv: true,
                branch: Branch::HeadStem(hb),
                stride: head.stride,
                is_predictor: false,
                declared_target: true,
            });
            layers.push(LayerNode {
                id: format!("head{h}.cls"),
                is_conv: true,
                branch: Branch::HeadClass(hb),
                stride: head.stride,
                is_predictor: true,
                declared_target: false,
            });
            layers.push(LayerNode {
                id: format!("head{h}.reg"),
                is_conv: true,
                branch: Branch::HeadRegression(hb),
                stride: head.stride,
                is_predictor: true,
                declared_target: false,
            });
        }
        LayerGraph { layers }
    }

    fn detect(&self, image: &ImageInput, objectness_threshold: f32) -> Result<Vec<Detection>, Error> {
        let trace = self.forward_trace(image)?;
        let raw = self.decode(&trace);
        let detections = parse_detections(&raw, objectness_threshold)?;
        Ok(nms(&detections, TOY_NMS_IOU))
    }

    fn forward_with_capture(
        &self,
        image: &ImageInput,
        layers: &TargetLayerSet,
        objectness_threshold: f32,
    ) -> Result<(Vec<Detection>, ToySession), Error> {
        let trace = self.forward_trace(image)?;
        let mut captured = Vec::new();
        for layer in &layers.layers {
            let head = layer
                .id
                .strip_prefix("head")
                .and_then(|rest| rest.strip_suffix(".stem"))
                .and_then(|h| h.parse::<usize>().ok())
                .filter(|&h| h < self.heads.len())
                .ok_or_else(|| Error::LayerNotCaptured(layer.id.clone()))?;
            captured.push((layer.id.clone(), head));
        }
        let raw = self.decode(&trace);
        let detections = nms(&parse_detections(&raw, objectness_threshold)?, TOY_NMS_IOU);
        let grid_dims = trace
            .heads
            .iter()
            .map(|h| (h.stem_out.h(), h.stem_out.w()))
            .collect();
        Ok((
            detections.clone(),
            ToySession {
                trace,
                detections,
                captured,
                grid_dims,
            },
        ))
    }

    fn backward_scores(
        &self,
        session: &ToySession,
        target: &ExplanationTarget,
    ) -> Result<Vec<GradientCapture>, Error> {
        if target.target_class >= self.num_classes {
            return Err(Error::InvalidTarget(format!(
                "class {} out of range for {} classes",
                target.target_class, self.num_classes
            )));
        }
        let (owner, ci, cj) = self
            .locate_box(&session.grid_dims, target.detection.box_index)
            .ok_or_else(|| {
                Error::InvalidTarget(format!(
                    "box index {} outside the raw grid",
                    target.detection.box_index
                ))
            })?;
        let mut captures = Vec::with_capacity(session.captured.len());
        for (layer_id, head_idx) in &session.captured {
            let ht = &session.trace.heads[*head_idx];
            let head = &self.heads[*head_idx];
            let (gh, gw) = (ht.stem_out.h(), ht.stem_out.w());
            let mut gradient = Grid3::zeros(STEM_CHANNELS, gh, gw);
            if *head_idx == owner {
                // The predictors are 1x1 convolutions, so the score depends
                // on the stem only at the owning cell; the chain rule gives
                // the gradient there in closed form. The sigmoid derivative
                // is taken in f64: a confident score rounds to exactly 1 in
                // f32 and would zero the entire backward pass.
                let cls_logit = f64::from(ht.cls_out.get(target.target_class, ci, cj));
                let s = 1.0 / (1.0 + libm::exp(-cls_logit));
                let ds = s * (1.0 - s);
                match target.score_kind {
                    crate::detector::ScoreKind::ClassScore => {
                        for ch in 0..STEM_CHANNELS {
                            let w = head.cls.weights[target.target_class * STEM_CHANNELS + ch];
                            gradient.set(ch, ci, cj, (ds * f64::from(w)) as f32);
                        }
                    }
                    crate::detector::ScoreKind::ObjectnessWeighted => {
                        let obj_logit = f64::from(ht.reg_out.get(4, ci, cj));
                        let o = 1.0 / (1.0 + libm::exp(-obj_logit));
                        let dobj = o * (1.0 - o);
                        for ch in 0..STEM_CHANNELS {
                            let wc = f64::from(
                                head.cls.weights[target.target_class * STEM_CHANNELS + ch],
                            );
                            let wo = f64::from(head.reg.weights[4 * STEM_CHANNELS + ch]);
                            gradient.set(ch, ci, cj, (ds * wc * o + s * dobj * wo) as f32);
                        }
                    }
                }
            }
            captures.push(GradientCapture {
                layer_id: layer_id.clone(),
                stride: head.stride,
                activation: ht.stem_out.clone(),
                gradient,
            });
        }
        Ok(captures)
    }

    fn weights_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        for layer in [&self.conv1, &self.conv2, &self.conv3] {
            h.update_f32s(&layer.weights);
            h.update_f32s(&layer.bias);
        }
        for head in &self.heads {
            for layer in [&head.stem, &head.cls, &head.reg] {
                h.update_f32s(&layer.weights);
                h.update_f32s(&layer.bias);
            }
        }
        h.finish()
    }
}

impl RandomizableModel for ToyDetector {
    fn randomize_layers(&mut self, layer_ids: &[String], std: f32, seed: u64) -> Result<(), Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in layer_ids {
            let layer = self
                .layer_mut(id)
                .ok_or_else(|| Error::UnknownLayer(id.clone()))?;
            for w in &mut layer.weights {
                *w = sample_normal(&mut rng) * std;
            }
            for b in &mut layer.bias {
                *b = sample_normal(&mut rng) * std;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"GTD1";
const CHECKPOINT_VERSION: u32 = 1;

struct Cursor<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Error> {
        if self.at + n > self.data.len() {
            return Err(Error::Configuration("checkpoint truncated".into()));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, Error> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, Error> {
        let b = self.take(4 * n)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn encode_layer(out: &mut Vec<u8>, layer: &ConvLayer) {
    out.extend_from_slice(&(layer.in_c as u32).to_le_bytes());
    out.extend_from_slice(&(layer.out_c as u32).to_le_bytes());
    out.extend_from_slice(&(layer.k as u32).to_le_bytes());
    for v in layer.weights.iter().chain(&layer.bias) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_layer(cur: &mut Cursor) -> Result<ConvLayer, Error> {
    let in_c = cur.u32()? as usize;
    let out_c = cur.u32()? as usize;
    let k = cur.u32()? as usize;
    if in_c == 0 || out_c == 0 || !(k == 1 || k == 3) {
        return Err(Error::Configuration("checkpoint declares an invalid layer shape".into()));
    }
    let weights = cur.f32s(out_c * in_c * k * k)?;
    let bias = cur.f32s(out_c)?;
    Ok(ConvLayer {
        in_c,
        out_c,
        k,
        weights,
        bias,
    })
}

impl ToyDetector {
    /// Serializes every weight in a fixed little-endian layout.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.input_h as u32).to_le_bytes());
        out.extend_from_slice(&(self.input_w as u32).to_le_bytes());
        out.extend_from_slice(&(self.heads.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        for layer in [&self.conv1, &self.conv2, &self.conv3] {
            encode_layer(&mut out, layer);
        }
        for head in &self.heads {
            for layer in [&head.stem, &head.cls, &head.reg] {
                encode_layer(&mut out, layer);
            }
        }
        out
    }

    /// Parses a checkpoint produced by [`ToyDetector::to_checkpoint`].
    pub fn from_checkpoint(bytes: &[u8]) -> Result<ToyDetector, Error> {
        let mut cur = Cursor { data: bytes, at: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Configuration("not a toy detector checkpoint".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Configuration(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let input_h = cur.u32()? as usize;
        let input_w = cur.u32()? as usize;
        let num_heads = cur.u32()? as usize;
        let num_classes = cur.u32()? as usize;
        if !(1..=2).contains(&num_heads) || num_classes == 0 {
            return Err(Error::Configuration("checkpoint declares an invalid architecture".into()));
        }
        let conv1 = decode_layer(&mut cur)?;
        let conv2 = decode_layer(&mut cur)?;
        let conv3 = decode_layer(&mut cur)?;
        let mut heads = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            let stem = decode_layer(&mut cur)?;
            let cls = decode_layer(&mut cur)?;
            let reg = decode_layer(&mut cur)?;
            if cls.out_c != num_classes || reg.out_c != 5 {
                return Err(Error::Configuration(
                    "checkpoint head shape disagrees with its own header".into(),
                ));
            }
            heads.push(ToyHead {
                stem,
                cls,
                reg,
                stride: 8u32 << h,
            });
        }
        if cur.at != bytes.len() {
            return Err(Error::Configuration("checkpoint has trailing bytes".into()));
        }
        Ok(ToyDetector {
            input_h,
            input_w,
            num_classes,
            conv1,
            conv2,
            conv3,
            heads,
        })
    }
}
