//! Training support for the toy detector: cell-level targets, analytic
//! backpropagation through the whole network, a flat-vector Adam optimizer,
//! and recall evaluation over seeded scenes.
//!
//! Only single-head models are trainable; the second head exists for
//! gradient-routing tests, not for accuracy.

use alloc::vec;
use alloc::vec::Vec;

use crate::detector::DetectorModel;
use crate::error::Error;
use crate::grid::Grid3;
use crate::image::ImageInput;
use crate::metrics::pairwise_iou;
use crate::toy::scene::{generate_scene, Scene, SceneConfig, SceneObject};
use crate::toy::{maxpool2_backward, ConvGrads, ConvLayer, ToyDetector};

/// Extra weight on the objectness loss at object cells; the grid is mostly
/// background, so positives need amplification.
const LAMBDA_OBJ_POS: f32 = 5.0;
const LAMBDA_BOX: f32 = 2.0;

/// First seed of the held-out evaluation split. Training must only consume
/// seeds below this.
pub const EVAL_SEED_BASE: u64 = 10_000;
/// Number of scenes in the evaluation split.
pub const EVAL_SCENES: usize = 200;

/// Per-cell supervision for the (single) head.
#[derive(Debug, Clone)]
pub struct CellTargets {
    pub gh: usize,
    pub gw: usize,
    pub num_classes: usize,
    /// 1.0 at cells owning an object center.
    pub obj: Vec<f32>,
    /// One-hot class labels at positive cells, `[class][cell]` planes.
    pub cls: Vec<f32>,
    /// tx*, ty* (sub-cell offsets in [0,1]) and log-size targets, 4 planes.
    pub boxp: Vec<f32>,
    pub positive: Vec<bool>,
}

/// Maps each object's center to its owning grid cell. Two objects in one
/// cell keep the last writer; the scene generator spaces objects so this
/// does not happen in practice.
pub fn build_targets(model: &ToyDetector, objects: &[SceneObject]) -> Result<CellTargets, Error> {
    if model.heads.len() != 1 {
        return Err(Error::Configuration(
            "training expects a single-head model".into(),
        ));
    }
    let stride = model.head(0).stride as f32;
    let gh = model.input_h / model.head(0).stride as usize;
    let gw = model.input_w / model.head(0).stride as usize;
    let num_classes = model.num_classes();
    let cells = gh * gw;
    let mut t = CellTargets {
        gh,
        gw,
        num_classes,
        obj: vec![0.0; cells],
        cls: vec![0.0; num_classes * cells],
        boxp: vec![0.0; 4 * cells],
        positive: vec![false; cells],
    };
    for obj in objects {
        let (cx, cy) = obj.bbox.center();
        let j = ((cx / stride) as usize).min(gw - 1);
        let i = ((cy / stride) as usize).min(gh - 1);
        let cell = i * gw + j;
        t.positive[cell] = true;
        t.obj[cell] = 1.0;
        for c in 0..num_classes {
            t.cls[c * cells + cell] = 0.0;
        }
        t.cls[obj.class_index() * cells + cell] = 1.0;
        // Offsets clamped away from 0/1: a sigmoid can only approach them.
        t.boxp[cell] = (cx / stride - j as f32).clamp(0.05, 0.95);
        t.boxp[cells + cell] = (cy / stride - i as f32).clamp(0.05, 0.95);
        t.boxp[2 * cells + cell] = libm::logf((obj.bbox.x2 - obj.bbox.x1) / stride);
        t.boxp[3 * cells + cell] = libm::logf((obj.bbox.y2 - obj.bbox.y1) / stride);
    }
    Ok(t)
}

/// Parameter gradients for every layer of a single-head model.
#[derive(Debug, Clone)]
pub struct ToyGrads {
    pub conv1: ConvGrads,
    pub conv2: ConvGrads,
    pub conv3: ConvGrads,
    pub stem: ConvGrads,
    pub cls: ConvGrads,
    pub reg: ConvGrads,
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

/// Numerically safe binary cross-entropy with logits.
#[inline]
fn bce_with_logits(z: f32, t: f32) -> f64 {
    let z64 = f64::from(z);
    let t64 = f64::from(t);
    z64.max(0.0) - z64 * t64 + libm::log(1.0 + libm::exp(-z64.abs()))
}

fn relu_backward(pre: &Grid3, mut grad: Grid3) -> Grid3 {
    for (g, p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

fn add_grids(mut a: Grid3, b: &Grid3) -> Grid3 {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    a
}

/// Loss of one image under `targets`, plus gradients for every parameter.
///
/// The loss has three parts: objectness cross-entropy over all cells
/// (positives upweighted), class cross-entropy at positive cells, and
/// squared error on box offsets and log sizes at positive cells.
pub fn loss_and_grads(
    model: &ToyDetector,
    image: &ImageInput,
    targets: &CellTargets,
) -> Result<(f64, ToyGrads), Error> {
    if model.heads.len() != 1 {
        return Err(Error::Configuration(
            "training expects a single-head model".into(),
        ));
    }
    let trace = model.forward_trace(image)?;
    let ht = &trace.heads[0];
    let (gh, gw) = (ht.stem_out.h(), ht.stem_out.w());
    if gh != targets.gh || gw != targets.gw || model.num_classes() != targets.num_classes {
        return Err(Error::ShapeMismatch {
            context: "training targets vs head grid",
        });
    }
    let cells = gh * gw;
    let npos = targets.positive.iter().filter(|p| **p).count().max(1) as f32;
    let mut loss = 0.0f64;
    let mut d_cls = Grid3::zeros(targets.num_classes, gh, gw);
    let mut d_reg = Grid3::zeros(5, gh, gw);

    for cell in 0..cells {
        let (i, j) = (cell / gw, cell % gw);
        let pos = targets.positive[cell];
        let w_obj = if pos { LAMBDA_OBJ_POS } else { 1.0 } / cells as f32;
        let z_obj = ht.reg_out.get(4, i, j);
        loss += f64::from(w_obj) * bce_with_logits(z_obj, targets.obj[cell]);
        d_reg.set(4, i, j, w_obj * (sigmoid(z_obj) - targets.obj[cell]));
        if !pos {
            continue;
        }
        let w_cls = 1.0 / (npos * targets.num_classes as f32);
        for c in 0..targets.num_classes {
            let z = ht.cls_out.get(c, i, j);
            let t = targets.cls[c * cells + cell];
            loss += f64::from(w_cls) * bce_with_logits(z, t);
            d_cls.set(c, i, j, w_cls * (sigmoid(z) - t));
        }
        let w_box = LAMBDA_BOX / npos;
        for ch in 0..2 {
            // Offset channels pass through a sigmoid before the residual.
            let z = ht.reg_out.get(ch, i, j);
            let s = sigmoid(z);
            let r = s - targets.boxp[ch * cells + cell];
            loss += f64::from(w_box) * f64::from(r) * f64::from(r);
            d_reg.set(ch, i, j, w_box * 2.0 * r * s * (1.0 - s));
        }
        for ch in 2..4 {
            let z = ht.reg_out.get(ch, i, j);
            let r = z - targets.boxp[ch * cells + cell];
            loss += f64::from(w_box) * f64::from(r) * f64::from(r);
            d_reg.set(ch, i, j, w_box * 2.0 * r);
        }
    }

    let head = model.head(0);
    let (d_stem_cls, g_cls) = head.cls.backward(&ht.stem_out, &d_cls);
    let (d_stem_reg, g_reg) = head.reg.backward(&ht.stem_out, &d_reg);
    let d_stem_out = add_grids(d_stem_cls, &d_stem_reg);
    let d_stem_pre = relu_backward(&ht.stem_pre, d_stem_out);
    let (d_p3, g_stem) = head.stem.backward(&ht.feature_in, &d_stem_pre);
    let d_r3 = maxpool2_backward(&d_p3, &trace.i3, trace.c3_pre.h(), trace.c3_pre.w());
    let d_c3 = relu_backward(&trace.c3_pre, d_r3);
    let (d_p2, g_conv3) = model.conv3.backward(&trace.p2, &d_c3);
    let d_r2 = maxpool2_backward(&d_p2, &trace.i2, trace.c2_pre.h(), trace.c2_pre.w());
    let d_c2 = relu_backward(&trace.c2_pre, d_r2);
    let (d_p1, g_conv2) = model.conv2.backward(&trace.p1, &d_c2);
    let d_r1 = maxpool2_backward(&d_p1, &trace.i1, trace.c1_pre.h(), trace.c1_pre.w());
    let d_c1 = relu_backward(&trace.c1_pre, d_r1);
    let (_, g_conv1) = model.conv1.backward(&trace.input, &d_c1);

    Ok((
        loss,
        ToyGrads {
            conv1: g_conv1,
            conv2: g_conv2,
            conv3: g_conv3,
            stem: g_stem,
            cls: g_cls,
            reg: g_reg,
        },
    ))
}

fn layers_of(model: &ToyDetector) -> [&ConvLayer; 6] {
    let head = model.head(0);
    [
        &model.conv1,
        &model.conv2,
        &model.conv3,
        &head.stem,
        &head.cls,
        &head.reg,
    ]
}

/// All parameters of a single-head model as one flat vector, in a fixed
/// layer order (weights then bias per layer).
pub fn flat_params(model: &ToyDetector) -> Vec<f32> {
    let mut out = Vec::new();
    for layer in layers_of(model) {
        out.extend_from_slice(&layer.weights);
        out.extend_from_slice(&layer.bias);
    }
    out
}

/// Writes a flat vector produced by [`flat_params`] back into the model.
pub fn set_flat_params(model: &mut ToyDetector, params: &[f32]) -> Result<(), Error> {
    if params.len() != flat_params(model).len() {
        return Err(Error::Configuration("parameter vector length mismatch".into()));
    }
    let mut at = 0usize;
    let mut write = |layer: &mut ConvLayer| {
        let wlen = layer.weights.len();
        let blen = layer.bias.len();
        layer.weights.copy_from_slice(&params[at..at + wlen]);
        at += wlen;
        layer.bias.copy_from_slice(&params[at..at + blen]);
        at += blen;
    };
    write(&mut model.conv1);
    write(&mut model.conv2);
    write(&mut model.conv3);
    let head = &mut model.heads[0];
    write(&mut head.stem);
    write(&mut head.cls);
    write(&mut head.reg);
    Ok(())
}

/// Gradients in the same flat order as [`flat_params`].
pub fn flat_grads(grads: &ToyGrads) -> Vec<f32> {
    let mut out = Vec::new();
    for g in [
        &grads.conv1,
        &grads.conv2,
        &grads.conv3,
        &grads.stem,
        &grads.cls,
        &grads.reg,
    ] {
        out.extend_from_slice(&g.weights);
        out.extend_from_slice(&g.bias);
    }
    out
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f32) -> Self {
        AdamState {
            lr,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        const BETA1: f32 = 0.9;
        const BETA2: f32 = 0.999;
        const EPS: f32 = 1e-8;
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - libm::powf(BETA1, self.t as f32);
        let bc2 = 1.0 - libm::powf(BETA2, self.t as f32);
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grads[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (libm::sqrtf(vhat) + EPS);
        }
    }
}

/// One optimization step on one scene; returns the loss before the update.
pub fn train_step(
    model: &mut ToyDetector,
    scene: &Scene,
    adam: &mut AdamState,
) -> Result<f64, Error> {
    let targets = build_targets(model, &scene.objects)?;
    let (loss, grads) = loss_and_grads(model, &scene.image, &targets)?;
    let mut params = flat_params(model);
    adam.step(&mut params, &flat_grads(&grads));
    set_flat_params(model, &params)?;
    Ok(loss)
}

/// Fraction of ground-truth objects matched by a detection with IoU >= 0.5
/// and the correct class, over `num_scenes` consecutive seeds.
pub fn eval_recall(
    model: &ToyDetector,
    config: &SceneConfig,
    first_seed: u64,
    num_scenes: usize,
    objectness_threshold: f32,
) -> Result<f64, Error> {
    let mut matched = 0usize;
    let mut total = 0usize;
    for s in 0..num_scenes {
        let scene = generate_scene(config, first_seed + s as u64);
        let detections = model.detect(&scene.image, objectness_threshold)?;
        for obj in &scene.objects {
            total += 1;
            let hit = detections.iter().any(|d| {
                d.class_index == obj.class_index() && pairwise_iou(&d.bbox, &obj.bbox) >= 0.5
            });
            if hit {
                matched += 1;
            }
        }
    }
    Ok(matched as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::BoxPx;
    use crate::toy::scene::Shape;
    use crate::toy::{build_toy_detector, ToySpec, WeightSource};

    fn small_model(seed: u64) -> ToyDetector {
        build_toy_detector(&ToySpec {
            input_h: 32,
            input_w: 32,
            num_classes: 2,
            num_heads: 1,
            weights: WeightSource::Seed(seed),
        })
        .unwrap()
    }

    fn one_object() -> Vec<SceneObject> {
        // A 10px square centered at (13, 19): cell (2, 1), offsets
        // 13/8 - 1 = 0.625 and 19/8 - 2 = 0.375.
        vec![SceneObject {
            shape: Shape::Square,
            bbox: BoxPx::new(8.0, 14.0, 18.0, 24.0),
        }]
    }

    #[test]
    fn targets_land_in_the_center_cell() {
        let model = small_model(1);
        let t = build_targets(&model, &one_object()).unwrap();
        assert_eq!((t.gh, t.gw), (4, 4));
        let cell = 2 * 4 + 1;
        assert!(t.positive[cell]);
        assert_eq!(t.positive.iter().filter(|p| **p).count(), 1);
        assert_eq!(t.obj[cell], 1.0);
        assert_eq!(t.cls[cell], 1.0, "class 0 plane holds the square");
        assert_eq!(t.cls[16 + cell], 0.0);
        assert!((t.boxp[cell] - 0.625).abs() < 1e-6);
        assert!((t.boxp[16 + cell] - 0.375).abs() < 1e-6);
        let logw = t.boxp[32 + cell];
        assert!((logw - libm::logf(10.0 / 8.0)).abs() < 1e-6);
    }

    #[test]
    fn two_head_models_are_not_trainable() {
        let model = build_toy_detector(&ToySpec {
            input_h: 32,
            input_w: 32,
            num_classes: 2,
            num_heads: 2,
            weights: WeightSource::Seed(1),
        })
        .unwrap();
        assert!(build_targets(&model, &one_object()).is_err());
    }

    fn test_image_32() -> ImageInput {
        let mut px = Grid3::zeros(3, 32, 32);
        for (i, v) in px.data_mut().iter_mut().enumerate() {
            *v = ((i * 29) % 97) as f32 / 97.0;
        }
        ImageInput::new(px).unwrap()
    }

    #[test]
    fn analytic_parameter_gradients_match_finite_differences() {
        let model = small_model(3);
        let image = test_image_32();
        let targets = build_targets(&model, &one_object()).unwrap();
        let (_, grads) = loss_and_grads(&model, &image, &targets).unwrap();
        let flat = flat_grads(&grads);
        let base = flat_params(&model);

        // One weight and one bias per layer, chosen inside each layer's
        // span of the flat vector.
        let sizes = layers_of(&model)
            .iter()
            .map(|l| (l.weights.len(), l.bias.len()))
            .collect::<Vec<_>>();
        let mut probe = Vec::new();
        let mut offset = 0;
        for (wlen, blen) in sizes {
            probe.push(offset + wlen / 2);
            probe.push(offset + wlen + blen - 1);
            offset += wlen + blen;
        }

        let eps = 1e-3f32;
        let loss_at = |params: &[f32]| -> f64 {
            let mut m = model.clone();
            set_flat_params(&mut m, params).unwrap();
            loss_and_grads(&m, &image, &targets).unwrap().0
        };
        for idx in probe {
            let mut plus = base.clone();
            plus[idx] += eps;
            let mut minus = base.clone();
            minus[idx] -= eps;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * f64::from(eps));
            let analytic = f64::from(flat[idx]);
            if fd.abs() < 1e-7 && analytic.abs() < 1e-7 {
                continue;
            }
            // The forward pass runs in f32, so the quotient carries a few
            // percent of rounding noise on deep-layer weights.
            let rel = (analytic - fd).abs() / fd.abs().max(1e-6);
            assert!(
                rel < 5e-2,
                "param {idx}: analytic {analytic} vs finite difference {fd}"
            );
        }
    }

    #[test]
    fn loss_decreases_under_training() {
        let mut model = small_model(7);
        let scene = Scene {
            image: test_image_32(),
            objects: one_object(),
        };
        let mut adam = AdamState::new(flat_params(&model).len(), 1e-3);
        let first = train_step(&mut model, &scene, &mut adam).unwrap();
        let mut last = first;
        for _ in 0..40 {
            last = train_step(&mut model, &scene, &mut adam).unwrap();
        }
        assert!(
            last < first * 0.5,
            "loss should at least halve on a single repeated scene: {first} -> {last}"
        );
    }

    #[test]
    fn adam_moves_against_the_gradient() {
        let mut adam = AdamState::new(1, 0.01);
        let mut p = [1.0f32];
        adam.step(&mut p, &[2.5]);
        assert!(p[0] < 1.0);
        assert!((1.0 - p[0] - 0.01).abs() < 1e-4, "first step has size lr");
    }

    #[test]
    fn flat_params_round_trip() {
        let model = small_model(5);
        let params = flat_params(&model);
        let mut copy = small_model(6);
        assert_ne!(flat_params(&copy), params);
        set_flat_params(&mut copy, &params).unwrap();
        assert_eq!(copy, model);
        assert!(set_flat_params(&mut copy, &params[1..]).is_err());
    }

    #[test]
    fn recall_is_deterministic_and_bounded() {
        let model = small_model(9);
        let config = SceneConfig {
            h: 32,
            w: 32,
            min_objects: 1,
            max_objects: 1,
            min_size: 10,
            max_size: 14,
        };
        let a = eval_recall(&model, &config, 500, 5, 0.25).unwrap();
        let b = eval_recall(&model, &config, 500, 5, 0.25).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }
}
