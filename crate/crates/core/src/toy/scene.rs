//! Seeded synthetic scenes for the toy detector: bright squares (class 0)
//! and circles (class 1) on a dark noisy background. The same seed always
//! yields the same pixels and the same ground truth.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::BoxPx;
use crate::grid::Grid3;
use crate::image::ImageInput;
use crate::metrics::GroundTruthBox;

/// Object shapes, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
}

impl Shape {
    pub fn class_index(self) -> usize {
        match self {
            Shape::Square => 0,
            Shape::Circle => 1,
        }
    }
}

/// One placed object with its tight bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub bbox: BoxPx,
}

impl SceneObject {
    pub fn class_index(&self) -> usize {
        self.shape.class_index()
    }
}

/// A rendered image plus its ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ImageInput,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn ground_truth(&self) -> Vec<GroundTruthBox> {
        self.objects
            .iter()
            .map(|o| GroundTruthBox {
                bbox: o.bbox,
                class_index: o.class_index(),
            })
            .collect()
    }
}

/// Scene layout parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneConfig {
    pub h: usize,
    pub w: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object side length range, pixels.
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            h: 128,
            w: 128,
            min_objects: 1,
            max_objects: 3,
            min_size: 12,
            max_size: 36,
        }
    }
}

/// Minimum empty pixels between placed objects, which also keeps any two
/// object centers in distinct stride-8 grid cells.
const PLACEMENT_GAP: usize = 4;

fn boxes_too_close(a: &BoxPx, b: &BoxPx, gap: f32) -> bool {
    a.x1 - gap < b.x2 && b.x1 - gap < a.x2 && a.y1 - gap < b.y2 && b.y1 - gap < a.y2
}

fn paint_background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid3 {
    let mut px = Grid3::zeros(3, h, w);
    for c in 0..3 {
        let base: f32 = rng.gen_range(0.05..0.35);
        for v in px.channel_mut(c) {
            *v = (base + rng.gen_range(-0.02..0.02f32)).clamp(0.0, 1.0);
        }
    }
    px
}

fn paint_object(px: &mut Grid3, obj: &SceneObject, rng: &mut ChaCha8Rng) {
    let (x0, y0) = (obj.bbox.x1 as usize, obj.bbox.y1 as usize);
    let (x1, y1) = (obj.bbox.x2 as usize, obj.bbox.y2 as usize);
    let size = x1 - x0;
    // Circle geometry in half-pixel units so even sizes stay symmetric.
    let cx2 = (2 * x0 + size) as i64;
    let cy2 = (2 * y0 + size) as i64;
    let r2 = size as i64;
    for c in 0..3 {
        let level: f32 = rng.gen_range(0.55..1.0);
        let w = px.w();
        let plane = px.channel_mut(c);
        for i in y0..y1 {
            for j in x0..x1 {
                let inside = match obj.shape {
                    Shape::Square => true,
                    Shape::Circle => {
                        let dx = 2 * j as i64 + 1 - cx2;
                        let dy = 2 * i as i64 + 1 - cy2;
                        dx * dx + dy * dy <= r2 * r2
                    }
                };
                if inside {
                    plane[i * w + j] = level;
                }
            }
        }
    }
}

/// Renders a seeded scene. Objects never overlap and never touch the image
/// border; identical `(config, seed)` pairs give identical scenes.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = paint_background(&mut rng, config.h, config.w);
    let count = rng.gen_range(config.min_objects..=config.max_objects);
    let mut objects: Vec<SceneObject> = Vec::new();
    for _ in 0..count {
        for _attempt in 0..50 {
            let size = rng.gen_range(config.min_size..=config.max_size);
            if size + 4 >= config.w.min(config.h) {
                continue;
            }
            let x0 = rng.gen_range(2..config.w - size - 2);
            let y0 = rng.gen_range(2..config.h - size - 2);
            let bbox = BoxPx::new(
                x0 as f32,
                y0 as f32,
                (x0 + size) as f32,
                (y0 + size) as f32,
            );
            if objects
                .iter()
                .any(|o| boxes_too_close(&o.bbox, &bbox, PLACEMENT_GAP as f32))
            {
                continue;
            }
            let shape = if rng.gen_range(0..2) == 0 {
                Shape::Square
            } else {
                Shape::Circle
            };
            let obj = SceneObject { shape, bbox };
            paint_object(&mut px, &obj, &mut rng);
            objects.push(obj);
            break;
        }
    }
    Scene {
        image: ImageInput::new(px).expect("scene pixels are valid by construction"),
        objects,
    }
}

/// A 128x128 scene holding exactly two well-separated objects of the same
/// class, each small enough to count as tiny against the image area.
pub fn tiny_pair_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = paint_background(&mut rng, 128, 128);
    let shape = if rng.gen_range(0..2) == 0 {
        Shape::Square
    } else {
        Shape::Circle
    };
    let size = 8usize;
    // One object in the left third, one in the right; at least 56px apart.
    let x_left = rng.gen_range(8..32);
    let y_left = rng.gen_range(8..112);
    let x_right = rng.gen_range(88..112);
    let y_right = rng.gen_range(8..112);
    let mut objects = Vec::new();
    for (x0, y0) in [(x_left, y_left), (x_right, y_right)] {
        let bbox = BoxPx::new(
            x0 as f32,
            y0 as f32,
            (x0 + size) as f32,
            (y0 + size) as f32,
        );
        let obj = SceneObject { shape, bbox };
        paint_object(&mut px, &obj, &mut rng);
        objects.push(obj);
    }
    Scene {
        image: ImageInput::new(px).expect("scene pixels are valid by construction"),
        objects,
    }
}
