//! Synthetic dataset generation: renders toy scenes to PNG files and
//! exports their ground truth as a COCO annotation file, so the standard
//! ingestion path serves generated data too.

use std::path::{Path, PathBuf};

use gcame_core::toy::scene::{generate_scene, tiny_pair_scene, Scene, SceneConfig};

use crate::coco::{save_coco, ExportImage};
use crate::error::{CliError, Result};
use crate::render::{save_png, to_rgb8};

/// Class names in class-index order, matching the scene shapes.
pub const CLASS_NAMES: [&str; 2] = ["square", "circle"];

/// What to generate and where the per-image seeds start.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    /// Number of general multi-object scenes.
    pub scenes: usize,
    /// Number of two-tiny-object scenes appended after the general ones.
    pub tiny_pairs: usize,
    pub seed_base: u64,
    pub scene: SceneConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            scenes: 40,
            tiny_pairs: 10,
            seed_base: 0,
            scene: SceneConfig::default(),
        }
    }
}

fn write_image(dir: &Path, image_id: u64, scene: &Scene) -> Result<ExportImage> {
    let file_name = format!("images/{image_id:06}.png");
    save_png(&dir.join(&file_name), &to_rgb8(&scene.image))?;
    Ok(ExportImage {
        image_id,
        file_name,
        h: scene.image.h() as u32,
        w: scene.image.w() as u32,
        boxes: scene.ground_truth(),
    })
}

/// Generates the dataset under `dir` (images in `images/`, annotations in
/// `annotations.json`) and returns the annotation path. Image ids are the
/// scene seeds, so any image can be regenerated from its id alone.
pub fn write_toy_dataset(dir: &Path, spec: &DatasetSpec) -> Result<PathBuf> {
    if spec.scenes + spec.tiny_pairs == 0 {
        return Err(CliError::Usage("dataset must contain at least one image".into()));
    }
    std::fs::create_dir_all(dir.join("images")).map_err(|e| CliError::io(dir, e))?;
    let mut images = Vec::new();
    for i in 0..spec.scenes {
        let seed = spec.seed_base + i as u64;
        images.push(write_image(dir, seed, &generate_scene(&spec.scene, seed))?);
    }
    for i in 0..spec.tiny_pairs {
        let seed = spec.seed_base + (spec.scenes + i) as u64;
        images.push(write_image(dir, seed, &tiny_pair_scene(seed))?);
    }
    let ann_path = dir.join("annotations.json");
    save_coco(&ann_path, &images, &CLASS_NAMES)?;
    Ok(ann_path)
}
