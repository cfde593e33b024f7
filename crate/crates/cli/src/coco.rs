//! COCO-format dataset ingestion and export.
//!
//! COCO JSON is the only ingestion format; synthetic datasets are exported
//! to it so a single loading path serves real and generated data alike.
//! Boxes arrive as `[x, y, width, height]` and are converted to corner form.
//! Individually malformed entries are skipped and counted; JSON that does
//! not parse at all is fatal.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use gcame_core::metrics::GroundTruthBox;
use gcame_core::BoxPx;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// One dataset image: id, resolved path, and pixel size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub image_id: u64,
    pub path: PathBuf,
    pub h: u32,
    pub w: u32,
}

/// Parsed dataset: images in file order, boxes grouped per image, and the
/// category table sorted by id (its position is the class index).
#[derive(Debug, Clone, Default)]
pub struct DatasetIndex {
    pub images: Vec<ImageEntry>,
    pub annotations: HashMap<u64, Vec<GroundTruthBox>>,
    pub categories: Vec<(u64, String)>,
    /// Count of malformed entries that were skipped with a warning.
    pub skipped: usize,
}

impl DatasetIndex {
    pub fn class_index_of(&self, category_id: u64) -> Option<usize> {
        self.categories.iter().position(|(id, _)| *id == category_id)
    }

    pub fn annotations_for(&self, image_id: u64) -> &[GroundTruthBox] {
        self.annotations
            .get(&image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn num_annotations(&self) -> usize {
        self.annotations.values().map(Vec::len).sum()
    }
}

fn get_u64(v: &serde_json::Value, key: &str) -> Option<u64> {
    v.get(key)?.as_u64()
}

/// Loads a COCO annotation file. Image paths resolve relative to the
/// annotation file's directory and are checked at access time, not here.
pub fn load_coco(path: &Path) -> Result<DatasetIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.into(),
        source: e,
    })?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut index = DatasetIndex::default();

    for cat in doc.get("categories").and_then(|v| v.as_array()).unwrap_or(&Vec::new()) {
        match (get_u64(cat, "id"), cat.get("name").and_then(|n| n.as_str())) {
            (Some(id), Some(name)) => index.categories.push((id, name.to_string())),
            _ => index.skipped += 1,
        }
    }
    index.categories.sort_by_key(|(id, _)| *id);

    let mut dims: HashMap<u64, (u32, u32)> = HashMap::new();
    for img in doc.get("images").and_then(|v| v.as_array()).unwrap_or(&Vec::new()) {
        let parsed = (|| {
            let id = get_u64(img, "id")?;
            let file = img.get("file_name")?.as_str()?;
            let h = get_u64(img, "height")?;
            let w = get_u64(img, "width")?;
            Some(ImageEntry {
                image_id: id,
                path: root.join(file),
                h: h as u32,
                w: w as u32,
            })
        })();
        match parsed {
            Some(entry) => {
                dims.insert(entry.image_id, (entry.h, entry.w));
                index.images.push(entry);
            }
            None => index.skipped += 1,
        }
    }

    for ann in doc.get("annotations").and_then(|v| v.as_array()).unwrap_or(&Vec::new()) {
        let parsed = (|| {
            let image_id = get_u64(ann, "image_id")?;
            let (img_h, img_w) = dims.get(&image_id).copied()?;
            let category_id = get_u64(ann, "category_id")?;
            let class_index = index.class_index_of(category_id)?;
            let bbox = ann.get("bbox")?.as_array()?;
            if bbox.len() != 4 {
                return None;
            }
            let x = bbox[0].as_f64()?;
            let y = bbox[1].as_f64()?;
            let w = bbox[2].as_f64()?;
            let h = bbox[3].as_f64()?;
            if w <= 0.0 || h <= 0.0 {
                return None;
            }
            let x1 = (x.max(0.0)) as f32;
            let y1 = (y.max(0.0)) as f32;
            let x2 = ((x + w).min(f64::from(img_w))) as f32;
            let y2 = ((y + h).min(f64::from(img_h))) as f32;
            let converted = BoxPx::new(x1, y1, x2, y2);
            if !converted.is_valid() {
                return None;
            }
            Some((image_id, GroundTruthBox {
                bbox: converted,
                class_index,
            }))
        })();
        match parsed {
            Some((image_id, gt)) => index.annotations.entry(image_id).or_default().push(gt),
            None => index.skipped += 1,
        }
    }

    if index.skipped > 0 {
        eprintln!(
            "warning: skipped {} malformed entr{} in {}",
            index.skipped,
            if index.skipped == 1 { "y" } else { "ies" },
            path.display()
        );
    }
    Ok(index)
}

// Writing side: plain serde structs, since we control the content.

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    height: u32,
    width: u32,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    area: f64,
    iscrowd: u32,
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct CocoDoc {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

/// One image's worth of export data: id, file name relative to the
/// annotation file, size, and corner-form boxes with class indices.
pub struct ExportImage {
    pub image_id: u64,
    pub file_name: String,
    pub h: u32,
    pub w: u32,
    pub boxes: Vec<GroundTruthBox>,
}

/// Writes a COCO annotation file. Class indices map to category ids
/// one-to-one, so a reload through [`load_coco`] reproduces them.
pub fn save_coco(path: &Path, images: &[ExportImage], class_names: &[&str]) -> Result<()> {
    let mut doc = CocoDoc {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: class_names
            .iter()
            .enumerate()
            .map(|(i, name)| CocoCategory {
                id: i as u64,
                name: (*name).to_string(),
            })
            .collect(),
    };
    let mut next_ann = 1u64;
    for img in images {
        doc.images.push(CocoImage {
            id: img.image_id,
            file_name: img.file_name.clone(),
            height: img.h,
            width: img.w,
        });
        for gt in &img.boxes {
            let w = f64::from(gt.bbox.x2 - gt.bbox.x1);
            let h = f64::from(gt.bbox.y2 - gt.bbox.y1);
            doc.annotations.push(CocoAnnotation {
                id: next_ann,
                image_id: img.image_id,
                category_id: gt.class_index as u64,
                bbox: [f64::from(gt.bbox.x1), f64::from(gt.bbox.y1), w, h],
                area: w * h,
                iscrowd: 0,
            });
            next_ann += 1;
        }
    }
    let text = serde_json::to_string_pretty(&doc).expect("static structure serializes");
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.json");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    const FIXTURE: &str = r#"{
        "images": [
            {"id": 1, "file_name": "a.png", "height": 100, "width": 100},
            {"id": 2, "file_name": "b.png", "height": 64, "width": 64}
        ],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 0, "bbox": [10, 10, 20, 20], "area": 400, "iscrowd": 0},
            {"id": 2, "image_id": 1, "category_id": 1, "bbox": [40, 40, 10, 10], "area": 100, "iscrowd": 0},
            {"id": 3, "image_id": 2, "category_id": 0, "bbox": [5, 5, 30, 30], "area": 900, "iscrowd": 0}
        ],
        "categories": [
            {"id": 0, "name": "square"},
            {"id": 1, "name": "circle"}
        ]
    }"#;

    #[test]
    fn fixture_indexes_two_images_three_annotations() {
        let (_dir, path) = write_temp(FIXTURE);
        let index = load_coco(&path).unwrap();
        assert_eq!(index.images.len(), 2);
        assert_eq!(index.num_annotations(), 3);
        assert_eq!(index.skipped, 0);
        assert_eq!(index.categories.len(), 2);
        // xywh [10,10,20,20] converts to corners (10,10)-(30,30).
        let first = &index.annotations_for(1)[0];
        assert_eq!(
            (first.bbox.x1, first.bbox.y1, first.bbox.x2, first.bbox.y2),
            (10.0, 10.0, 30.0, 30.0)
        );
        // Paths resolve next to the annotation file.
        assert!(index.images[0].path.ends_with("a.png"));
    }

    #[test]
    fn zero_width_annotation_is_skipped_with_one_warning() {
        let doc = r#"{
            "images": [{"id": 1, "file_name": "a.png", "height": 100, "width": 100}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 0, "bbox": [10, 10, 0, 20], "area": 0, "iscrowd": 0},
                {"id": 2, "image_id": 1, "category_id": 0, "bbox": [10, 10, 5, 5], "area": 25, "iscrowd": 0}
            ],
            "categories": [{"id": 0, "name": "square"}]
        }"#;
        let (_dir, path) = write_temp(doc);
        let index = load_coco(&path).unwrap();
        assert_eq!(index.skipped, 1);
        assert_eq!(index.num_annotations(), 1);
    }

    #[test]
    fn unknown_image_or_category_is_skipped() {
        let doc = r#"{
            "images": [{"id": 1, "file_name": "a.png", "height": 100, "width": 100}],
            "annotations": [
                {"id": 1, "image_id": 99, "category_id": 0, "bbox": [10, 10, 5, 5], "area": 25, "iscrowd": 0},
                {"id": 2, "image_id": 1, "category_id": 42, "bbox": [10, 10, 5, 5], "area": 25, "iscrowd": 0}
            ],
            "categories": [{"id": 0, "name": "square"}]
        }"#;
        let (_dir, path) = write_temp(doc);
        let index = load_coco(&path).unwrap();
        assert_eq!(index.skipped, 2);
        assert_eq!(index.num_annotations(), 0);
    }

    #[test]
    fn boxes_clamp_to_image_bounds() {
        let doc = r#"{
            "images": [{"id": 1, "file_name": "a.png", "height": 50, "width": 50}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 0, "bbox": [40, 40, 30, 30], "area": 900, "iscrowd": 0}
            ],
            "categories": [{"id": 0, "name": "square"}]
        }"#;
        let (_dir, path) = write_temp(doc);
        let index = load_coco(&path).unwrap();
        let gt = &index.annotations_for(1)[0];
        assert_eq!((gt.bbox.x2, gt.bbox.y2), (50.0, 50.0));
    }

    #[test]
    fn unparsable_json_is_fatal() {
        let (_dir, path) = write_temp("{ not json");
        assert!(matches!(load_coco(&path), Err(CliError::Json { .. })));
    }

    #[test]
    fn export_round_trips_boxes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        let images = vec![ExportImage {
            image_id: 7,
            file_name: "images/000007.png".into(),
            h: 128,
            w: 128,
            boxes: vec![
                GroundTruthBox {
                    bbox: BoxPx::new(12.0, 30.0, 44.0, 62.0),
                    class_index: 0,
                },
                GroundTruthBox {
                    bbox: BoxPx::new(80.0, 8.0, 89.0, 17.0),
                    class_index: 1,
                },
            ],
        }];
        save_coco(&path, &images, &["square", "circle"]).unwrap();
        let index = load_coco(&path).unwrap();
        assert_eq!(index.skipped, 0);
        assert_eq!(index.images.len(), 1);
        let loaded = index.annotations_for(7);
        assert_eq!(loaded, images[0].boxes.as_slice());
    }
}
