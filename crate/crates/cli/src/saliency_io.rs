//! Saliency map persistence: a raw float32 little-endian binary next to a
//! JSON sidecar carrying shape, method, target, and per-layer diagnostics.
//!
//! The pair round-trips bit-exactly: writing, reading, and writing again
//! yields identical bytes for both files.

use std::path::{Path, PathBuf};

use gcame_core::gcame::{LayerReport, SaliencyMap};
use gcame_core::metrics::Method;
use gcame_core::{BoxPx, Detection, ExplanationTarget, Grid2, ScoreKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TargetMeta {
    pub bbox: [f32; 4],
    pub objectness: f32,
    pub class_scores: Vec<f32>,
    pub class_index: usize,
    pub box_index: usize,
    pub score_kind: String,
    pub target_class: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerMeta {
    pub layer_id: String,
    pub stride: u32,
    pub sigmas: Vec<f64>,
}

/// Companion metadata for one saliency binary.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SaliencySidecar {
    pub version: u32,
    pub method: String,
    /// Rows, then columns, of the row-major binary.
    pub shape: [usize; 2],
    pub constant: bool,
    pub target: TargetMeta,
    pub layers: Vec<LayerMeta>,
}

fn method_from_tag(tag: &str) -> Result<Method> {
    match tag {
        "gcame" => Ok(Method::Gcame),
        "gradcam" => Ok(Method::GradCam),
        "drise" => Ok(Method::DRise),
        other => Err(CliError::Config(format!("unknown method tag {other:?}"))),
    }
}

fn score_kind_tag(kind: ScoreKind) -> &'static str {
    match kind {
        ScoreKind::ClassScore => "class_score",
        ScoreKind::ObjectnessWeighted => "objectness_weighted",
    }
}

fn score_kind_from_tag(tag: &str) -> Result<ScoreKind> {
    match tag {
        "class_score" => Ok(ScoreKind::ClassScore),
        "objectness_weighted" => Ok(ScoreKind::ObjectnessWeighted),
        other => Err(CliError::Config(format!("unknown score kind {other:?}"))),
    }
}

/// Derives the sidecar path: `<stem>.bin` -> `<stem>.json`.
pub fn sidecar_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("json")
}

/// Writes `<stem>.bin` (row-major f32 LE) and `<stem>.json` into `dir`.
/// Layer diagnostics may be empty (methods without per-layer data).
pub fn write_saliency(
    dir: &Path,
    stem: &str,
    map: &SaliencyMap,
    layers: &[LayerReport],
) -> Result<(PathBuf, PathBuf)> {
    let bin_path = dir.join(format!("{stem}.bin"));
    let mut bytes = Vec::with_capacity(4 * map.values.data().len());
    for v in map.values.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&bin_path, &bytes).map_err(|e| CliError::io(&bin_path, e))?;

    let sidecar = SaliencySidecar {
        version: SIDECAR_VERSION,
        method: map.method.as_str().to_string(),
        shape: [map.values.h(), map.values.w()],
        constant: map.constant,
        target: TargetMeta {
            bbox: [
                map.target.detection.bbox.x1,
                map.target.detection.bbox.y1,
                map.target.detection.bbox.x2,
                map.target.detection.bbox.y2,
            ],
            objectness: map.target.detection.objectness,
            class_scores: map.target.detection.class_scores.clone(),
            class_index: map.target.detection.class_index,
            box_index: map.target.detection.box_index,
            score_kind: score_kind_tag(map.target.score_kind).to_string(),
            target_class: map.target.target_class,
        },
        layers: layers
            .iter()
            .map(|l| LayerMeta {
                layer_id: l.layer_id.clone(),
                stride: l.stride,
                sigmas: l.sigmas.clone(),
            })
            .collect(),
    };
    let json_path = sidecar_path(&bin_path);
    let text = serde_json::to_string_pretty(&sidecar).expect("static structure serializes");
    std::fs::write(&json_path, text).map_err(|e| CliError::io(&json_path, e))?;
    Ok((bin_path, json_path))
}

/// Reads a saliency binary and its sidecar back into core types.
pub fn read_saliency(bin_path: &Path) -> Result<(SaliencyMap, SaliencySidecar)> {
    let json_path = sidecar_path(bin_path);
    let text = std::fs::read_to_string(&json_path).map_err(|e| CliError::io(&json_path, e))?;
    let sidecar: SaliencySidecar = serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: json_path.clone(),
        source: e,
    })?;
    if sidecar.version != SIDECAR_VERSION {
        return Err(CliError::Config(format!(
            "unsupported sidecar version {}",
            sidecar.version
        )));
    }
    let bytes = std::fs::read(bin_path).map_err(|e| CliError::io(bin_path, e))?;
    let [h, w] = sidecar.shape;
    if bytes.len() != 4 * h * w {
        return Err(CliError::Config(format!(
            "{}: expected {} bytes for shape {h}x{w}, found {}",
            bin_path.display(),
            4 * h * w,
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let map = SaliencyMap {
        values: Grid2::from_vec(h, w, values),
        method: method_from_tag(&sidecar.method)?,
        constant: sidecar.constant,
        target: ExplanationTarget {
            detection: Detection {
                bbox: BoxPx::new(
                    sidecar.target.bbox[0],
                    sidecar.target.bbox[1],
                    sidecar.target.bbox[2],
                    sidecar.target.bbox[3],
                ),
                objectness: sidecar.target.objectness,
                class_scores: sidecar.target.class_scores.clone(),
                class_index: sidecar.target.class_index,
                box_index: sidecar.target.box_index,
            },
            score_kind: score_kind_from_tag(&sidecar.target.score_kind)?,
            target_class: sidecar.target.target_class,
        },
    };
    Ok((map, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> SaliencyMap {
        let mut values = Grid2::zeros(5, 4);
        for (i, v) in values.data_mut().iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin().abs();
        }
        SaliencyMap {
            values,
            method: Method::Gcame,
            constant: false,
            target: ExplanationTarget {
                detection: Detection {
                    bbox: BoxPx::new(1.25, 2.5, 3.75, 4.0),
                    objectness: 0.875,
                    class_scores: vec![0.125, 0.8125],
                    class_index: 1,
                    box_index: 11,
                },
                score_kind: ScoreKind::ClassScore,
                target_class: 1,
            },
        }
    }

    fn sample_layers() -> Vec<LayerReport> {
        vec![LayerReport {
            layer_id: "head0.stem".into(),
            stride: 8,
            skipped: false,
            center: Some((2, 3)),
            center_fell_back: false,
            positive_channels: 3,
            negative_channels: 1,
            sigmas: vec![0.1, 0.3199140833353593, 0.65],
            sigma_clamped: 1,
            sigma_degenerate: 0,
        }]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let map = sample_map();
        let (bin1, json1) = write_saliency(dir.path(), "m", &map, &sample_layers()).unwrap();
        let bin_bytes = std::fs::read(&bin1).unwrap();
        let json_bytes = std::fs::read(&json1).unwrap();

        let (loaded, sidecar) = read_saliency(&bin1).unwrap();
        assert_eq!(loaded.values.data(), map.values.data());
        assert_eq!(loaded.target, map.target);
        assert_eq!(sidecar.layers[0].sigmas[1], 0.3199140833353593);

        // Write the loaded copy and compare raw bytes.
        let layers = sample_layers();
        let (bin2, json2) = write_saliency(dir.path(), "m2", &loaded, &layers).unwrap();
        assert_eq!(std::fs::read(&bin2).unwrap(), bin_bytes);
        assert_eq!(std::fs::read(&json2).unwrap(), json_bytes);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (bin, _) = write_saliency(dir.path(), "m", &sample_map(), &[]).unwrap();
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes.pop();
        std::fs::write(&bin, &bytes).unwrap();
        assert!(read_saliency(&bin).is_err());
    }

    #[test]
    fn missing_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (bin, json) = write_saliency(dir.path(), "m", &sample_map(), &[]).unwrap();
        std::fs::remove_file(json).unwrap();
        assert!(read_saliency(&bin).is_err());
    }
}
