//! G-CAME: per-object saliency explanations for convolutional object detectors.
//!
//! The crate explains a single detector prediction as a saliency map over the
//! input image. Gradients of the target score localize the object on the
//! feature grid, per-channel gradient means weight the feature maps, and an
//! adaptive Gaussian kernel gates the weighted maps to the one object under
//! explanation. Alongside the explainer the crate ships:
//!
//! - baseline explainers (signed GradCAM, D-RISE random-mask perturbation),
//! - localization and faithfulness metrics (pointing game, energy-based
//!   pointing game, confidence drop) plus record aggregation,
//! - model-parameter randomization sanity checks,
//! - a small deterministic toy detector with full forward/backward support,
//!   used as the test workhorse.
//!
//! The crate is `no_std` (with `alloc`); all floating-point transcendentals
//! go through `libm` so results are bit-reproducible across platforms. File
//! formats, rendering, and the CLI live in the companion `gcame-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod baselines;
pub mod detector;
pub mod error;
pub mod gcame;
pub mod grid;
pub mod hash;
pub mod image;
pub mod imageops;
pub mod metrics;
pub mod sanity;
pub mod toy;

pub use detector::{
    parse_detections, select_target_layers, BoxPx, CaptureSession, Detection, DetectorModel,
    ExplanationTarget, LayerGraph, ModelKind, RandomizableModel, ScoreKind, TargetLayerSet,
};
pub use error::Error;
pub use gcame::{explain, GcameConfig, SaliencyMap};
pub use grid::{Grid2, Grid3};
pub use image::ImageInput;

/// Detections below this objectness are hidden from explanation targets.
pub const DEFAULT_OBJECTNESS_THRESHOLD: f32 = 0.25;
