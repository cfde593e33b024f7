//! Model registry: maps command-line model names to something usable.
//!
//! Only the bundled toy detector runs inference here. The production
//! detector names resolve to layer-graph presets so target-layer selection
//! and plumbing can be exercised, but asking them for inference is an
//! explicit error rather than a silent fallback.

use std::path::Path;

use gcame_core::detector::{one_stage_graph_preset, two_stage_graph_preset};
use gcame_core::toy::ToyDetector;
use gcame_core::{DetectorModel, LayerGraph, ModelKind};

use crate::error::{CliError, Result};

pub const KNOWN_MODELS: [&str; 3] = ["toy", "yolox", "fasterrcnn"];

/// The layer graph and selection policy a model name implies.
pub fn layer_graph_for(name: &str) -> Result<(LayerGraph, ModelKind)> {
    match name {
        "toy" => {
            let model = ToyDetector::bundled();
            Ok((model.layer_graph(), ModelKind::Toy))
        }
        "yolox" => Ok((one_stage_graph_preset(), ModelKind::OneStage)),
        "fasterrcnn" => Ok((two_stage_graph_preset(), ModelKind::TwoStage)),
        other => Err(CliError::Usage(format!(
            "unknown model {other:?}; expected one of {KNOWN_MODELS:?}"
        ))),
    }
}

/// Instantiates a model that can actually run. `weights` replaces the
/// bundled toy checkpoint when given.
pub fn load_runnable(name: &str, weights: Option<&Path>) -> Result<ToyDetector> {
    match name {
        "toy" => match weights {
            None => Ok(ToyDetector::bundled()),
            Some(path) => {
                let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
                ToyDetector::from_checkpoint(&bytes).map_err(CliError::Core)
            }
        },
        "yolox" | "fasterrcnn" => Err(CliError::Config(format!(
            "model {name:?} ships as a layer-graph preset only; \
             inference needs an external runtime this tool does not bundle"
        ))),
        other => Err(CliError::Usage(format!(
            "unknown model {other:?}; expected one of {KNOWN_MODELS:?}"
        ))),
    }
}
