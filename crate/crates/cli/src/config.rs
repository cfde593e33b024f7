//! Run configuration assembled from three layers: a TOML file, `GCAME_*`
//! environment variables, and command-line flags. Flags win over the
//! environment, which wins over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, Result};

/// One partially-specified layer. Every field is optional so layers can be
/// stacked; [`ConfigLayer::merge`] lets the upper layer shadow the lower.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub model: Option<String>,
    pub weights: Option<PathBuf>,
    pub method: Option<String>,
    /// Target layer ids, overriding the model's declared choice.
    pub layers: Option<Vec<String>>,
    pub metrics: Option<Vec<String>>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub objectness_threshold: Option<f32>,
    pub drise_masks: Option<usize>,
    pub workers: Option<usize>,
}

impl ConfigLayer {
    /// Fields set in `upper` replace the same fields here.
    pub fn merge(mut self, upper: ConfigLayer) -> ConfigLayer {
        macro_rules! take {
            ($($f:ident),*) => { $( if upper.$f.is_some() { self.$f = upper.$f; } )* };
        }
        take!(
            model, weights, method, layers, metrics, output_dir, seed,
            objectness_threshold, drise_masks, workers
        );
        self
    }

    pub fn from_toml(path: &Path) -> Result<ConfigLayer> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Reads `GCAME_*` variables through `lookup`, so tests can supply a map
    /// instead of mutating the process environment.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<ConfigLayer> {
        fn parse<T: std::str::FromStr>(key: &str, raw: String) -> Result<Option<T>> {
            raw.parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("{key}: cannot parse {raw:?}")))
        }
        let list = |raw: String| {
            raw.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
        };
        let mut layer = ConfigLayer::default();
        if let Some(v) = lookup("GCAME_MODEL") {
            layer.model = Some(v);
        }
        if let Some(v) = lookup("GCAME_WEIGHTS") {
            layer.weights = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("GCAME_METHOD") {
            layer.method = Some(v);
        }
        if let Some(v) = lookup("GCAME_LAYERS") {
            layer.layers = Some(list(v));
        }
        if let Some(v) = lookup("GCAME_METRICS") {
            layer.metrics = Some(list(v));
        }
        if let Some(v) = lookup("GCAME_OUTPUT_DIR") {
            layer.output_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("GCAME_SEED") {
            layer.seed = parse("GCAME_SEED", v)?;
        }
        if let Some(v) = lookup("GCAME_OBJECTNESS_THRESHOLD") {
            layer.objectness_threshold = parse("GCAME_OBJECTNESS_THRESHOLD", v)?;
        }
        if let Some(v) = lookup("GCAME_DRISE_MASKS") {
            layer.drise_masks = parse("GCAME_DRISE_MASKS", v)?;
        }
        if let Some(v) = lookup("GCAME_WORKERS") {
            layer.workers = parse("GCAME_WORKERS", v)?;
        }
        Ok(layer)
    }

    pub fn from_env() -> Result<ConfigLayer> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }
}

/// A fully-resolved run configuration with every default applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub weights: Option<PathBuf>,
    pub method: String,
    pub layers: Option<Vec<String>>,
    pub metrics: Vec<String>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub objectness_threshold: f32,
    pub drise_masks: usize,
    pub workers: usize,
}

pub const DEFAULT_DRISE_MASKS: usize = 1000;
pub const KNOWN_METHODS: [&str; 3] = ["gcame", "gradcam", "drise"];
pub const KNOWN_METRICS: [&str; 4] = ["pg", "ebpg", "confidence-drop", "information-drop"];

impl RunConfig {
    /// Applies defaults to whatever the merged layers left unset and
    /// validates enumerated fields.
    pub fn resolve(layer: ConfigLayer) -> Result<RunConfig> {
        let method = layer.method.unwrap_or_else(|| "gcame".to_string());
        if !KNOWN_METHODS.contains(&method.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown method {method:?}; expected one of {KNOWN_METHODS:?}"
            )));
        }
        let metrics = layer
            .metrics
            .unwrap_or_else(|| KNOWN_METRICS.iter().map(|s| s.to_string()).collect());
        for m in &metrics {
            if !KNOWN_METRICS.contains(&m.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown metric {m:?}; expected one of {KNOWN_METRICS:?}"
                )));
            }
        }
        Ok(RunConfig {
            model: layer.model.unwrap_or_else(|| "toy".to_string()),
            weights: layer.weights,
            method,
            layers: layer.layers,
            metrics,
            output_dir: layer.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            seed: layer.seed.unwrap_or(0),
            objectness_threshold: layer
                .objectness_threshold
                .unwrap_or(gcame_core::DEFAULT_OBJECTNESS_THRESHOLD),
            drise_masks: layer.drise_masks.unwrap_or(DEFAULT_DRISE_MASKS),
            workers: layer.workers.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            }),
        })
    }
}
