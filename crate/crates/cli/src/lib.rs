//! Everything around the core explainers that needs an operating system:
//! dataset loading, saliency serialization, rendering, the evaluation
//! harness, and the command-line interface.

pub mod cli;
pub mod coco;
pub mod compare;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod infodrop;
pub mod registry;
pub mod render;
pub mod report;
pub mod saliency_io;
pub mod sanity_run;
pub mod trainer;

pub use error::{CliError, Result};
