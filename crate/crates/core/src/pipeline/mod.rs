//! Configuration, file formats and the layer runner.

pub mod config;
pub mod io;
pub mod run;

pub use config::{Layer, PipelineConfig, ResolvedConfig};
pub use run::{run_layers, run_pipeline, write_outputs, PipelineInputs, PipelineOutput, PipelineReport};
