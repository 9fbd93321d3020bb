//! Dataset pipeline: generation, inpainting, filtering, validation and the CLI.

pub mod cli;
pub mod config;
pub mod error;
pub mod filter;
pub mod generate;
pub mod inpaint;
pub mod io;
pub mod manifest;
pub mod preview;
pub mod stats;
pub mod validate;

pub use config::GenerationConfig;
pub use error::{PipelineError, Result};
