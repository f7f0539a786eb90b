//! Dataset files, checkpoints, workspaces, reports and the pipeline driver
//! around `tal-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod workspace;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{Pipeline, Plan, Stage};
