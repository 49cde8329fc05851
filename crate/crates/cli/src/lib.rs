//! Pipeline orchestration for the `tractpipe` binary.
//!
//! Stages communicate exclusively through on-disk artifacts and manifests
//! under one workspace directory, so any stage can be rerun or inspected in
//! isolation. Every command is deterministic given the same config and seed.

pub mod commands;
pub mod config;
pub mod workspace;

pub use commands::{
    cmd_evaluate, cmd_phantom, cmd_pipeline, cmd_predict, cmd_stage1, cmd_stage2, cmd_stage3,
    AblationSummary,
};
pub use config::PipelineConfig;
pub use workspace::Workspace;
