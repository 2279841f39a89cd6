//! Benchmark grid, run configuration and the end-to-end pipeline.

mod config;
mod grid;
mod pipeline;

pub use config::{
    CustomConfig, GridSpec, ModelShape, Overrides, RunConfig, TrainOverrides, SCHEMA_VERSION, SMOKE_PROFILE,
};
pub use grid::{
    benchmark_table, generate_benchmark, render_prompt, train_count, Axis, FamilyRow, GridResolution,
    PromptConfig, Split, DEFAULT_RESOLUTION,
};
pub use pipeline::{
    default_run_dir, Condition, ConditionReport, Pipeline, PipelineError, RunReport, TrainSummary,
    DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_ENV,
};
