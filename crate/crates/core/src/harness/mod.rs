//! Experiment orchestration: presets, training to interpolation,
//! extrapolation evaluation, reports and persisted artifacts.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod train;

pub use artifacts::{export_bias_heatmaps, export_heatmaps, load_bias_set, resolve_out_dir, save_bias_set};
pub use config::{ExperimentConfig, Method, Scale};
pub use pipeline::{
    interpolation_stage, run_abc_pipeline, run_abs, run_eval, run_interpolation, AbcRun, StageResult,
};
pub use report::{render_table, EvalReport, LengthResult};
pub use train::{accuracy, scored_accuracy, train_until, BiasCache, Scoring, TrainOptions, TrainOutcome};
