//! Dataset generators, experiment orchestration, gradient checks and report aggregation.

mod dataset;
mod docs;
mod gradcheck;
mod grid;
mod report;
mod run;
mod series;
mod sim;

pub use dataset::{DatasetFile, DatasetMeta, Payload, Splits, DATASET_VERSION};
pub use docs::{gen_synthetic_docs, DocTask};
pub use gradcheck::{
    format_grad_table, gradcheck, gradcheck_all, GradReport, GradSizes, GradTarget, GroupResult, GRADCHECK_TOLERANCE,
};
pub use grid::{gen_subsampled_grid, pattern_image, GridTask, GRID_CLASSES};
pub use report::{format_summary, load_reports, summarize, Stat, Summary};
pub use run::{
    effective_precision, eval_saved, exit_code, resolve_spec, run_experiment, run_stem, ExperimentOutcome,
    ForecastSettings, ModelEntry, Preset, RunConfig, DEFAULT_EMBED_DIM, DEFAULT_WINDOW, PRECISION_ENV,
};
pub use series::{gen_synthetic_sensor_series, SensorField, SensorTask};
pub use sim::{gen_sim_dataset, Boundary, SimKind, SimTask, DEFAULT_DENSITY};
