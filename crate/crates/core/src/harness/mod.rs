//! Sequential-task experiments: configuration, the per-condition task loop,
//! multi-seed aggregation and artifact emission.

mod config;
mod grid;
mod report;
mod run;

pub use config::{
    rote_buffer_for, Condition, ExperimentConfig, Hyper, TaskSpec, MINI_CLASSES, MINI_PER_CLASS,
};
pub use grid::emit_image_grid;
pub use report::{emit_metrics_csv, read_metrics_csv, summary_path, ConditionReport};
pub use run::{aggregate_condition, dry_run, load_tasks, protocol_lines, run_condition, sequential_task_loop, RunLog};
