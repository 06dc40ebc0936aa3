//! Batch experiment runner: configs, grids, CSV and trade-off series.

pub mod config;
pub mod demos;
pub mod grid;
pub mod output;

pub use config::{load_config, CellSpec, ExperimentConfig, RewardSpec, ScheduleSpec};
pub use demos::{demo_config, demo_source, DEMOS};
pub use grid::{run_grid, CellFailure, CellKey, ResultRow, ResultTable};
pub use output::{
    emit_standard_series, emit_tradeoff_data, emit_tradeoff_series, summary, to_csv_string, tradeoff_series, write_csv,
    Series, CSV_HEADER,
};
