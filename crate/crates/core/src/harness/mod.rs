//! Experiment driver: configs, seed runs, sweeps, aggregation, plots and
//! the verification suites.

pub mod aggregate;
pub mod config;
pub mod plot;
pub mod run;
pub mod sweep;
pub mod verify;

pub use aggregate::{aggregate_files, aggregate_rows, save_aggregate_csv, write_aggregate_csv, AggregateStats, ColumnStats};
pub use config::{default_output_root, ExperimentConfig, RunConfig, OUT_DIR_ENV};
pub use plot::{render_svg, PlotStyle};
pub use run::{run, run_seed, seed_csv_path, RunOutcome, SeedOutcome, SeedRun};
pub use sweep::{expand_grid, normalize, sweep, AxisValues, CellResult, SweepAxis, SweepOutcome};
pub use verify::{verify, Check, Suite};
