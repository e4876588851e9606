//! Closed-loop trials, Monte Carlo sweeps, built-in scenarios and log export.

mod config;
mod export;
mod scenarios;
mod sweep;
mod trial;

pub use config::{
    AfterResume, ClutterConfig, CriteriaConfig, InitialConfig, Mission, Rates, ScenarioConfig, SensorConfig, Variant,
    VehicleConfig,
};
pub use export::{export_trajectory, import_trajectory, read_log, write_log, ExportFormat, LogRow, CSV_HEADER};
pub use scenarios::{
    floor_index, place_clutter, scenario_a_config, scenario_b_config, sweep_config, sweep_speeds, APPROACH_ACCEL,
    APPROACH_OVERRUN, WALL_DISTANCE,
};
pub use sweep::{
    map_jobs, run_batch, trial_seed, trials_csv, velocity_sweep, CellSummary, Execution, ScenarioSummary, SweepSummary,
};
pub use trial::{
    accelerometer_trigger, path_progress, run_trial, run_trial_with, success_criterion, CollisionEvent, ModeChange,
    Outcome, RunOptions, TrialResult, RECONTACT_RADIUS,
};
