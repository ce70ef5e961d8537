//! Seeded Monte Carlo campaigns: simulation, statistics and output files.

mod artifacts;
mod campaign;
mod config;
mod trial;

pub use artifacts::{
    emit_artifacts, noise_table, plot_errors, plot_mu_comparison, plot_psi,
    plot_refinement_histogram, plot_rmse, sig4, strategy_table, summary_text, write_rmse_csv,
    write_run_csv, ArtifactPaths, RMSE_CSV_COLUMNS, RUN_CSV_COLUMNS, RUN_CSV_REFINED,
};
pub use campaign::{
    consistency_report, run_monte_carlo, Campaign, ConsistencyReport, RmseSeries, Stats,
    AXIS_LABELS,
};
pub use config::{
    DynamicsConfig, FilterConfig, GridConfig, ManeuverConfig, MisalignmentSampling, SensorConfig,
    SimConfig,
};
pub use trial::{attitude_error, random_attitude, run_trial, trial_rng, RunResult, StepRecord};
