//! Regret accounting, population statistics, the ablation sweeps and the
//! identification-rate benchmark.
//!
//! Every run draws from streams derived from the master seed and the run's
//! identity (experiment, cell, patient, replication, algorithm), so a sweep
//! produces the same bytes whatever the worker count.

mod ablation;
mod export;
mod runner;
mod stats;
mod sysid;

pub use ablation::{
    population_stats, run_ablation, run_single, AblationConfig, AblationGrid, AblationResult, AlgorithmCellStats, Cell, CellStats,
    EcdfRow, FinalOutcome, PopulationStats, RunFailure, RunRecord,
};
pub use export::{
    cvar_csv, ecdf_csv, outcomes_from_rows, parse_runs_csv, runs_csv, summarize_runs, write_ablation_outputs,
    write_stats, AblationSummary, RunRow, CVAR_FILE, ECDF_FILE, RUNS_FILE, SUMMARY_FILE,
};
pub use runner::{random_baseline, run_trajectory, PlanningConfig, RegretSeries, Scenario};
pub use stats::{
    cvar_table, ecdf, empirical_cvar, loglog_slope, mean, median, normalize, quantile, CvarRow, CvarTable, CVAR_TAILS,
};
pub use sysid::{sysid_rate_bench, sysid_trajectory, SlopeReport, SysidConfig, SysidTrace};
