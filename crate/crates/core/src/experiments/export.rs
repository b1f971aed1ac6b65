//! CSV and JSON artifacts of an ablation sweep.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::io::{fmt_f64, write_atomic};

use super::ablation::{
    population_stats, AblationConfig, AblationResult, Cell, CellStats, EcdfRow, FinalOutcome, PopulationStats,
    RunFailure, RunRecord,
};
use super::stats::CvarTable;

pub const RUNS_FILE: &str = "runs.csv";
pub const CVAR_FILE: &str = "cvar.csv";
pub const ECDF_FILE: &str = "ecdf.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const RUNS_HEADER: [&str; 13] = [
    "experiment_id",
    "rho2_scale",
    "c_scale",
    "gamma",
    "beta",
    "beta0",
    "T",
    "patient_id",
    "replication",
    "algorithm",
    "t",
    "cum_regret",
    "norm_regret",
];

/// One parsed line of `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub experiment_id: String,
    pub rho2_scale: f64,
    pub c_scale: f64,
    pub gamma: f64,
    pub beta: f64,
    pub beta0: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub patient_id: usize,
    pub replication: usize,
    pub algorithm: String,
    pub t: usize,
    pub cum_regret: f64,
    pub norm_regret: f64,
}

impl RunRow {
    pub fn cell(&self) -> Cell {
        Cell {
            rho2: self.rho2_scale,
            c_scale: self.c_scale,
            gamma: self.gamma,
            beta: self.beta,
            beta0: self.beta0,
            horizon: self.horizon,
        }
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| EngageError::Io(std::io::Error::other(e.to_string())))
}

/// One row per record and checkpoint (evaluation steps and the final step).
pub fn runs_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUNS_HEADER)?;
    for r in records {
        for t in r.series.checkpoints() {
            let norm = r.normalized.as_ref().map_or(f64::NAN, |n| n[t - 1]);
            w.write_record([
                r.experiment_id.clone(),
                fmt_f64(r.cell.rho2),
                fmt_f64(r.cell.c_scale),
                fmt_f64(r.cell.gamma),
                fmt_f64(r.cell.beta),
                fmt_f64(r.cell.beta0),
                r.cell.horizon.to_string(),
                r.patient_id.to_string(),
                r.replication.to_string(),
                r.algorithm.clone(),
                t.to_string(),
                fmt_f64(r.series.cumulative[t - 1]),
                fmt_f64(norm),
            ])?;
        }
    }
    finish(w)
}

pub fn cvar_csv(table: &CvarTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["algorithm", "tail", "median", "q1", "q3"])?;
    for row in &table.rows {
        w.write_record([
            row.algorithm.clone(),
            fmt_f64(row.tail),
            fmt_f64(row.median),
            fmt_f64(row.q1),
            fmt_f64(row.q3),
        ])?;
    }
    finish(w)
}

pub fn ecdf_csv(experiment_id: &str, rows: &[EcdfRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["experiment_id", "cell", "algorithm", "value", "fraction"])?;
    for r in rows {
        w.write_record([
            experiment_id.to_string(),
            r.cell.clone(),
            r.algorithm.clone(),
            fmt_f64(r.value),
            fmt_f64(r.fraction),
        ])?;
    }
    finish(w)
}

pub fn parse_runs_csv(bytes: &[u8]) -> Result<Vec<RunRow>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RUNS_HEADER {
        return Err(EngageError::Parse(format!("unexpected runs.csv header {header:?}")));
    }
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<RunRow>, _>>()?;
    if rows.is_empty() {
        return Err(EngageError::EmptyInput("runs.csv"));
    }
    Ok(rows)
}

/// Final-step outcomes and algorithm order (first appearance) from parsed rows.
pub fn outcomes_from_rows(rows: &[RunRow]) -> (Vec<FinalOutcome>, Vec<String>) {
    let outcomes: Vec<FinalOutcome> = rows
        .iter()
        .filter(|r| r.t == r.horizon)
        .map(|r| FinalOutcome {
            cell: r.cell().label(),
            patient_id: r.patient_id,
            algorithm: r.algorithm.clone(),
            value: r.norm_regret,
        })
        .collect();
    let mut algorithms: Vec<String> = Vec::new();
    for o in &outcomes {
        if !algorithms.contains(&o.algorithm) {
            algorithms.push(o.algorithm.clone());
        }
    }
    (outcomes, algorithms)
}

/// Recomputes population statistics from the contents of a `runs.csv`.
pub fn summarize_runs(bytes: &[u8]) -> Result<(String, PopulationStats)> {
    let rows = parse_runs_csv(bytes)?;
    let experiment_id = rows[0].experiment_id.clone();
    let (outcomes, algorithms) = outcomes_from_rows(&rows);
    Ok((experiment_id, population_stats(&outcomes, &algorithms)?))
}

/// Machine-readable digest of a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationSummary {
    pub experiment_id: String,
    pub seed: u64,
    pub config: AblationConfig,
    pub records: usize,
    pub cells: Vec<CellStats>,
    pub cvar: CvarTable,
    pub failures: Vec<RunFailure>,
    pub excluded: Vec<String>,
    pub wall_time: f64,
}

impl AblationSummary {
    pub fn new(result: &AblationResult) -> Self {
        AblationSummary {
            experiment_id: result.config.experiment_id.clone(),
            seed: result.config.seed,
            config: result.config.clone(),
            records: result.records.len(),
            cells: result.stats.cells.clone(),
            cvar: result.stats.cvar.clone(),
            failures: result.failures.clone(),
            excluded: result.excluded.clone(),
            wall_time: result.wall_time,
        }
    }
}

/// Writes `cvar.csv` and `ecdf.csv` for the given statistics.
pub fn write_stats(dir: &Path, experiment_id: &str, stats: &PopulationStats) -> Result<()> {
    write_atomic(&dir.join(CVAR_FILE), &cvar_csv(&stats.cvar)?)?;
    write_atomic(&dir.join(ECDF_FILE), &ecdf_csv(experiment_id, &stats.ecdf)?)
}

/// Writes the three CSV files and `summary.json` (the given JSON value).
pub fn write_ablation_outputs(dir: &Path, result: &AblationResult, summary: &impl Serialize) -> Result<()> {
    write_atomic(&dir.join(RUNS_FILE), &runs_csv(&result.records)?)?;
    write_stats(dir, &result.config.experiment_id, &result.stats)?;
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    write_atomic(&dir.join(SUMMARY_FILE), json.as_bytes())
}
