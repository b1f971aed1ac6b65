//! Subcommand implementations. Each writes its artifacts atomically into the
//! output directory, together with a `summary.json` carrying provenance.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use engage_core::cohort::save_cohort;
use engage_core::experiments::{
    run_ablation, run_single, summarize_runs, sysid_rate_bench, write_ablation_outputs, write_stats, AblationSummary,
    CvarTable, RunRecord, CVAR_FILE, ECDF_FILE, SUMMARY_FILE,
};
use engage_core::io::{fmt_f64, write_atomic};
use log::{info, warn};
use serde::Serialize;

use crate::config::{ExperimentConfig, Profile};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const COHORT_FILE: &str = "cohort.json";
pub const SLOPES_FILE: &str = "slopes.json";

/// A validated config plus where and how to run it.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub workers: usize,
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    artifact_version: &'static str,
    command: &'static str,
    experiment_id: &'a str,
    config_hash: String,
    master_seed: u64,
    profile: Profile,
    workers: usize,
    wall_time: f64,
    /// Set when some runs failed and the outputs cover only the rest.
    partial: bool,
    result: &'a T,
}

impl RunContext {
    fn summary<'a, T: Serialize>(
        &'a self,
        command: &'static str,
        start: Instant,
        partial: bool,
        result: &'a T,
    ) -> anyhow::Result<Summary<'a, T>> {
        Ok(Summary {
            artifact_version: env!("CARGO_PKG_VERSION"),
            command,
            experiment_id: &self.config.experiment_id,
            config_hash: self.config.hash()?,
            master_seed: self.config.seed,
            profile: self.config.profile,
            workers: self.workers,
            wall_time: start.elapsed().as_secs_f64(),
            partial,
            result,
        })
    }

    fn write_summary<T: Serialize>(&self, command: &'static str, start: Instant, result: &T) -> anyhow::Result<()> {
        write_json(&self.out.join(SUMMARY_FILE), &self.summary(command, start, false, result)?)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())?;
    Ok(())
}

fn print_cvar(table: &CvarTable, tail: f64) {
    println!("{:<12} {:>10} {:>10} {:>10}", "algorithm", "median", "q1", "q3");
    for r in table.rows.iter().filter(|r| r.tail == tail) {
        println!("{:<12} {:>10.4} {:>10.4} {:>10.4}", r.algorithm, r.median, r.q1, r.q3);
    }
}

/// Runs the full sweep. Returns `false` when some runs failed; the outputs
/// are still written and flagged as partial.
pub fn ablate(ctx: &RunContext) -> anyhow::Result<bool> {
    let start = Instant::now();
    let cfg = ctx.config.ablation_config();
    let cohort = ctx.config.cohort()?;
    let result = run_ablation(&cfg, &cohort)?;
    let partial = !result.failures.is_empty();
    let body = AblationSummary::new(&result);
    let summary = ctx.summary("ablate", start, partial, &body)?;
    write_ablation_outputs(&ctx.out, &result, &summary)?;
    println!("CVaR(0.5) of normalized regret across cells:");
    print_cvar(&result.stats.cvar, 0.5);
    if partial {
        warn!("{} runs failed; outputs are partial", result.failures.len());
        for f in &result.failures {
            warn!("{} patient {}: {}", f.cell, f.patient_id, f.error);
        }
    }
    info!("wrote {} records to {}", result.records.len(), ctx.out.display());
    Ok(!partial)
}

#[derive(Serialize)]
struct SimulateResult<'a> {
    cell: usize,
    patient: usize,
    replication: usize,
    algorithm: &'a str,
    horizon: usize,
    cumulative_regret: f64,
    normalized_regret: f64,
    evaluations: usize,
    total_reward: f64,
}

fn trajectory_csv(rec: &RunRecord) -> anyhow::Result<Vec<u8>> {
    let s = &rec.series;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "x", "action", "reward", "gap", "cum_regret", "norm_regret"])?;
    for t in 0..s.horizon() {
        let norm = rec.normalized.as_ref().map_or(f64::NAN, |n| n[t]);
        w.write_record([
            (t + 1).to_string(),
            fmt_f64(s.states[t]),
            s.actions[t].to_string(),
            fmt_f64(s.rewards[t]),
            fmt_f64(s.gaps[t]),
            fmt_f64(s.cumulative[t]),
            fmt_f64(norm),
        ])?;
    }
    w.into_inner().map_err(|e| anyhow::anyhow!(e.to_string()))
}

/// Reproduces one run of the sweep and prints it step by step.
pub fn simulate(ctx: &RunContext) -> anyhow::Result<()> {
    let start = Instant::now();
    let cfg = ctx.config.ablation_config();
    let sim = &ctx.config.simulate;
    let labels = cfg.labels();
    let alg = match &sim.algorithm {
        Some(name) => labels
            .iter()
            .position(|l| l == name)
            .with_context(|| format!("algorithm {name} is not configured"))?,
        None => 0,
    };
    let cohort = ctx.config.cohort()?;
    let patient = cohort
        .iter()
        .find(|p| p.id == sim.patient)
        .with_context(|| format!("patient {} is not in the cohort", sim.patient))?;
    let rec = run_single(&cfg, sim.cell, patient, sim.replication, alg)?;
    let s = &rec.series;
    println!("{} on patient {} ({}), replication {}", rec.algorithm, rec.patient_id, rec.cell.label(), rec.replication);
    println!("{:>6} {:>9} {:>7} {:>8} {:>9} {:>10}", "t", "x", "action", "reward", "gap", "cum_regret");
    for t in 0..s.horizon() {
        println!(
            "{:>6} {:>9.4} {:>7} {:>8.4} {:>9.4} {:>10.4}",
            t + 1,
            s.states[t],
            s.actions[t].to_string(),
            s.rewards[t],
            s.gaps[t],
            s.cumulative[t]
        );
    }
    println!("normalized regret at T: {:.4}", rec.final_normalized());
    write_atomic(&ctx.out.join(TRAJECTORY_FILE), &trajectory_csv(&rec)?)?;
    let result = SimulateResult {
        cell: sim.cell,
        patient: rec.patient_id,
        replication: rec.replication,
        algorithm: &rec.algorithm,
        horizon: s.horizon(),
        cumulative_regret: s.total(),
        normalized_regret: rec.final_normalized(),
        evaluations: s.evaluations.len(),
        total_reward: s.rewards.iter().sum(),
    };
    ctx.write_summary("simulate", start, &result)
}

/// Identification-rate benchmark.
pub fn sysid(ctx: &RunContext) -> anyhow::Result<()> {
    let start = Instant::now();
    let (report, _) = sysid_rate_bench(&ctx.config.sysid_config())?;
    println!("{:>8} {:>14} {:>14}", "T", "median θ err", "median μ err");
    for (k, t) in report.checkpoints.iter().enumerate() {
        println!("{t:>8} {:>14.6} {:>14.6}", report.theta_median[k], report.mu_median[k]);
    }
    println!("theta slope {:.4}", report.theta_slope);
    println!("mu slope {:.4}", report.mu_slope);
    write_json(&ctx.out.join(SLOPES_FILE), &report)?;
    ctx.write_summary("sysid", start, &report)
}

#[derive(Serialize)]
struct CohortResult {
    patients: usize,
    file: &'static str,
}

/// Samples (or loads) the configured cohort and writes it as JSON.
pub fn cohort_sample(ctx: &RunContext) -> anyhow::Result<()> {
    let start = Instant::now();
    let cohort = ctx.config.cohort()?;
    save_cohort(&ctx.out.join(COHORT_FILE), &cohort)?;
    println!("{} patients written to {}", cohort.len(), ctx.out.join(COHORT_FILE).display());
    let result = CohortResult {
        patients: cohort.len(),
        file: COHORT_FILE,
    };
    ctx.write_summary("cohort-sample", start, &result)
}

/// Recomputes `cvar.csv` and `ecdf.csv` from an existing `runs.csv`.
pub fn summarize(runs: &Path, out: &Path) -> anyhow::Result<()> {
    let bytes = std::fs::read(runs).with_context(|| format!("cannot read {}", runs.display()))?;
    let (experiment_id, stats) = summarize_runs(&bytes).with_context(|| format!("in {}", runs.display()))?;
    if stats.cells.is_empty() {
        bail!("{} holds no final-step rows", runs.display());
    }
    write_stats(out, &experiment_id, &stats)?;
    println!("{experiment_id}: {} cells", stats.cells.len());
    print_cvar(&stats.cvar, 0.5);
    info!("wrote {} and {} to {}", CVAR_FILE, ECDF_FILE, out.display());
    Ok(())
}
