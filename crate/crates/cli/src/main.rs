use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use engage_cli::commands::{self, RunContext};
use engage_cli::{ExperimentConfig, Profile};
use engage_core::experiments::RUNS_FILE;

#[derive(Parser)]
#[command(name = "engage", version, about = "Adherence-aware recommendation experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, env = "ENGAGE_CONFIG")]
    config: Option<PathBuf>,

    /// Overrides the config's master seed.
    #[arg(long, global = true, env = "ENGAGE_SEED")]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum, env = "ENGAGE_PROFILE")]
    profile: Option<Profile>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "ENGAGE_WORKERS")]
    workers: Option<usize>,

    /// Output directory; defaults to the config's `output_dir`, then `out/<experiment_id>`.
    #[arg(long, global = true, env = "ENGAGE_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one (patient, algorithm) trajectory and prints every step.
    Simulate {
        #[arg(long)]
        cell: Option<usize>,
        #[arg(long)]
        patient: Option<usize>,
        #[arg(long)]
        replication: Option<usize>,
        #[arg(long)]
        algorithm: Option<String>,
    },
    /// Runs the ablation sweep and writes runs.csv, cvar.csv, ecdf.csv and summary.json.
    Ablate,
    /// Runs the identification-rate benchmark.
    Sysid,
    /// Writes the cohort as JSON.
    CohortSample,
    /// Recomputes cvar.csv and ecdf.csv from a runs.csv.
    Summarize {
        /// Defaults to runs.csv in the output directory.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
}

fn context(cli: &Cli) -> anyhow::Result<RunContext> {
    let path = cli.config.as_ref().context("this command needs --config")?;
    let config = ExperimentConfig::load(path)?.with_overrides(cli.seed, cli.profile)?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&config.experiment_id));
    Ok(RunContext {
        config,
        out,
        workers: rayon::current_num_threads(),
    })
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Summarize { runs } => {
            let out = match &cli.out {
                Some(o) => o.clone(),
                None => context(&cli)?.out,
            };
            let runs = runs.clone().unwrap_or_else(|| out.join(RUNS_FILE));
            commands::summarize(&runs, &out)?;
            Ok(true)
        }
        Command::Simulate {
            cell,
            patient,
            replication,
            algorithm,
        } => {
            let mut ctx = context(&cli)?;
            let sim = &mut ctx.config.simulate;
            sim.cell = cell.unwrap_or(sim.cell);
            sim.patient = patient.unwrap_or(sim.patient);
            sim.replication = replication.unwrap_or(sim.replication);
            if algorithm.is_some() {
                sim.algorithm = algorithm.clone();
            }
            ctx.config.validate()?;
            commands::simulate(&ctx)?;
            Ok(true)
        }
        Command::Ablate => commands::ablate(&context(&cli)?),
        Command::Sysid => commands::sysid(&context(&cli)?).map(|_| true),
        Command::CohortSample => commands::cohort_sample(&context(&cli)?).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some runs failed; outputs are flagged partial");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
