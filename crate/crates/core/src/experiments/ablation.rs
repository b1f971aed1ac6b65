use std::collections::HashSet;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{augment_motivating_action, augment_reward, sample_cohort, PopulationSpec, SyntheticPatient};
use crate::error::{EngageError, Result};
use crate::model::{ModelBounds, NoiseSpec, RewardSpec};
use crate::policies::{build_policy, AlgorithmSpec};
use crate::seeds::run_streams;

use super::runner::{random_baseline, run_trajectory, PlanningConfig, RegretSeries, Scenario};
use super::stats::{cvar_table, ecdf, empirical_cvar, mean, median, normalize, CvarTable, CVAR_TAILS};

/// Ablation coordinates; the sweep covers their Cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    /// Reward of the second treatment (the first earns `rho1`).
    pub rho2: Vec<f64>,
    /// Motivating-action strength `c = scale·(1 − a)`.
    pub c_scale: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta0: Vec<f64>,
    pub horizon: Vec<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            rho2: vec![0.5, 1.0, 1.5, 2.0],
            c_scale: vec![0.0, 1.0, 2.0, 3.0],
            gamma: vec![0.8],
            beta: vec![0.0],
            beta0: vec![0.0],
            horizon: vec![730],
        }
    }
}

impl AblationGrid {
    /// The four reference sweeps.
    pub fn experiment(n: usize) -> Result<Self> {
        let base = AblationGrid::default();
        Ok(match n {
            1 => base,
            2 => AblationGrid {
                horizon: vec![180],
                ..base
            },
            3 => AblationGrid {
                rho2: vec![1.5],
                c_scale: vec![2.0],
                gamma: vec![0.0, 0.5, 0.8, 0.9, 0.95, 0.98],
                ..base
            },
            4 => AblationGrid {
                rho2: vec![1.5],
                c_scale: vec![2.0],
                beta: vec![0.0, 1.0, 2.0, 3.0],
                beta0: vec![-2.0, -4.0],
                ..base
            },
            _ => return Err(EngageError::param("experiment", format!("no reference sweep {n}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let lists: [(&'static str, usize); 6] = [
            ("rho2", self.rho2.len()),
            ("c_scale", self.c_scale.len()),
            ("gamma", self.gamma.len()),
            ("beta", self.beta.len()),
            ("beta0", self.beta0.len()),
            ("horizon", self.horizon.len()),
        ];
        for (name, len) in lists {
            if len == 0 {
                return Err(EngageError::param(name, "ablation grid list is empty"));
            }
        }
        if self.horizon.contains(&0) {
            return Err(EngageError::param("horizon", "must be at least 1"));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &rho2 in &self.rho2 {
            for &c_scale in &self.c_scale {
                for &gamma in &self.gamma {
                    for &beta in &self.beta {
                        for &beta0 in &self.beta0 {
                            for &horizon in &self.horizon {
                                out.push(Cell {
                                    rho2,
                                    c_scale,
                                    gamma,
                                    beta,
                                    beta0,
                                    horizon,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One point of the ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub rho2: f64,
    pub c_scale: f64,
    pub gamma: f64,
    pub beta: f64,
    pub beta0: f64,
    pub horizon: usize,
}

impl Cell {
    /// Stable identifier; also part of every run's seed.
    pub fn label(&self) -> String {
        format!(
            "rho2={};c_scale={};gamma={};beta={};beta0={};T={}",
            self.rho2, self.c_scale, self.gamma, self.beta, self.beta0, self.horizon
        )
    }

    pub fn reward(&self, rho1: f64) -> RewardSpec {
        RewardSpec {
            rho: vec![rho1, self.rho2],
            beta: self.beta,
            beta0: self.beta0,
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub experiment_id: String,
    pub seed: u64,
    pub grid: AblationGrid,
    pub rho1: f64,
    /// Append the zero-reward motivating action to every patient.
    pub motivating_action: bool,
    pub patients: usize,
    pub replications: usize,
    /// Random-policy replications behind each normalizer.
    pub baseline_reps: usize,
    pub algorithms: Vec<AlgorithmSpec>,
    pub population: PopulationSpec,
    pub bounds: ModelBounds,
    pub noise: NoiseSpec,
    pub planning: PlanningConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            experiment_id: "experiment".into(),
            seed: 0,
            grid: AblationGrid::default(),
            rho1: 1.0,
            motivating_action: true,
            patients: 20,
            replications: 5,
            baseline_reps: 25,
            algorithms: Vec::new(),
            population: PopulationSpec::default(),
            bounds: ModelBounds::reference(2),
            noise: NoiseSpec::new(1.0, 2.5),
            planning: PlanningConfig::default(),
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.experiment_id.is_empty() {
            return Err(EngageError::param("experiment_id", "must be nonempty"));
        }
        self.grid.validate()?;
        if self.patients == 0 || self.replications == 0 || self.baseline_reps == 0 {
            return Err(EngageError::param(
                "patients/replications/baseline_reps",
                "counts must be at least 1",
            ));
        }
        if self.algorithms.is_empty() {
            return Err(EngageError::EmptyInput("algorithms"));
        }
        if !(self.rho1 >= 0.0 && self.rho1.is_finite()) {
            return Err(EngageError::param("rho1", "must be finite and nonnegative"));
        }
        if self.population.base_treatments() != 2 {
            return Err(EngageError::param("population", "ablation rewards assume two base treatments"));
        }
        let m = 2 + usize::from(self.motivating_action);
        let mut labels = HashSet::new();
        for a in &self.algorithms {
            a.validate(m)?;
            if !labels.insert(a.label()) {
                return Err(EngageError::param("algorithms", format!("duplicate algorithm {}", a.label())));
            }
        }
        self.population.validate()?;
        self.bounds.with_treatments(m).validate()?;
        self.noise.validate()?;
        self.planning.validate()
    }

    /// The planning problem of one patient in one cell, with `J*` solved.
    pub fn scenario(&self, cell: &Cell, patient: &SyntheticPatient) -> Result<Scenario> {
        let (params, reward) = if self.motivating_action {
            let p = augment_motivating_action(patient, cell.c_scale, &self.bounds)?;
            (p.params, augment_reward(&cell.reward(self.rho1)))
        } else {
            (patient.params.clone(), cell.reward(self.rho1))
        };
        let bounds = self.bounds.with_treatments(params.treatments());
        let space = self.planning.build_space(&bounds, &self.noise)?;
        Scenario::new(params, reward, &bounds, self.noise.clone(), &space, self.planning.vi_tolerance)
    }

    pub fn labels(&self) -> Vec<String> {
        self.algorithms.iter().map(AlgorithmSpec::label).collect()
    }

    /// Patients drawn from the population under the master seed.
    pub fn sample_cohort(&self) -> Result<Vec<SyntheticPatient>> {
        sample_cohort(&self.population, &self.bounds.with_treatments(2), self.patients, self.seed)
    }
}

/// Result of one `(cell, patient, replication, algorithm)` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment_id: String,
    pub cell_index: usize,
    pub cell: Cell,
    pub patient_id: usize,
    pub replication: usize,
    pub algorithm: String,
    pub series: RegretSeries,
    /// Cumulative regret over the Random baseline; `None` when undefined.
    pub normalized: Option<Vec<f64>>,
    pub wall_time: f64,
}

impl RunRecord {
    pub fn final_normalized(&self) -> f64 {
        self.normalized
            .as_ref()
            .and_then(|n| n.last().copied())
            .unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub cell: String,
    pub patient_id: usize,
    pub replication: Option<usize>,
    pub algorithm: Option<String>,
    pub error: String,
}

/// Final normalized regret of one run, the input of population statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalOutcome {
    pub cell: String,
    pub patient_id: usize,
    pub algorithm: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmCellStats {
    pub algorithm: String,
    /// Replication means, one per patient, in patient order.
    pub per_patient: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// `(tail, CVaR)` pairs.
    pub cvar: Vec<(f64, f64)>,
}

impl AlgorithmCellStats {
    pub fn cvar_at(&self, tail: f64) -> Option<f64> {
        self.cvar.iter().find(|(t, _)| *t == tail).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub cell: String,
    pub algorithms: Vec<AlgorithmCellStats>,
}

impl CellStats {
    pub fn algorithm(&self, name: &str) -> Option<&AlgorithmCellStats> {
        self.algorithms.iter().find(|a| a.algorithm == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcdfRow {
    pub cell: String,
    pub algorithm: String,
    pub value: f64,
    pub fraction: f64,
}

/// Population statistics of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub cells: Vec<CellStats>,
    pub cvar: CvarTable,
    pub ecdf: Vec<EcdfRow>,
}

fn first_seen<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// Aggregates final outcomes: replications are averaged per patient first,
/// then CVaR and ECDF are taken over patients. Cells, algorithms and patients
/// keep their order of first appearance; `NaN` outcomes are skipped.
pub fn population_stats(outcomes: &[FinalOutcome], algorithms: &[String]) -> Result<PopulationStats> {
    let cells = first_seen(outcomes.iter().map(|o| o.cell.clone()));
    let mut cell_stats = Vec::new();
    let mut table_input = Vec::new();
    let mut ecdf_rows = Vec::new();
    for cell in &cells {
        let in_cell: Vec<&FinalOutcome> = outcomes.iter().filter(|o| &o.cell == cell).collect();
        let patients = first_seen(in_cell.iter().map(|o| o.patient_id));
        let mut per_alg = Vec::new();
        let mut stats = Vec::new();
        for alg in algorithms {
            let mut per_patient = Vec::new();
            for p in &patients {
                let vals: Vec<f64> = in_cell
                    .iter()
                    .filter(|o| o.patient_id == *p && &o.algorithm == alg && !o.value.is_nan())
                    .map(|o| o.value)
                    .collect();
                if !vals.is_empty() {
                    per_patient.push(mean(&vals)?);
                }
            }
            if !per_patient.is_empty() {
                let cvar = CVAR_TAILS
                    .iter()
                    .map(|&t| empirical_cvar(&per_patient, t).map(|v| (t, v)))
                    .collect::<Result<Vec<_>>>()?;
                for (value, fraction) in ecdf(&per_patient)? {
                    ecdf_rows.push(EcdfRow {
                        cell: cell.clone(),
                        algorithm: alg.clone(),
                        value,
                        fraction,
                    });
                }
                stats.push(AlgorithmCellStats {
                    algorithm: alg.clone(),
                    mean: mean(&per_patient)?,
                    median: median(&per_patient)?,
                    cvar,
                    per_patient: per_patient.clone(),
                });
            }
            per_alg.push(per_patient);
        }
        table_input.push(per_alg);
        cell_stats.push(CellStats {
            cell: cell.clone(),
            algorithms: stats,
        });
    }
    let cvar = cvar_table(algorithms, &table_input)?;
    if !cvar.is_monotone() {
        return Err(EngageError::Numerical("CVaR table is not monotone in the tail width".into()));
    }
    Ok(PopulationStats {
        cells: cell_stats,
        cvar,
        ecdf: ecdf_rows,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationResult {
    pub config: AblationConfig,
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    /// Runs whose normalizer was undefined.
    pub excluded: Vec<String>,
    pub stats: PopulationStats,
    pub wall_time: f64,
}

impl AblationResult {
    pub fn outcomes(&self) -> Vec<FinalOutcome> {
        self.records
            .iter()
            .map(|r| FinalOutcome {
                cell: r.cell.label(),
                patient_id: r.patient_id,
                algorithm: r.algorithm.clone(),
                value: r.final_normalized(),
            })
            .collect()
    }
}

struct Group {
    cell_index: usize,
    cell: Cell,
    patient_id: usize,
    scenario: Scenario,
    baseline: Vec<f64>,
}

fn build_group(cfg: &AblationConfig, cell_index: usize, cell: &Cell, patient: &SyntheticPatient) -> Result<Group> {
    let scenario = cfg.scenario(cell, patient)?;
    let label = cell.label();
    let pid = patient.id.to_string();
    let baseline = random_baseline(
        &scenario,
        cell.horizon,
        cfg.baseline_reps,
        cfg.seed,
        &[cfg.experiment_id.as_str(), label.as_str(), pid.as_str()],
    )?;
    Ok(Group {
        cell_index,
        cell: cell.clone(),
        patient_id: patient.id,
        scenario,
        baseline,
    })
}

fn run_one(cfg: &AblationConfig, group: &Group, replication: usize, spec: &AlgorithmSpec) -> Result<RunRecord> {
    let start = Instant::now();
    let algorithm = spec.label();
    let label = group.cell.label();
    let (pid, rep) = (group.patient_id.to_string(), replication.to_string());
    let (mut env, mut prng) = run_streams(
        cfg.seed,
        &[cfg.experiment_id.as_str(), label.as_str(), pid.as_str(), rep.as_str(), algorithm.as_str()],
    );
    let mut policy = build_policy(spec, &group.scenario.policy_context())?;
    let series = run_trajectory(&group.scenario, policy.as_mut(), group.cell.horizon, None, &mut env, &mut prng)?;
    let slack = group.scenario.grid_slack();
    if series.min_gap() < -slack {
        warn!(
            "{algorithm} on patient {pid} ({label}) rep {rep}: gap {} below the grid slack {slack}",
            series.min_gap()
        );
    }
    let normalized = normalize(&series.cumulative, &group.baseline).ok();
    Ok(RunRecord {
        experiment_id: cfg.experiment_id.clone(),
        cell_index: group.cell_index,
        cell: group.cell.clone(),
        patient_id: group.patient_id,
        replication,
        algorithm,
        series,
        normalized,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Reproduces one run of the sweep on its own, with the same streams and
/// normalizer the full sweep would use.
pub fn run_single(
    cfg: &AblationConfig,
    cell_index: usize,
    patient: &SyntheticPatient,
    replication: usize,
    algorithm_index: usize,
) -> Result<RunRecord> {
    cfg.validate()?;
    let cells = cfg.grid.cells();
    let cell = cells
        .get(cell_index)
        .ok_or_else(|| EngageError::param("cell", format!("index {cell_index} outside 0..{}", cells.len())))?;
    let spec = cfg.algorithms.get(algorithm_index).ok_or_else(|| {
        EngageError::param(
            "algorithm",
            format!("index {algorithm_index} outside 0..{}", cfg.algorithms.len()),
        )
    })?;
    let group = build_group(cfg, cell_index, cell, patient)?;
    run_one(cfg, &group, replication, spec)
}

/// Runs every `(cell, patient, replication, algorithm)` combination.
///
/// Work is spread over the current rayon pool; results are collected in a
/// fixed order, so outputs do not depend on the pool size. Failed runs are
/// recorded and skipped.
pub fn run_ablation(cfg: &AblationConfig, cohort: &[SyntheticPatient]) -> Result<AblationResult> {
    cfg.validate()?;
    if cohort.len() < cfg.patients {
        return Err(EngageError::param(
            "patients",
            format!("cohort holds {} patients, {} requested", cohort.len(), cfg.patients),
        ));
    }
    let start = Instant::now();
    let cells = cfg.grid.cells();
    let patients = &cohort[..cfg.patients];
    let keys: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..patients.len()).map(move |p| (c, p)))
        .collect();
    info!(
        "{}: {} cells x {} patients x {} replications x {} algorithms",
        cfg.experiment_id,
        cells.len(),
        patients.len(),
        cfg.replications,
        cfg.algorithms.len()
    );

    let built: Vec<(usize, usize, Result<Group>)> = keys
        .par_iter()
        .map(|&(c, p)| (c, p, build_group(cfg, c, &cells[c], &patients[p])))
        .collect();
    let mut failures = Vec::new();
    let mut groups = Vec::new();
    for (c, p, g) in built {
        match g {
            Ok(g) => groups.push(g),
            Err(e) => {
                warn!("{} patient {}: setup failed: {e}", cells[c].label(), patients[p].id);
                failures.push(RunFailure {
                    cell: cells[c].label(),
                    patient_id: patients[p].id,
                    replication: None,
                    algorithm: None,
                    error: e.to_string(),
                });
            }
        }
    }

    let tasks: Vec<(usize, usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..cfg.replications).flat_map(move |r| (0..cfg.algorithms.len()).map(move |a| (g, r, a))))
        .collect();
    let results: Vec<Result<RunRecord>> = tasks
        .par_iter()
        .map(|&(g, r, a)| run_one(cfg, &groups[g], r, &cfg.algorithms[a]))
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut excluded = Vec::new();
    for ((g, r, a), res) in tasks.iter().zip(results) {
        let group = &groups[*g];
        match res {
            Ok(rec) => {
                if rec.normalized.is_none() {
                    let line = format!(
                        "{} patient {} rep {} {}: undefined normalizer (baseline {})",
                        group.cell.label(),
                        group.patient_id,
                        r,
                        rec.algorithm,
                        group.baseline.last().copied().unwrap_or(0.0)
                    );
                    warn!("excluded {line}");
                    excluded.push(line);
                }
                records.push(rec);
            }
            Err(e) => {
                let alg = cfg.algorithms[*a].label();
                warn!("{} patient {} rep {r} {alg}: {e}", group.cell.label(), group.patient_id);
                failures.push(RunFailure {
                    cell: group.cell.label(),
                    patient_id: group.patient_id,
                    replication: Some(*r),
                    algorithm: Some(alg),
                    error: e.to_string(),
                });
            }
        }
    }

    let mut result = AblationResult {
        config: cfg.clone(),
        records,
        failures,
        excluded,
        stats: PopulationStats {
            cells: Vec::new(),
            cvar: CvarTable::default(),
            ecdf: Vec::new(),
        },
        wall_time: 0.0,
    };
    result.stats = population_stats(&result.outcomes(), &cfg.labels())?;
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}
