//! Experiment configuration files.
//!
//! Files use TOML syntax. Four keys are required (`experiment_id`, `seed`,
//! `[ablation]` and at least one `[[algorithms]]` entry); everything else
//! falls back to the reference settings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::ValueEnum;
use engage_core::cohort::{load_cohort, PopulationSpec, SyntheticPatient};
use engage_core::experiments::{AblationConfig, AblationGrid, PlanningConfig, SysidConfig};
use engage_core::model::{ModelBounds, NoiseSpec};
use engage_core::policies::AlgorithmSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const REQUIRED_FIELDS: [&str; 4] = ["experiment_id", "seed", "ablation", "algorithms"];

/// Run scale used when a config leaves the counts open.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl Profile {
    pub fn patients(self) -> usize {
        match self {
            Profile::Desk => 20,
            Profile::Paper => 100,
        }
    }

    pub fn replications(self) -> usize {
        match self {
            Profile::Desk => 5,
            Profile::Paper => 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub rho2: Vec<f64>,
    pub c_scale: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta0: Vec<f64>,
    pub horizon: Vec<usize>,
    pub rho1: f64,
    pub motivating_action: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    pub baseline_reps: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        let grid = AblationGrid::default();
        let base = AblationConfig::default();
        AblationSection {
            rho2: grid.rho2,
            c_scale: grid.c_scale,
            gamma: grid.gamma,
            beta: grid.beta,
            beta0: grid.beta0,
            horizon: grid.horizon,
            rho1: base.rho1,
            motivating_action: base.motivating_action,
            patients: None,
            replications: None,
            baseline_reps: base.baseline_reps,
        }
    }
}

impl AblationSection {
    pub fn grid(&self) -> AblationGrid {
        AblationGrid {
            rho2: self.rho2.clone(),
            c_scale: self.c_scale.clone(),
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            beta0: self.beta0.clone(),
            horizon: self.horizon.clone(),
        }
    }
}

/// Which run `simulate` reproduces.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub cell: usize,
    pub patient: usize,
    pub replication: usize,
    /// Algorithm label; the first configured algorithm when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub seed: u64,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Cohort JSON to use instead of sampling from `population`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort_file: Option<PathBuf>,
    pub ablation: AblationSection,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub population: PopulationSpec,
    #[serde(default = "default_bounds")]
    pub bounds: ModelBounds,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub planning: PlanningConfig,
    /// Identification benchmark; its seed is replaced by the master seed.
    #[serde(default)]
    pub sysid: SysidConfig,
    #[serde(default)]
    pub simulate: SimulateSection,
}

fn default_bounds() -> ModelBounds {
    ModelBounds::reference(2)
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::new(1.0, 2.5)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let missing: Vec<&str> = REQUIRED_FIELDS
            .iter()
            .copied()
            .filter(|k| !table.contains_key(*k))
            .collect();
        if !missing.is_empty() {
            bail!("missing required fields: {}", missing.join(", "));
        }
        let cfg: ExperimentConfig = toml::from_str(text).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seed > i64::MAX as u64 {
            bail!("invalid `seed`: must not exceed {}", i64::MAX);
        }
        self.ablation_config().validate().context("invalid [ablation]/[[algorithms]]")?;
        self.sysid_config().validate().context("invalid [sysid]")?;
        if let Some(name) = &self.simulate.algorithm {
            if !self.ablation_config().labels().contains(name) {
                bail!("invalid `simulate.algorithm`: {name} is not among the configured algorithms");
            }
        }
        Ok(())
    }

    /// Applies command-line overrides and revalidates.
    pub fn with_overrides(mut self, seed: Option<u64>, profile: Option<Profile>) -> anyhow::Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(p) = profile {
            self.profile = p;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn ablation_config(&self) -> AblationConfig {
        let a = &self.ablation;
        AblationConfig {
            experiment_id: self.experiment_id.clone(),
            seed: self.seed,
            grid: a.grid(),
            rho1: a.rho1,
            motivating_action: a.motivating_action,
            patients: a.patients.unwrap_or(self.profile.patients()),
            replications: a.replications.unwrap_or(self.profile.replications()),
            baseline_reps: a.baseline_reps,
            algorithms: self.algorithms.clone(),
            population: self.population.clone(),
            bounds: self.bounds.clone(),
            noise: self.noise.clone(),
            planning: self.planning.clone(),
        }
    }

    pub fn sysid_config(&self) -> SysidConfig {
        SysidConfig {
            seed: self.seed,
            ..self.sysid.clone()
        }
    }

    /// The configured cohort file, or patients sampled under the master seed.
    pub fn cohort(&self) -> anyhow::Result<Vec<SyntheticPatient>> {
        match &self.cohort_file {
            Some(p) => load_cohort(p).with_context(|| format!("cannot load cohort {}", p.display())),
            None => Ok(self.ablation_config().sample_cohort()?),
        }
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> anyhow::Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment_id = "mini"
seed = 7

[ablation]
rho2 = [1.0]
c_scale = [2.0]

[[algorithms]]
kind = "ucb-bold"

[[algorithms]]
kind = "fixed"
arm = 2
"#;

    #[test]
    fn empty_file_lists_required_fields() {
        let err = ExperimentConfig::parse("").unwrap_err().to_string();
        for f in REQUIRED_FIELDS {
            assert!(err.contains(f), "{err}");
        }
        let err = ExperimentConfig::parse("seed = 1\n").unwrap_err().to_string();
        assert!(!err.contains("seed"), "{err}");
        assert!(err.contains("experiment_id"));
    }

    #[test]
    fn defaults_are_filled() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let a = cfg.ablation_config();
        assert_eq!((a.patients, a.replications), (20, 5));
        assert_eq!(a.grid.gamma, vec![0.8]);
        assert_eq!(a.grid.horizon, vec![730]);
        assert_eq!(a.planning, PlanningConfig::default());
        assert_eq!(a.planning.resolution, 0.1);
        assert_eq!(a.bounds, ModelBounds::reference(2));
        match &a.algorithms[0] {
            AlgorithmSpec::UcbBold(u) => {
                assert_eq!((u.lambda1, u.lambda2, u.c_d, u.c_n), (1.0, 1.0, 0.5, 0.5));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(a.labels(), vec!["UCB-BOLD", "Fixed2"]);
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("c_scale = [2.0]", "c_scale = []");
        let err = format!("{:#}", ExperimentConfig::parse(&bad).unwrap_err());
        assert!(err.contains("c_scale"), "{err}");
        let bad = MINIMAL.replace("arm = 2", "arm = 5");
        let err = format!("{:#}", ExperimentConfig::parse(&bad).unwrap_err());
        assert!(err.contains("arm"), "{err}");
        let bad = MINIMAL.replace("seed = 7", "seed = \"x\"");
        let err = format!("{:#}", ExperimentConfig::parse(&bad).unwrap_err());
        assert!(err.contains("seed"), "{err}");
        let bad = format!("{MINIMAL}\n[sysid]\ncheckpoints = [10, 5]\n");
        let err = format!("{:#}", ExperimentConfig::parse(&bad).unwrap_err());
        assert!(err.contains("checkpoints"), "{err}");
    }

    #[test]
    fn overrides_and_profiles() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let paper = cfg.clone().with_overrides(Some(99), Some(Profile::Paper)).unwrap();
        assert_eq!(paper.seed, 99);
        let a = paper.ablation_config();
        assert_eq!((a.patients, a.replications, a.seed), (100, 25, 99));
        assert_eq!(paper.sysid_config().seed, 99);
        assert_ne!(cfg.hash().unwrap(), paper.hash().unwrap());
        let explicit = MINIMAL.replace("c_scale = [2.0]", "c_scale = [2.0]\npatients = 3");
        let e = ExperimentConfig::parse(&explicit)
            .unwrap()
            .with_overrides(None, Some(Profile::Paper))
            .unwrap();
        assert_eq!(e.ablation_config().patients, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("sed = 3\n{MINIMAL}");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }
}
