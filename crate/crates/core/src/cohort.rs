//! Synthetic patients drawn from a parametric population, plus the inert
//! "motivating" action appended for the ablation experiments.
//!
//! The shipped default population is illustrative only. It follows the
//! qualitative shape reported for the field data (right-skewed persistence,
//! negative recommendation effects with the harder treatment more negative,
//! positive adherence effects, negative adherence shifts) but is not a fit.

use std::path::Path;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::io::write_atomic;
use crate::model::{sigmoid, ModelBounds, PatientParams, RewardSpec, SimRng};
use crate::seeds::stream_rng;

/// Normal prior of one treatment's parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPrior {
    pub b_mean: f64,
    pub b_sd: f64,
    pub c_mean: f64,
    pub c_sd: f64,
    pub mu_mean: f64,
    pub mu_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub a_logit_mean: f64,
    pub a_logit_sd: f64,
    pub treatments: Vec<TreatmentPrior>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            a_logit_mean: -0.5,
            a_logit_sd: 0.8,
            treatments: vec![
                TreatmentPrior {
                    b_mean: -0.3,
                    b_sd: 0.3,
                    c_mean: 0.8,
                    c_sd: 0.3,
                    mu_mean: -0.5,
                    mu_sd: 0.5,
                },
                TreatmentPrior {
                    b_mean: -0.6,
                    b_sd: 0.3,
                    c_mean: 0.5,
                    c_sd: 0.3,
                    mu_mean: -1.0,
                    mu_sd: 0.5,
                },
            ],
        }
    }
}

impl PopulationSpec {
    pub fn base_treatments(&self) -> usize {
        self.treatments.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.treatments.is_empty() {
            return Err(EngageError::EmptyInput("population treatments"));
        }
        let mut sds = vec![self.a_logit_sd];
        for t in &self.treatments {
            sds.extend([t.b_sd, t.c_sd, t.mu_sd]);
        }
        if sds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(EngageError::param("population", "standard deviations must be finite and nonnegative"));
        }
        let mut means = vec![self.a_logit_mean];
        for t in &self.treatments {
            means.extend([t.b_mean, t.c_mean, t.mu_mean]);
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(EngageError::param("population", "means must be finite"));
        }
        Ok(())
    }
}

/// Draws before clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDraw {
    pub a_logit: f64,
    pub a: f64,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPatient {
    pub id: usize,
    pub params: PatientParams,
    pub raw: RawDraw,
    /// Treatment count before augmentation.
    pub base_treatments: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SyntheticPatient {
    pub fn is_augmented(&self) -> bool {
        self.params.treatments() > self.base_treatments
    }
}

fn draw<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).map(|n| n.sample(rng)).unwrap_or(mean)
}

/// One patient: `a = σ(z)` with `z` normal, the other parameters normal, then
/// every component clipped to its box.
pub fn sample_patient<R: Rng + ?Sized>(pop: &PopulationSpec, bounds: &ModelBounds, id: usize, rng: &mut R) -> Result<SyntheticPatient> {
    pop.validate()?;
    let m = pop.base_treatments();
    let bounds = bounds.with_treatments(m);
    bounds.validate()?;
    let a_logit = draw(pop.a_logit_mean, pop.a_logit_sd, rng);
    let a = sigmoid(a_logit);
    let mut raw = RawDraw {
        a_logit,
        a,
        b: Vec::with_capacity(m),
        c: Vec::with_capacity(m),
        mu: Vec::with_capacity(m),
    };
    for t in &pop.treatments {
        raw.b.push(draw(t.b_mean, t.b_sd, rng));
        raw.c.push(draw(t.c_mean, t.c_sd, rng));
        raw.mu.push(draw(t.mu_mean, t.mu_sd, rng));
    }
    let clip = |v: &[f64], bound: f64| v.iter().map(|x| x.clamp(-bound, bound)).collect::<Vec<_>>();
    let params = PatientParams {
        a: a.clamp(0.0, bounds.a_bar),
        b: clip(&raw.b, bounds.b_bar),
        c: clip(&raw.c, bounds.c_bar),
        mu: clip(&raw.mu, bounds.mu_bar),
    };
    params.validate(&bounds)?;
    Ok(SyntheticPatient {
        id,
        params,
        raw,
        base_treatments: m,
        warnings: Vec::new(),
    })
}

/// `n` patients, patient `i` drawn from its own stream derived from
/// `(master_seed, "cohort", i)`.
pub fn sample_cohort(pop: &PopulationSpec, bounds: &ModelBounds, n: usize, master_seed: u64) -> Result<Vec<SyntheticPatient>> {
    (0..n)
        .map(|i| {
            let mut rng: SimRng = stream_rng(master_seed, &["cohort", &i.to_string()]);
            sample_patient(pop, bounds, i, &mut rng)
        })
        .collect()
}

/// Appends an action with `b = 0`, `μ = 0` and `c = scale·(1 − a)`, clipped to
/// `[0, c̄]` with a recorded warning.
pub fn augment_motivating_action(patient: &SyntheticPatient, scale: f64, bounds: &ModelBounds) -> Result<SyntheticPatient> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(EngageError::param("c_scale", "must be finite and nonnegative"));
    }
    if patient.is_augmented() {
        return Err(EngageError::AlreadyAugmented(patient.id));
    }
    let mut out = patient.clone();
    let raw_c = scale * (1.0 - patient.params.a);
    let c = raw_c.min(bounds.c_bar);
    if c < raw_c {
        let msg = format!(
            "patient {}: motivating effect {raw_c} clipped to {}",
            patient.id, bounds.c_bar
        );
        warn!("{msg}");
        out.warnings.push(msg);
    }
    out.params.b.push(0.0);
    out.params.c.push(c);
    out.params.mu.push(0.0);
    out.params
        .validate(&bounds.with_treatments(out.params.treatments()))?;
    Ok(out)
}

/// Reward spec for an augmented patient: the motivating action earns nothing.
pub fn augment_reward(spec: &RewardSpec) -> RewardSpec {
    let mut out = spec.clone();
    out.rho.push(0.0);
    out
}

pub fn save_cohort(path: &Path, cohort: &[SyntheticPatient]) -> Result<()> {
    let mut s = serde_json::to_string_pretty(cohort)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn load_cohort(path: &Path) -> Result<Vec<SyntheticPatient>> {
    let text = std::fs::read_to_string(path)?;
    let cohort: Vec<SyntheticPatient> = serde_json::from_str(&text)?;
    if cohort.is_empty() {
        return Err(EngageError::EmptyInput("cohort file"));
    }
    Ok(cohort)
}
