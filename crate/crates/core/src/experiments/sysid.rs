use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::estimation::{AdherenceEstimator, DynamicsEstimator};
use crate::model::{step, Action, ModelBounds, NoiseSpec, PatientParams, Transition};
use crate::policies::{rk_wrap, ExploratoryConfig, FixedPolicy, Policy};
use crate::seeds::run_streams;

use super::stats::{loglog_slope, median};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SysidConfig {
    pub seed: u64,
    pub params: PatientParams,
    pub bounds: ModelBounds,
    pub noise: NoiseSpec,
    pub exploration: ExploratoryConfig,
    pub reps: usize,
    pub checkpoints: Vec<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for SysidConfig {
    fn default() -> Self {
        SysidConfig {
            seed: 0,
            params: PatientParams {
                a: 0.6,
                b: vec![-0.3, -0.6],
                c: vec![0.8, 0.5],
                mu: vec![-0.5, -1.0],
            },
            bounds: ModelBounds::reference(2),
            noise: NoiseSpec::new(1.0, 2.5),
            exploration: ExploratoryConfig { r: 1.0, k: 1 },
            reps: 50,
            checkpoints: vec![256, 1024, 4096, 16384],
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl SysidConfig {
    pub fn validate(&self) -> Result<()> {
        let bounds = self.bounds.with_treatments(self.params.treatments());
        bounds.validate()?;
        self.params.validate(&bounds)?;
        self.noise.validate()?;
        self.exploration.validate()?;
        if self.reps == 0 {
            return Err(EngageError::param("reps", "must be at least 1"));
        }
        if self.checkpoints.is_empty() || self.checkpoints.contains(&0) {
            return Err(EngageError::param("checkpoints", "need at least one positive horizon"));
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EngageError::param("checkpoints", "must be strictly increasing"));
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(EngageError::param("lambda", "regularizers must be positive"));
        }
        Ok(())
    }
}

/// Estimation errors of one trajectory at each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SysidTrace {
    pub theta_error: Vec<f64>,
    pub mu_error: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub checkpoints: Vec<usize>,
    pub theta_median: Vec<f64>,
    pub mu_median: Vec<f64>,
    /// Least-squares slope of log median error against log T.
    pub theta_slope: f64,
    pub mu_slope: f64,
    pub reps: usize,
}

/// One trajectory under the `(r, k)`-exploratory wrapper of the null policy.
pub fn sysid_trajectory(cfg: &SysidConfig, rep: usize) -> Result<SysidTrace> {
    let m = cfg.params.treatments();
    let bounds = cfg.bounds.with_treatments(m);
    let theta_star = cfg.params.theta();
    let mut dynamics = DynamicsEstimator::new(bounds.theta_dim(), cfg.lambda1)?;
    let mut adherence = AdherenceEstimator::new(m, cfg.lambda2, bounds.mu_bar)?;
    let mut policy = rk_wrap(Box::new(FixedPolicy::new(Action::Null, m)), cfg.exploration, m)?;
    let (mut env, mut prng) = run_streams(cfg.seed, &["sysid", &rep.to_string()]);
    let mut trace = SysidTrace {
        theta_error: Vec::new(),
        mu_error: Vec::new(),
    };
    let last = *cfg.checkpoints.last().unwrap_or(&0);
    let mut next = 0;
    let mut x = cfg.noise.sample(&mut env);
    for t in 1..=last {
        let u = policy.act(x, &mut prng);
        let o = step(&cfg.params, &cfg.noise, x, u, &mut env);
        let tr = Transition::new(x, u, o.d, o.x_next, m);
        dynamics.update(&tr.z, o.x_next)?;
        if let Action::Treat(i) = u {
            adherence.update(i, x, tr.adhered());
        }
        policy.observe(&tr, 0.0, &mut prng)?;
        x = o.x_next;
        if t == cfg.checkpoints[next] {
            let est = dynamics.estimate(&bounds)?;
            let err = est
                .projected
                .iter()
                .zip(&theta_star)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            trace.theta_error.push(err);
            let mu_err = (0..m)
                .map(|i| (adherence.solve(i) - cfg.params.mu[i]).abs())
                .fold(0.0, f64::max);
            trace.mu_error.push(mu_err);
            next += 1;
        }
    }
    Ok(trace)
}

/// Runs `reps` trajectories and fits the error decay rates.
pub fn sysid_rate_bench(cfg: &SysidConfig) -> Result<(SlopeReport, Vec<SysidTrace>)> {
    cfg.validate()?;
    let traces = (0..cfg.reps)
        .into_par_iter()
        .map(|r| sysid_trajectory(cfg, r))
        .collect::<Result<Vec<_>>>()?;
    let column = |f: &dyn Fn(&SysidTrace) -> &Vec<f64>, k: usize| -> Result<f64> {
        median(&traces.iter().map(|tr| f(tr)[k]).collect::<Vec<_>>())
    };
    let n = cfg.checkpoints.len();
    let theta_median = (0..n).map(|k| column(&|t| &t.theta_error, k)).collect::<Result<Vec<_>>>()?;
    let mu_median = (0..n).map(|k| column(&|t| &t.mu_error, k)).collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = cfg.checkpoints.iter().map(|&t| t as f64).collect();
    let report = SlopeReport {
        checkpoints: cfg.checkpoints.clone(),
        theta_slope: loglog_slope(&xs, &theta_median)?,
        mu_slope: loglog_slope(&xs, &mu_median)?,
        theta_median,
        mu_median,
        reps: cfg.reps,
    };
    Ok((report, traces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn near_noiseless_identification() {
        // ridge bias is λ₁‖V̄⁻¹θ*‖, so a light regularizer isolates the noise
        let cfg = SysidConfig {
            noise: NoiseSpec::new(1e-6, 2e-6),
            lambda1: 0.01,
            reps: 1,
            checkpoints: vec![64, 16384],
            ..Default::default()
        };
        let tr = sysid_trajectory(&cfg, 0).unwrap();
        assert!(tr.theta_error[1] < 1e-3, "{:?}", tr.theta_error);
        assert!(tr.theta_error[1] < tr.theta_error[0]);
    }

    #[test]
    fn noiseless_error_is_the_ridge_bias() {
        // without noise, θ̂ − θ* = −λ₁ V̄⁻¹ θ*
        let cfg = SysidConfig {
            noise: NoiseSpec::new(1e-9, 2e-9),
            ..Default::default()
        };
        let m = 2;
        let mut dynamics = DynamicsEstimator::new(5, 1.0).unwrap();
        let mut policy = rk_wrap(Box::new(FixedPolicy::new(Action::Null, m)), cfg.exploration, m).unwrap();
        let (mut env, mut prng) = run_streams(4, &["bias"]);
        let mut x = 0.3;
        for _ in 0..500 {
            let u = policy.act(x, &mut prng);
            let o = step(&cfg.params, &cfg.noise, x, u, &mut env);
            let tr = Transition::new(x, u, o.d, o.x_next, m);
            dynamics.update(&tr.z, o.x_next).unwrap();
            policy.observe(&tr, 0.0, &mut prng).unwrap();
            x = o.x_next;
        }
        let theta = nalgebra::DVector::from_vec(cfg.params.theta());
        let bias = dynamics.v_bar_inverse().unwrap() * &theta;
        let rls = dynamics.solve_rls().unwrap();
        for k in 0..5 {
            assert!((rls[k] - theta[k] + bias[k]).abs() < 1e-6, "{k}: {} vs {}", rls[k] - theta[k], -bias[k]);
        }
    }

    #[test]
    fn validation() {
        let bad = SysidConfig {
            checkpoints: vec![100, 50],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(SysidConfig::default().validate().is_ok());
    }

    #[test]
    fn bench_is_deterministic() {
        let cfg = SysidConfig {
            reps: 3,
            checkpoints: vec![32, 128],
            ..Default::default()
        };
        let (a, _) = sysid_rate_bench(&cfg).unwrap();
        let (b, _) = sysid_rate_bench(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.theta_median.len(), 2);
    }
}
