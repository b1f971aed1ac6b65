use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::model::{reward, step, Action, ModelBounds, NoiseSpec, PatientParams, RewardSpec, SimRng, Transition};
use crate::planning::{
    value_iteration, value_iteration_from, BellmanContext, BellmanMode, EvalPolicy, PlanningSpace, ValueFunction,
    VI_TOLERANCE,
};
use crate::policies::{Cadence, Policy, PolicyContext, RandomPolicy};
use crate::seeds::run_streams;

/// Discretisation settings shared by planning and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanningConfig {
    pub resolution: f64,
    /// Grid half-width as a fraction of `C_x`.
    pub range_fraction: f64,
    pub quadrature_nodes: usize,
    pub vi_tolerance: f64,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        PlanningConfig {
            resolution: 0.1,
            range_fraction: 1.0 / 3.0,
            quadrature_nodes: 51,
            vi_tolerance: VI_TOLERANCE,
        }
    }
}

impl PlanningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(EngageError::param("resolution", "must be positive"));
        }
        if !(self.range_fraction > 0.0 && self.range_fraction <= 1.0) {
            return Err(EngageError::param("range_fraction", "must lie in (0, 1]"));
        }
        if self.quadrature_nodes == 0 {
            return Err(EngageError::param("quadrature_nodes", "must be at least 1"));
        }
        if !(self.vi_tolerance > 0.0) {
            return Err(EngageError::param("vi_tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn build_space(&self, bounds: &ModelBounds, noise: &NoiseSpec) -> Result<PlanningSpace> {
        self.validate()?;
        PlanningSpace::build(
            bounds.state_bound()?,
            self.range_fraction,
            self.resolution,
            noise,
            self.quadrature_nodes,
        )
    }
}

/// One true system with its reward and the optimal value function under it.
#[derive(Debug)]
pub struct Scenario {
    pub params: PatientParams,
    pub reward: RewardSpec,
    pub bounds: ModelBounds,
    pub noise: NoiseSpec,
    ctx: BellmanContext,
    optimal: Arc<ValueFunction>,
    uniform: OnceLock<Arc<ValueFunction>>,
    tolerance: f64,
}

impl Scenario {
    /// Solves for `J*` by value iteration on the true parameters.
    pub fn new(
        params: PatientParams,
        reward: RewardSpec,
        bounds: &ModelBounds,
        noise: NoiseSpec,
        space: &PlanningSpace,
        tolerance: f64,
    ) -> Result<Self> {
        let bounds = bounds.with_treatments(params.treatments());
        bounds.validate()?;
        params.validate(&bounds)?;
        noise.validate()?;
        let ctx = BellmanContext::new(space, &params, &reward)?;
        let optimal = Arc::new(value_iteration(&ctx, BellmanMode::Optimal, tolerance)?);
        Ok(Scenario {
            params,
            reward,
            bounds,
            noise,
            ctx,
            optimal,
            uniform: OnceLock::new(),
            tolerance,
        })
    }

    pub fn optimal(&self) -> &Arc<ValueFunction> {
        &self.optimal
    }

    pub fn space(&self) -> &PlanningSpace {
        self.ctx.space()
    }

    pub fn context(&self) -> &BellmanContext {
        &self.ctx
    }

    pub fn treatments(&self) -> usize {
        self.params.treatments()
    }

    /// `C_J = (β + ρ̄)/(1 − γ)`.
    pub fn value_bound(&self) -> f64 {
        (self.reward.beta + self.reward.rho_bar()) / (1.0 - self.reward.gamma)
    }

    /// Discretisation slack `0.05·C_J` allowed on optimality comparisons.
    pub fn grid_slack(&self) -> f64 {
        0.05 * self.value_bound()
    }

    /// Known quantities for policy constructors, including `J*`.
    pub fn policy_context(&self) -> PolicyContext {
        PolicyContext {
            bounds: self.bounds.clone(),
            noise: self.noise.clone(),
            reward: self.reward.clone(),
            space: self.space().clone(),
            optimal: Some(self.optimal.clone()),
        }
    }

    /// Policy evaluation warm-started from `J*`; the uniform policy is cached.
    pub fn evaluate(&self, policy: &EvalPolicy) -> Result<Arc<ValueFunction>> {
        if *policy == EvalPolicy::Uniform {
            if let Some(v) = self.uniform.get() {
                return Ok(v.clone());
            }
        }
        let (v, _) = value_iteration_from(
            &self.ctx,
            BellmanMode::Policy(policy),
            self.tolerance,
            Some(&self.optimal.values),
        )?;
        let v = Arc::new(v);
        if *policy == EvalPolicy::Uniform {
            let _ = self.uniform.set(v.clone());
        }
        Ok(v)
    }

    /// `x₁`, distributed as the process noise.
    pub fn initial_state(&self, rng: &mut SimRng) -> f64 {
        self.noise.sample(rng)
    }
}

/// Per-step optimality gaps of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretSeries {
    /// `gₜ = J*(xₜ) − J^{πₜ}(xₜ)` for `t = 1..=T`.
    pub gaps: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Steps (1-based) from which a freshly evaluated policy was in force.
    pub evaluations: Vec<usize>,
    pub cadence: String,
    pub states: Vec<f64>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl RegretSeries {
    pub fn horizon(&self) -> usize {
        self.gaps.len()
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Evaluation steps plus the final step, sorted and unique.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut c = self.evaluations.clone();
        c.push(self.horizon());
        c.retain(|&t| t >= 1 && t <= self.horizon());
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Smallest gap, for optimality-slack checks.
    pub fn min_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn cadence_label(c: Cadence) -> String {
    match c {
        Cadence::OnChange => "on-change".into(),
        Cadence::Every(n) => format!("every-{n}"),
    }
}

/// Simulates `horizon` steps of `policy` on the scenario's true system.
///
/// The environment draws (initial state, adherence, noise) come from `env`,
/// the policy's randomness from `policy_rng`. `cadence` overrides the
/// policy's own evaluation cadence.
pub fn run_trajectory(
    scenario: &Scenario,
    policy: &mut dyn Policy,
    horizon: usize,
    cadence: Option<Cadence>,
    env: &mut SimRng,
    policy_rng: &mut SimRng,
) -> Result<RegretSeries> {
    if horizon == 0 {
        return Err(EngageError::param("horizon", "must be at least 1"));
    }
    let cadence = cadence.unwrap_or_else(|| policy.cadence());
    if cadence == Cadence::Every(0) {
        return Err(EngageError::param("cadence", "evaluation interval must be at least 1"));
    }
    let m = scenario.treatments();
    let grid = scenario.space().grid().clone();
    let name = policy.name().to_string();
    let context = |e: EngageError, t: usize| e.in_run(format!("{name} at t={t}"));
    let mut evaluated = scenario
        .evaluate(&policy.stationary_policy(&grid))
        .map_err(|e| context(e, 1))?;
    let mut out = RegretSeries {
        gaps: Vec::with_capacity(horizon),
        cumulative: Vec::with_capacity(horizon),
        evaluations: vec![1],
        cadence: cadence_label(cadence),
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
    };
    let mut x = scenario.initial_state(env);
    let mut total = 0.0;
    for t in 1..=horizon {
        let gap = scenario.optimal.value_at(x) - evaluated.value_at(x);
        if !gap.is_finite() {
            return Err(context(EngageError::Numerical(format!("non-finite gap {gap}")), t));
        }
        total += gap;
        out.gaps.push(gap);
        out.cumulative.push(total);
        out.states.push(x);

        let u = policy.act(x, policy_rng);
        let o = step(&scenario.params, &scenario.noise, x, u, env);
        let r = reward(&scenario.reward, x, u, o.d);
        let tr = Transition::new(x, u, o.d, o.x_next, m);
        let changed = policy.observe(&tr, r, policy_rng).map_err(|e| context(e, t))?;
        out.actions.push(u);
        out.rewards.push(r);
        x = o.x_next;

        if t < horizon {
            let due = match cadence {
                Cadence::OnChange => changed,
                Cadence::Every(n) => t % n == 0,
            };
            if due {
                evaluated = scenario
                    .evaluate(&policy.stationary_policy(&grid))
                    .map_err(|e| context(e, t + 1))?;
                out.evaluations.push(t + 1);
            }
        }
    }
    Ok(out)
}

/// Mean cumulative-regret curve of the uniform Random policy over `reps`
/// replications; replication `k` uses the streams of `parts ‖ ["random-baseline", k]`.
pub fn random_baseline(scenario: &Scenario, horizon: usize, reps: usize, master_seed: u64, parts: &[&str]) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(EngageError::param("baseline_reps", "must be at least 1"));
    }
    let mut mean = vec![0.0; horizon];
    for k in 0..reps {
        let rep = k.to_string();
        let mut key: Vec<&str> = parts.to_vec();
        key.extend(["random-baseline", rep.as_str()]);
        let (mut env, mut prng) = run_streams(master_seed, &key);
        let mut policy = RandomPolicy::new(scenario.treatments());
        let s = run_trajectory(scenario, &mut policy, horizon, None, &mut env, &mut prng)?;
        for (m, c) in mean.iter_mut().zip(&s.cumulative) {
            *m += c;
        }
    }
    for m in &mut mean {
        *m /= reps as f64;
    }
    Ok(mean)
}
