//! Decision rules: the optimistic planner, its myopic and model-free
//! competitors, fixed/random/optimal references and the forced-exploration
//! wrapper used for identification.
//!
//! Every argmax breaks ties toward the lowest action index
//! (`Null < Treat(0) < …`).

mod baselines;
mod exploratory;
mod glm_bandit;
mod qlearn;
mod ucb_bold;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::model::{Action, ModelBounds, NoiseSpec, RewardSpec, SimRng, Transition};
use crate::planning::{EvalPolicy, PlanningSpace, StateGrid, ValueFunction};

pub use baselines::{FixedPolicy, OptimalPolicy, RandomPolicy};
pub use exploratory::{exploratory_steps, rk_wrap, ExploratoryConfig, ExploratoryPolicy};
pub use glm_bandit::{GlmBandit, GlmBanditConfig};
pub use qlearn::{epsilon_schedule, rbf_centers, LfaQ, LfaQConfig, TcQ, TcQConfig};
pub use ucb_bold::{epoch_count_bound, epoch_trigger, BonusScaling, EpochSnapshot, UcbBold, UcbBoldConfig};

/// When the regret harness must re-evaluate a policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cadence {
    /// The stationary policy only changes when `observe` reports it.
    OnChange,
    /// The policy drifts every step; evaluate every `n` steps.
    Every(usize),
}

/// An online decision rule.
///
/// `act` picks the recommendation for the current state, `observe` receives the
/// resulting transition and realised reward. Policies never touch the
/// environment; randomness comes from the caller's stream.
pub trait Policy: Send {
    fn name(&self) -> &str;

    fn act(&mut self, x: f64, rng: &mut SimRng) -> Action;

    /// Returns `true` when the policy's stationary map changed.
    fn observe(&mut self, transition: &Transition, reward: f64, rng: &mut SimRng) -> Result<bool>;

    /// The map the policy currently follows, tabulated on `grid` for policy
    /// evaluation. Exploration noise of ε-greedy learners is not included.
    fn stationary_policy(&self, grid: &StateGrid) -> EvalPolicy;

    fn cadence(&self) -> Cadence {
        Cadence::OnChange
    }
}

fn tabulate(grid: &StateGrid, f: impl Fn(f64) -> Action) -> EvalPolicy {
    EvalPolicy::Table(grid.points().iter().map(|&x| f(x)).collect())
}

/// Greedy argmax over `M + 1` scores with ties to the lowest index.
pub(crate) fn argmax_action(scores: impl IntoIterator<Item = f64>) -> Action {
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, s) in scores.into_iter().enumerate() {
        if s > best.0 {
            best = (s, k);
        }
    }
    Action::from_index(best.1)
}

/// Algorithm selection with hyperparameters, as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlgorithmSpec {
    UcbBold(UcbBoldConfig),
    GlmBandit(GlmBanditConfig),
    LfaQ(LfaQConfig),
    TcQ(TcQConfig),
    /// Always recommends treatment `arm` (1-based).
    Fixed { arm: usize },
    Random,
    Optimal,
}

impl AlgorithmSpec {
    /// Display label used in output files.
    pub fn label(&self) -> String {
        match self {
            AlgorithmSpec::UcbBold(_) => "UCB-BOLD".into(),
            AlgorithmSpec::GlmBandit(_) => "GLM-Bandit".into(),
            AlgorithmSpec::LfaQ(_) => "LFA-Q".into(),
            AlgorithmSpec::TcQ(_) => "TC-Q".into(),
            AlgorithmSpec::Fixed { arm } => format!("Fixed{arm}"),
            AlgorithmSpec::Random => "Random".into(),
            AlgorithmSpec::Optimal => "Optimal".into(),
        }
    }

    pub fn validate(&self, treatments: usize) -> Result<()> {
        match self {
            AlgorithmSpec::UcbBold(c) => c.validate(),
            AlgorithmSpec::GlmBandit(c) => c.validate(),
            AlgorithmSpec::LfaQ(c) => c.validate(),
            AlgorithmSpec::TcQ(c) => c.validate(),
            AlgorithmSpec::Fixed { arm } if *arm == 0 || *arm > treatments => Err(EngageError::param(
                "arm",
                format!("fixed arm {arm} outside 1..={treatments}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Known quantities handed to policy constructors.
#[derive(Clone, Debug)]
pub struct PolicyContext {
    pub bounds: ModelBounds,
    pub noise: NoiseSpec,
    pub reward: RewardSpec,
    pub space: PlanningSpace,
    /// True optimal value function; required by `Optimal` only.
    pub optimal: Option<Arc<ValueFunction>>,
}

impl PolicyContext {
    pub fn treatments(&self) -> usize {
        self.reward.rho.len()
    }

    /// Half-width of the planning grid, used as the Q-learners' state scale.
    pub fn grid_bound(&self) -> f64 {
        let g = self.space.grid();
        g.hi().abs().max(g.lo().abs())
    }
}

pub fn build_policy(spec: &AlgorithmSpec, ctx: &PolicyContext) -> Result<Box<dyn Policy>> {
    spec.validate(ctx.treatments())?;
    Ok(match spec {
        AlgorithmSpec::UcbBold(c) => Box::new(UcbBold::new(c.clone(), ctx)?),
        AlgorithmSpec::GlmBandit(c) => Box::new(GlmBandit::new(c.clone(), ctx)?),
        AlgorithmSpec::LfaQ(c) => Box::new(LfaQ::new(c.clone(), ctx)?),
        AlgorithmSpec::TcQ(c) => Box::new(TcQ::new(c.clone(), ctx)?),
        AlgorithmSpec::Fixed { arm } => Box::new(FixedPolicy::new(Action::Treat(arm - 1), ctx.treatments())),
        AlgorithmSpec::Random => Box::new(RandomPolicy::new(ctx.treatments())),
        AlgorithmSpec::Optimal => {
            let j = ctx
                .optimal
                .clone()
                .ok_or_else(|| EngageError::param("optimal", "optimal value function not supplied"))?;
            Box::new(OptimalPolicy::new(j))
        }
    })
}
