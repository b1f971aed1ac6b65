use std::cell::Cell;
use std::sync::Arc;

use crate::error::{EngageError, Result};
use crate::model::{sigmoid, Action, PatientParams, RewardSpec};

use super::grid::{PlanningSpace, StateGrid};

/// Iteration cap for value iteration.
pub const VI_MAX_ITER: usize = 100_000;
/// Default sup-norm stopping tolerance.
pub const VI_TOLERANCE: f64 = 1e-6;

thread_local! {
    static VI_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of value-iteration solves started on the current thread.
pub fn value_iteration_calls() -> usize {
    VI_CALLS.with(|c| c.get())
}

#[derive(Clone, Copy, Debug)]
struct Outcome {
    prob: f64,
    idx: usize,
    frac: f64,
}

#[derive(Clone, Copy, Debug)]
struct ActionRow {
    reward: f64,
    outcomes: [Outcome; 2],
}

/// Everything needed to apply a Bellman operator on the grid: the system
/// parameters (true or estimated), rewards, and an optional exploration bonus.
#[derive(Clone, Debug)]
pub struct BellmanContext {
    space: PlanningSpace,
    actions: usize,
    gamma: f64,
    rows: Vec<ActionRow>,
    bonus: Option<Vec<f64>>,
}

impl BellmanContext {
    pub fn new(space: &PlanningSpace, params: &PatientParams, reward: &RewardSpec) -> Result<Self> {
        let m = params.treatments();
        if reward.rho.len() != m {
            return Err(EngageError::DimensionMismatch {
                expected: m,
                got: reward.rho.len(),
            });
        }
        reward.validate()?;
        let grid = space.grid();
        let actions = m + 1;
        let mut rows = Vec::with_capacity(grid.len() * actions);
        let zero = Outcome {
            prob: 0.0,
            idx: 0,
            frac: 0.0,
        };
        for &x in grid.points() {
            let penalty = reward.penalty(x);
            let base = params.a * x;
            let (i, f) = grid.locate(base);
            rows.push(ActionRow {
                reward: -penalty,
                outcomes: [Outcome { prob: 1.0, idx: i, frac: f }, zero],
            });
            for k in 0..m {
                let p = sigmoid(x + params.mu[k]);
                let (ia, fa) = grid.locate(base + params.b[k] + params.c[k]);
                let (in_, fn_) = grid.locate(base + params.b[k]);
                rows.push(ActionRow {
                    reward: reward.rho[k] * p - penalty,
                    outcomes: [
                        Outcome { prob: p, idx: ia, frac: fa },
                        Outcome {
                            prob: 1.0 - p,
                            idx: in_,
                            frac: fn_,
                        },
                    ],
                });
            }
        }
        Ok(BellmanContext {
            space: space.clone(),
            actions,
            gamma: reward.gamma,
            rows,
            bonus: None,
        })
    }

    /// Attaches a per-(node, action) bonus, laid out node-major.
    pub fn with_bonus(mut self, bonus: Vec<f64>) -> Result<Self> {
        if bonus.len() != self.rows.len() {
            return Err(EngageError::DimensionMismatch {
                expected: self.rows.len(),
                got: bonus.len(),
            });
        }
        if bonus.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(EngageError::Numerical("exploration bonus must be finite and nonnegative".into()));
        }
        self.bonus = Some(bonus);
        Ok(self)
    }

    pub fn grid(&self) -> &Arc<StateGrid> {
        self.space.grid()
    }

    pub fn space(&self) -> &PlanningSpace {
        &self.space
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn treatments(&self) -> usize {
        self.actions - 1
    }

    /// Expected immediate reward (without bonus) at a grid node.
    pub fn expected_reward(&self, node: usize, action: Action) -> f64 {
        self.rows[node * self.actions + action.index()].reward
    }

    pub fn bonus(&self, node: usize, action: Action) -> f64 {
        self.bonus
            .as_ref()
            .map_or(0.0, |b| b[node * self.actions + action.index()])
    }

    pub fn sup_bonus(&self) -> f64 {
        self.bonus
            .as_ref()
            .map_or(0.0, |b| b.iter().copied().fold(0.0, f64::max))
    }

    #[inline]
    fn q_value(&self, row: &ActionRow, smoothed: &[f64], bonus: f64) -> f64 {
        let mut future = 0.0;
        for o in &row.outcomes {
            if o.prob > 0.0 {
                future += o.prob * ((1.0 - o.frac) * smoothed[o.idx] + o.frac * smoothed[o.idx + 1]);
            }
        }
        row.reward + bonus + self.gamma * future
    }
}

/// Stationary policy handed to the policy-evaluation operator.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalPolicy {
    /// One action per grid node.
    Table(Vec<Action>),
    /// Uniform randomisation over all `M + 1` actions.
    Uniform,
}

#[derive(Clone, Copy, Debug)]
pub enum BellmanMode<'a> {
    Optimal,
    Policy(&'a EvalPolicy),
    Optimistic,
}

/// Values and greedy actions on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    pub grid: Arc<StateGrid>,
    pub values: Vec<f64>,
    pub policy: Vec<Action>,
}

impl ValueFunction {
    pub fn constant(grid: Arc<StateGrid>, value: f64) -> Self {
        let n = grid.len();
        ValueFunction {
            grid,
            values: vec![value; n],
            policy: vec![Action::Null; n],
        }
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    /// Greedy action at the node nearest `x`.
    pub fn action_at(&self, x: f64) -> Action {
        self.policy[self.grid.nearest(x)]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn policy_table(&self) -> EvalPolicy {
        EvalPolicy::Table(self.policy.clone())
    }
}

fn apply_into(ctx: &BellmanContext, values: &[f64], mode: BellmanMode<'_>, smoothed: &mut [f64], out: &mut [f64], policy: &mut [Action]) {
    ctx.space.smoother().apply_into(values, smoothed);
    let a = ctx.actions;
    let use_bonus = matches!(mode, BellmanMode::Optimistic);
    for node in 0..out.len() {
        let rows = &ctx.rows[node * a..(node + 1) * a];
        let bonus_row = match (&ctx.bonus, use_bonus) {
            (Some(b), true) => Some(&b[node * a..(node + 1) * a]),
            _ => None,
        };
        let bonus_of = |k: usize| bonus_row.map_or(0.0, |b| b[k]);
        match mode {
            BellmanMode::Policy(EvalPolicy::Table(table)) => {
                let k = table[node].index();
                out[node] = ctx.q_value(&rows[k], smoothed, 0.0);
                policy[node] = table[node];
            }
            BellmanMode::Policy(EvalPolicy::Uniform) => {
                let mut sum = 0.0;
                let mut best = (f64::NEG_INFINITY, 0);
                for (k, row) in rows.iter().enumerate() {
                    let q = ctx.q_value(row, smoothed, 0.0);
                    sum += q;
                    if q > best.0 {
                        best = (q, k);
                    }
                }
                out[node] = sum / a as f64;
                policy[node] = Action::from_index(best.1);
            }
            BellmanMode::Optimal | BellmanMode::Optimistic => {
                let mut best = (f64::NEG_INFINITY, 0);
                for (k, row) in rows.iter().enumerate() {
                    let q = ctx.q_value(row, smoothed, bonus_of(k));
                    if q > best.0 {
                        best = (q, k);
                    }
                }
                out[node] = best.0;
                policy[node] = Action::from_index(best.1);
            }
        }
    }
}

fn check_mode(ctx: &BellmanContext, mode: BellmanMode<'_>) -> Result<()> {
    if let BellmanMode::Policy(EvalPolicy::Table(t)) = mode {
        if t.len() != ctx.grid().len() {
            return Err(EngageError::DimensionMismatch {
                expected: ctx.grid().len(),
                got: t.len(),
            });
        }
        if t.iter().any(|a| a.index() >= ctx.actions) {
            return Err(EngageError::param("policy", "action outside the action set"));
        }
    }
    Ok(())
}

/// One application of the selected Bellman operator.
pub fn bellman_apply(ctx: &BellmanContext, j: &ValueFunction, mode: BellmanMode<'_>) -> Result<ValueFunction> {
    check_mode(ctx, mode)?;
    let n = ctx.grid().len();
    if j.values.len() != n {
        return Err(EngageError::DimensionMismatch {
            expected: n,
            got: j.values.len(),
        });
    }
    let mut smoothed = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut policy = vec![Action::Null; n];
    apply_into(ctx, &j.values, mode, &mut smoothed, &mut out, &mut policy);
    Ok(ValueFunction {
        grid: ctx.grid().clone(),
        values: out,
        policy,
    })
}

/// Iterates the operator from zero until the sup-norm change is at most `tol`.
pub fn value_iteration(ctx: &BellmanContext, mode: BellmanMode<'_>, tol: f64) -> Result<ValueFunction> {
    value_iteration_from(ctx, mode, tol, None).map(|(v, _)| v)
}

/// Value iteration from an optional warm start; also returns the sequence of
/// sup-norm residuals.
pub fn value_iteration_from(
    ctx: &BellmanContext,
    mode: BellmanMode<'_>,
    tol: f64,
    init: Option<&[f64]>,
) -> Result<(ValueFunction, Vec<f64>)> {
    check_mode(ctx, mode)?;
    VI_CALLS.with(|c| c.set(c.get() + 1));
    let n = ctx.grid().len();
    let mut current = match init {
        Some(v) if v.len() == n => v.to_vec(),
        Some(v) => {
            return Err(EngageError::DimensionMismatch {
                expected: n,
                got: v.len(),
            })
        }
        None => vec![0.0; n],
    };
    let mut next = vec![0.0; n];
    let mut smoothed = vec![0.0; n];
    let mut policy = vec![Action::Null; n];
    let mut residuals = Vec::new();
    for _ in 0..VI_MAX_ITER {
        apply_into(ctx, &current, mode, &mut smoothed, &mut next, &mut policy);
        let residual = current
            .iter()
            .zip(&next)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut current, &mut next);
        residuals.push(residual);
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok((
                ValueFunction {
                    grid: ctx.grid().clone(),
                    values: current,
                    policy,
                },
                residuals,
            ));
        }
    }
    Err(EngageError::NonConvergence {
        what: "value iteration",
        iterations: residuals.len(),
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}
