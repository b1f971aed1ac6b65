use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::model::{Action, SimRng, Transition};
use crate::planning::{EvalPolicy, StateGrid, ValueFunction};

use super::{tabulate, Policy};

/// Always recommends the same action.
#[derive(Clone, Debug)]
pub struct FixedPolicy {
    action: Action,
    name: String,
}

impl FixedPolicy {
    pub fn new(action: Action, _treatments: usize) -> Self {
        let name = match action {
            Action::Null => "FixedNull".to_string(),
            Action::Treat(i) => format!("Fixed{}", i + 1),
        };
        FixedPolicy { action, name }
    }
}

impl Policy for FixedPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, _x: f64, _rng: &mut SimRng) -> Action {
        self.action
    }

    fn observe(&mut self, _tr: &Transition, _reward: f64, _rng: &mut SimRng) -> Result<bool> {
        Ok(false)
    }

    fn stationary_policy(&self, grid: &StateGrid) -> EvalPolicy {
        EvalPolicy::Table(vec![self.action; grid.len()])
    }
}

/// Uniform over all `M + 1` actions.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    treatments: usize,
}

impl RandomPolicy {
    pub fn new(treatments: usize) -> Self {
        RandomPolicy { treatments }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "Random"
    }

    fn act(&mut self, _x: f64, rng: &mut SimRng) -> Action {
        Action::from_index(rng.random_range(0..=self.treatments))
    }

    fn observe(&mut self, _tr: &Transition, _reward: f64, _rng: &mut SimRng) -> Result<bool> {
        Ok(false)
    }

    fn stationary_policy(&self, _grid: &StateGrid) -> EvalPolicy {
        EvalPolicy::Uniform
    }
}

/// Greedy with respect to the true optimal value function.
#[derive(Clone, Debug)]
pub struct OptimalPolicy {
    value: Arc<ValueFunction>,
}

impl OptimalPolicy {
    pub fn new(value: Arc<ValueFunction>) -> Self {
        OptimalPolicy { value }
    }
}

impl Policy for OptimalPolicy {
    fn name(&self) -> &str {
        "Optimal"
    }

    fn act(&mut self, x: f64, _rng: &mut SimRng) -> Action {
        self.value.action_at(x)
    }

    fn observe(&mut self, _tr: &Transition, _reward: f64, _rng: &mut SimRng) -> Result<bool> {
        Ok(false)
    }

    fn stationary_policy(&self, grid: &StateGrid) -> EvalPolicy {
        if grid == self.value.grid.as_ref() {
            return EvalPolicy::Table(self.value.policy.clone());
        }
        tabulate(grid, |x| self.value.action_at(x))
    }
}
