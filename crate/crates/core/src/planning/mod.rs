//! Discretised dynamic programming for the true, policy and optimistic
//! Bellman operators.
//!
//! The state axis is a uniform grid; the noise expectation uses a midpoint
//! quadrature folded into a banded smoothing operator `G = K·J`, so a sweep
//! costs one band product plus two interpolations per (node, action, outcome).
//! Next states beyond the grid are clamped to its edges.

mod bellman;
mod bonus;
mod grid;

pub use bellman::{
    bellman_apply, value_iteration, value_iteration_calls, value_iteration_from, BellmanContext, BellmanMode,
    EvalPolicy, ValueFunction, VI_MAX_ITER, VI_TOLERANCE,
};
pub use bonus::{
    bonus_parts, bonus_table, calibrate_bonus_scales, expected_feature_norm, exploration_bonus, kappa,
    lipschitz_l1, BonusInputs, BonusParts,
};
pub use grid::{build_grid, build_noise_quadrature, NoiseQuadrature, NoiseSmoother, PlanningSpace, StateGrid};
