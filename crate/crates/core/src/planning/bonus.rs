use nalgebra::DMatrix;

use crate::model::{sigmoid, sigmoid_prime, Action, ModelBounds, RewardSpec};

use super::grid::StateGrid;

/// Lipschitz constant of the optimal value function in the state,
/// `L₁ = (β + ρ̄) / (4(1 − γā)) · (1 + 2γ/(1 − γ))`.
pub fn lipschitz_l1(spec: &RewardSpec, bounds: &ModelBounds) -> f64 {
    let g = spec.gamma;
    (spec.beta + spec.rho_bar()) / (4.0 * (1.0 - g * bounds.a_bar)) * (1.0 + 2.0 * g / (1.0 - g))
}

/// Inputs of the exploration bonus for one planning epoch.
#[derive(Clone, Debug)]
pub struct BonusInputs {
    pub mu_hat: Vec<f64>,
    /// Per-treatment adherence radii.
    pub alpha_mu: Vec<f64>,
    /// Dynamics radius.
    pub alpha_theta: f64,
    /// `V̄⁻¹` of the epoch.
    pub v_inv: DMatrix<f64>,
    pub l1: f64,
    pub gamma: f64,
    pub rho_bar: f64,
    pub c_bar: f64,
    pub mu_bar: f64,
    pub scale_theta: f64,
    pub scale_mu: f64,
}

impl BonusInputs {
    pub fn treatments(&self) -> usize {
        self.mu_hat.len()
    }
}

/// Unscaled components of the bonus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BonusParts {
    pub theta: f64,
    pub mu: f64,
}

/// `κ(x, μ̂) = min(1/4, e^{2μ̄} σ′(x + μ̂))`.
pub fn kappa(x: f64, mu_hat: f64, mu_bar: f64) -> f64 {
    (0.25_f64).min((2.0 * mu_bar).exp() * sigmoid_prime(x + mu_hat))
}

/// `E_{μ̂}[‖z‖_{V̄⁻¹} | x, u]`, averaging over the adherence outcome.
pub fn expected_feature_norm(x: f64, u: Action, mu_hat: &[f64], v_inv: &DMatrix<f64>) -> f64 {
    let m = mu_hat.len();
    let base = x * x * v_inv[(0, 0)];
    match u {
        Action::Null => base.max(0.0).sqrt(),
        Action::Treat(i) => {
            let ui = 1 + i;
            let di = 1 + m + i;
            let no = base + 2.0 * x * v_inv[(0, ui)] + v_inv[(ui, ui)];
            let yes = no + 2.0 * x * v_inv[(0, di)] + 2.0 * v_inv[(ui, di)] + v_inv[(di, di)];
            let p = sigmoid(x + mu_hat[i]);
            p * yes.max(0.0).sqrt() + (1.0 - p) * no.max(0.0).sqrt()
        }
    }
}

pub fn bonus_parts(x: f64, u: Action, inp: &BonusInputs) -> BonusParts {
    let mu = match u {
        Action::Null => 0.0,
        Action::Treat(i) => {
            (inp.rho_bar + inp.gamma * inp.l1 * inp.c_bar) * kappa(x, inp.mu_hat[i], inp.mu_bar) * inp.alpha_mu[i]
        }
    };
    let theta = inp.gamma * inp.l1 * inp.alpha_theta * expected_feature_norm(x, u, &inp.mu_hat, &inp.v_inv);
    BonusParts { theta, mu }
}

/// Scaled exploration bonus `b(x, u)`.
pub fn exploration_bonus(x: f64, u: Action, inp: &BonusInputs) -> f64 {
    let p = bonus_parts(x, u, inp);
    (inp.scale_mu * p.mu + inp.scale_theta * p.theta).max(0.0)
}

/// Bonus for every (node, action), node-major, as consumed by the Bellman context.
pub fn bonus_table(grid: &StateGrid, inp: &BonusInputs) -> Vec<f64> {
    let m = inp.treatments();
    let mut out = Vec::with_capacity(grid.len() * (m + 1));
    for &x in grid.points() {
        for u in Action::all(m) {
            out.push(exploration_bonus(x, u, inp));
        }
    }
    out
}

/// Scales making the largest initial value of each bonus component over the
/// grid equal to `ρ̄/2`. A component that is identically zero (or `ρ̄ = 0`)
/// keeps scale 1.
pub fn calibrate_bonus_scales(grid: &StateGrid, initial: &BonusInputs, rho_bar: f64) -> (f64, f64) {
    let m = initial.treatments();
    let (mut max_theta, mut max_mu) = (0.0_f64, 0.0_f64);
    for &x in grid.points() {
        for u in Action::all(m) {
            let p = bonus_parts(x, u, initial);
            max_theta = max_theta.max(p.theta);
            max_mu = max_mu.max(p.mu);
        }
    }
    let scale = |mx: f64| {
        if mx > 0.0 && rho_bar > 0.0 {
            0.5 * rho_bar / mx
        } else {
            1.0
        }
    };
    (scale(max_theta), scale(max_mu))
}
