use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::estimation::{mu_radius, AdherenceEstimator, ConfidenceConfig};
use crate::model::{expected_reward, Action, RewardSpec, SimRng, Transition};
use crate::planning::{kappa, EvalPolicy, StateGrid};

use super::{argmax_action, tabulate, BonusScaling, Policy, PolicyContext};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmBanditConfig {
    pub delta: f64,
    pub lambda2: f64,
    pub c_n: f64,
    pub bonus: BonusScaling,
}

impl Default for GlmBanditConfig {
    fn default() -> Self {
        GlmBanditConfig {
            delta: 0.1,
            lambda2: 1.0,
            c_n: 0.5,
            bonus: BonusScaling::Calibrated,
        }
    }
}

impl GlmBanditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(EngageError::param("delta", "must lie in (0, 1)"));
        }
        if !(self.lambda2 > 0.0) {
            return Err(EngageError::param("lambda2", "must be positive"));
        }
        if !(self.c_n > 0.0) {
            return Err(EngageError::param("c_n", "must be positive"));
        }
        Ok(())
    }
}

/// Myopic optimistic bandit over adherence shifts: acts greedily on the
/// expected immediate reward under `μ̃ᵢ = clip(μ̂ᵢ + s·αᵢ)`, re-estimating on
/// the action-count trigger only. It never plans.
#[derive(Clone, Debug)]
pub struct GlmBandit {
    cfg: GlmBanditConfig,
    reward: RewardSpec,
    mu_bar: f64,
    confidence: ConfidenceConfig,
    adherence: AdherenceEstimator,
    radius_scale: f64,
    counts: Vec<usize>,
    snapshot_counts: Vec<usize>,
    alpha_mu: Vec<f64>,
    mu_tilde: Vec<f64>,
    epochs: usize,
}

impl GlmBandit {
    pub fn new(cfg: GlmBanditConfig, ctx: &PolicyContext) -> Result<Self> {
        cfg.validate()?;
        let m = ctx.treatments();
        let bounds = ctx.bounds.with_treatments(m);
        bounds.validate()?;
        let confidence = ConfidenceConfig {
            delta: cfg.delta / 2.0,
            sigma_s: ctx.noise.sigma_s,
            lambda1: 1.0,
            lambda2: cfg.lambda2,
            bounds: bounds.clone(),
        };
        confidence.validate()?;
        let adherence = AdherenceEstimator::new(m, cfg.lambda2, bounds.mu_bar)?;
        let mut policy = GlmBandit {
            reward: ctx.reward.clone(),
            mu_bar: bounds.mu_bar,
            confidence,
            adherence,
            radius_scale: 1.0,
            counts: vec![0; m],
            snapshot_counts: vec![0; m],
            alpha_mu: vec![0.0; m],
            mu_tilde: vec![0.0; m],
            epochs: 0,
            cfg,
        };
        policy.start_epoch();
        if policy.cfg.bonus == BonusScaling::Calibrated {
            // Same rule as the planner's adherence bonus: the largest initial
            // first-order optimism ρ̄·κ·s·α over the grid equals ρ̄/2.
            let max_term = ctx
                .space
                .grid()
                .points()
                .iter()
                .flat_map(|&x| (0..m).map(move |i| (x, i)))
                .map(|(x, i)| kappa(x, policy.adherence.mu_hat(i), policy.mu_bar) * policy.alpha_mu[i])
                .fold(0.0_f64, f64::max);
            if max_term > 0.0 {
                policy.radius_scale = 0.5 / max_term;
            }
            policy.refresh_optimism();
        }
        Ok(policy)
    }

    fn start_epoch(&mut self) {
        self.epochs += 1;
        for i in 0..self.counts.len() {
            if self.adherence.count(i) != self.snapshot_counts[i] || self.epochs == 1 {
                self.adherence.solve(i);
            }
            self.alpha_mu[i] = mu_radius(&self.confidence, &self.adherence, i);
        }
        self.snapshot_counts.clone_from(&self.counts);
        self.refresh_optimism();
    }

    fn refresh_optimism(&mut self) {
        for i in 0..self.counts.len() {
            self.mu_tilde[i] =
                (self.adherence.mu_hat(i) + self.radius_scale * self.alpha_mu[i]).clamp(-self.mu_bar, self.mu_bar);
        }
    }

    /// Optimistic shifts of the current epoch.
    pub fn mu_tilde(&self) -> &[f64] {
        &self.mu_tilde
    }

    pub fn radius_scale(&self) -> f64 {
        self.radius_scale
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn adherence(&self) -> &AdherenceEstimator {
        &self.adherence
    }

    /// Sets the optimistic shifts directly (for inspection and tests).
    pub fn set_mu_tilde(&mut self, mu_tilde: Vec<f64>) -> Result<()> {
        if mu_tilde.len() != self.mu_tilde.len() {
            return Err(EngageError::DimensionMismatch {
                expected: self.mu_tilde.len(),
                got: mu_tilde.len(),
            });
        }
        self.mu_tilde = mu_tilde.into_iter().map(|m| m.clamp(-self.mu_bar, self.mu_bar)).collect();
        Ok(())
    }

    pub fn greedy(&self, x: f64) -> Action {
        let m = self.counts.len();
        argmax_action(Action::all(m).map(|u| expected_reward(&self.reward, &self.mu_tilde, x, u)))
    }
}

impl Policy for GlmBandit {
    fn name(&self) -> &str {
        "GLM-Bandit"
    }

    fn act(&mut self, x: f64, _rng: &mut SimRng) -> Action {
        self.greedy(x)
    }

    fn observe(&mut self, tr: &Transition, _reward: f64, _rng: &mut SimRng) -> Result<bool> {
        if let Action::Treat(i) = tr.u {
            self.adherence.update(i, tr.x, tr.adhered());
            self.counts[i] += 1;
        }
        let fire = self
            .counts
            .iter()
            .zip(&self.snapshot_counts)
            .any(|(&n, &n0)| n as f64 > (1.0 + self.cfg.c_n) * n0 as f64);
        if fire {
            self.start_epoch();
        }
        Ok(fire)
    }

    fn stationary_policy(&self, grid: &StateGrid) -> EvalPolicy {
        tabulate(grid, |x| self.greedy(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sigmoid, ModelBounds, NoiseSpec};
    use crate::planning::{value_iteration_calls, PlanningSpace};
    use rand::{Rng, SeedableRng};

    fn context(rho: Vec<f64>, beta: f64) -> PolicyContext {
        let m = rho.len();
        let bounds = ModelBounds::reference(m);
        let noise = NoiseSpec::new(1.0, 2.5);
        let space = PlanningSpace::build(bounds.state_bound().unwrap(), 1.0 / 3.0, 0.1, &noise, 21).unwrap();
        PolicyContext {
            bounds,
            noise,
            reward: RewardSpec {
                rho,
                beta,
                beta0: -2.0,
                gamma: 0.8,
            },
            space,
            optimal: None,
        }
    }

    #[test]
    fn dominant_reward_wins_at_large_mu() {
        let ctx = context(vec![1.0, 2.0], 0.0);
        let mut g = GlmBandit::new(GlmBanditConfig::default(), &ctx).unwrap();
        g.set_mu_tilde(vec![2.5, 2.5]).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        for x in [0.0, 5.0, 15.0] {
            assert_eq!(g.act(x, &mut rng), Action::Treat(1));
        }
    }

    #[test]
    fn zero_rewards_tie_to_null() {
        let ctx = context(vec![0.0, 0.0], 0.0);
        let mut g = GlmBandit::new(GlmBanditConfig::default(), &ctx).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        for x in [-10.0, 0.0, 10.0] {
            assert_eq!(g.act(x, &mut rng), Action::Null);
        }
    }

    #[test]
    fn matches_clipped_radius_oracle_and_never_plans() {
        let ctx = context(vec![1.0, 1.7, 0.0], 0.7);
        let mut g = GlmBandit::new(GlmBanditConfig::default(), &ctx).unwrap();
        let truth = [-0.4, -1.2, 0.0];
        let mut env = SimRng::seed_from_u64(8);
        let mut prng = SimRng::seed_from_u64(9);
        let calls = value_iteration_calls();
        let mut checked = 0;
        for _ in 0..400 {
            let x: f64 = env.random_range(-15.0..15.0);
            let u = g.act(x, &mut prng);
            let adhered = match u {
                Action::Treat(i) => env.random::<f64>() < sigmoid(x + truth[i]),
                Action::Null => false,
            };
            let d = if adhered { u } else { Action::Null };
            let tr = Transition::new(x, u, d, 0.0, 3);
            let fired = g.observe(&tr, 0.0, &mut prng).unwrap();
            if fired {
                checked += 1;
                let r = &ctx.reward;
                let mu_opt: Vec<f64> = (0..3)
                    .map(|i| {
                        let alpha = mu_radius(&g.confidence, g.adherence(), i);
                        (g.adherence().mu_hat(i) + g.radius_scale() * alpha).clamp(-2.5, 2.5)
                    })
                    .collect();
                for &xg in ctx.space.grid().points().iter().step_by(7) {
                    let scores = (0..=3).map(|k| {
                        let gain = if k == 0 { 0.0 } else { r.rho[k - 1] * sigmoid(xg + mu_opt[k - 1]) };
                        gain - r.beta * sigmoid(r.beta0 - xg)
                    });
                    assert_eq!(g.greedy(xg), argmax_action(scores));
                }
            }
        }
        assert!(checked > 3);
        assert!(g.epochs() > 1);
        assert_eq!(value_iteration_calls(), calls);
    }

    #[test]
    fn calibrated_radius_scale() {
        let ctx = context(vec![1.0, 2.0], 0.0);
        let g = GlmBandit::new(GlmBanditConfig::default(), &ctx).unwrap();
        // μ̂ = 0 initially, so the largest κ on the grid is 1/4
        let alpha0 = g.alpha_mu[0];
        assert!((g.radius_scale() * 0.25 * alpha0 - 0.5).abs() < 1e-12);
        assert!(g.mu_tilde().iter().all(|m| (m - 2.0).abs() < 1e-12));
        let raw = GlmBandit::new(
            GlmBanditConfig {
                bonus: BonusScaling::Theoretical,
                ..Default::default()
            },
            &ctx,
        )
        .unwrap();
        assert!(raw.mu_tilde().iter().all(|&m| m == 2.5));
    }
}
