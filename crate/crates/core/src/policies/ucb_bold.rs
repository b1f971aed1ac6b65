use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::estimation::{mu_radius, theta_radius, AdherenceEstimator, ConfidenceConfig, DynamicsEstimator};
use crate::model::{Action, ModelBounds, PatientParams, RewardSpec, SimRng, Transition};
use crate::planning::{
    bonus_table, calibrate_bonus_scales, lipschitz_l1, value_iteration_from, BellmanContext, BellmanMode, BonusInputs,
    EvalPolicy, PlanningSpace, StateGrid, ValueFunction, VI_TOLERANCE,
};

use super::{tabulate, Cadence, Policy, PolicyContext};

/// How the theoretical bonus components are scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BonusScaling {
    /// Each component rescaled so its largest initial value on the grid is `ρ̄/2`.
    Calibrated,
    /// Radii and constants used as derived.
    Theoretical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcbBoldConfig {
    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub c_d: f64,
    pub c_n: f64,
    pub bonus: BonusScaling,
    pub vi_tolerance: f64,
}

impl Default for UcbBoldConfig {
    fn default() -> Self {
        UcbBoldConfig {
            delta: 0.1,
            lambda1: 1.0,
            lambda2: 1.0,
            c_d: 0.5,
            c_n: 0.5,
            bonus: BonusScaling::Calibrated,
            vi_tolerance: VI_TOLERANCE,
        }
    }
}

impl UcbBoldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(EngageError::param("delta", "must lie in (0, 1)"));
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(EngageError::param("lambda", "regularizers must be positive"));
        }
        if !(self.c_d > 0.0 && self.c_n > 0.0) {
            return Err(EngageError::param("c_d/c_n", "trigger constants must be positive"));
        }
        if !(self.vi_tolerance > 0.0) {
            return Err(EngageError::param("vi_tolerance", "must be positive"));
        }
        Ok(())
    }
}

/// New-epoch condition: `det V̄ₜ > (1+C_d)·det V̄⁽ᵏ⁾` (compared in log space)
/// or `Nᵢ > (1+C_N)·Nᵢ⁽ᵏ⁾` for some treatment.
pub fn epoch_trigger(log_det_now: f64, log_det_snapshot: f64, c_d: f64, counts: &[usize], snapshot_counts: &[usize], c_n: f64) -> bool {
    log_det_now > (1.0 + c_d).ln() + log_det_snapshot
        || counts
            .iter()
            .zip(snapshot_counts)
            .any(|(&n, &n0)| n as f64 > (1.0 + c_n) * n0 as f64)
}

/// Upper bound on the number of epochs started within `t` steps:
/// `log_{1+C_d}(det V̄ / det λ₁I) + M·(1 + log_{1+C_N} t) + 1`, the final `1`
/// counting the initial epoch.
pub fn epoch_count_bound(treatments: usize, log_det_final: f64, log_det_initial: f64, t: usize, c_d: f64, c_n: f64) -> f64 {
    let det_part = (log_det_final - log_det_initial).max(0.0) / (1.0 + c_d).ln();
    let count_part = treatments as f64 * (1.0 + (t.max(1) as f64).ln() / (1.0 + c_n).ln());
    det_part + count_part + 1.0
}

/// Quantities frozen at the start of an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSnapshot {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Number of transitions observed when the epoch began.
    pub samples: usize,
    pub v_bar: DMatrix<f64>,
    pub log_det: f64,
    pub theta_rls: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub alpha_theta: f64,
    pub alpha_mu: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Optimistic epoch-based planner.
#[derive(Clone, Debug)]
pub struct UcbBold {
    cfg: UcbBoldConfig,
    bounds: ModelBounds,
    reward: RewardSpec,
    space: PlanningSpace,
    confidence: ConfidenceConfig,
    l1: f64,
    scale_theta: f64,
    scale_mu: f64,
    dynamics: DynamicsEstimator,
    adherence: AdherenceEstimator,
    counts: Vec<usize>,
    stale_arms: Vec<bool>,
    snapshot: EpochSnapshot,
    value: ValueFunction,
}

impl UcbBold {
    pub fn new(cfg: UcbBoldConfig, ctx: &PolicyContext) -> Result<Self> {
        cfg.validate()?;
        let m = ctx.treatments();
        let bounds = ctx.bounds.with_treatments(m);
        bounds.validate()?;
        let confidence = ConfidenceConfig {
            delta: cfg.delta / 2.0,
            sigma_s: ctx.noise.sigma_s,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            bounds: bounds.clone(),
        };
        confidence.validate()?;
        let dynamics = DynamicsEstimator::new(bounds.theta_dim(), cfg.lambda1)?;
        let adherence = AdherenceEstimator::new(m, cfg.lambda2, bounds.mu_bar)?;
        let l1 = lipschitz_l1(&ctx.reward, &bounds);
        let grid = ctx.space.grid().clone();
        let mut policy = UcbBold {
            snapshot: EpochSnapshot {
                epoch: 0,
                samples: 0,
                v_bar: dynamics.v_bar().clone(),
                log_det: 0.0,
                theta_rls: Vec::new(),
                theta_hat: Vec::new(),
                mu_hat: Vec::new(),
                alpha_theta: 0.0,
                alpha_mu: Vec::new(),
                counts: vec![0; m],
            },
            value: ValueFunction::constant(grid, 0.0),
            cfg,
            bounds,
            reward: ctx.reward.clone(),
            space: ctx.space.clone(),
            confidence,
            l1,
            scale_theta: 1.0,
            scale_mu: 1.0,
            dynamics,
            adherence,
            counts: vec![0; m],
            stale_arms: vec![false; m],
        };
        policy.take_snapshot()?;
        if policy.cfg.bonus == BonusScaling::Calibrated {
            let inputs = policy.bonus_inputs(&policy.snapshot)?;
            let (st, sm) = calibrate_bonus_scales(policy.space.grid(), &inputs, policy.reward.rho_bar());
            policy.scale_theta = st;
            policy.scale_mu = sm;
        }
        policy.value = policy.plan(&policy.snapshot, None)?;
        Ok(policy)
    }

    fn take_snapshot(&mut self) -> Result<()> {
        for (i, stale) in self.stale_arms.iter_mut().enumerate() {
            if *stale {
                self.adherence.solve(i);
                *stale = false;
            }
        }
        let est = self.dynamics.estimate(&self.bounds)?;
        let m = self.counts.len();
        let samples = self.dynamics.samples();
        self.snapshot = EpochSnapshot {
            epoch: self.snapshot.epoch + 1,
            samples,
            v_bar: self.dynamics.v_bar().clone(),
            log_det: self.dynamics.log_det()?,
            theta_rls: est.rls,
            theta_hat: est.projected,
            mu_hat: self.adherence.mu_hat_all().to_vec(),
            alpha_theta: theta_radius(&self.confidence, (samples + 1) as f64),
            alpha_mu: (0..m).map(|i| mu_radius(&self.confidence, &self.adherence, i)).collect(),
            counts: self.counts.clone(),
        };
        Ok(())
    }

    fn bonus_inputs(&self, snap: &EpochSnapshot) -> Result<BonusInputs> {
        let v_inv = snap
            .v_bar
            .clone()
            .cholesky()
            .ok_or_else(|| EngageError::Numerical("epoch moment matrix is not positive definite".into()))?
            .inverse();
        Ok(BonusInputs {
            mu_hat: snap.mu_hat.clone(),
            alpha_mu: snap.alpha_mu.clone(),
            alpha_theta: snap.alpha_theta,
            v_inv,
            l1: self.l1,
            gamma: self.reward.gamma,
            rho_bar: self.reward.rho_bar(),
            c_bar: self.bounds.c_bar,
            mu_bar: self.bounds.mu_bar,
            scale_theta: self.scale_theta,
            scale_mu: self.scale_mu,
        })
    }

    /// Solves the optimistic surrogate defined by `snap`. Pure in the snapshot:
    /// replaying a snapshot reproduces the epoch's value function and action map.
    pub fn plan(&self, snap: &EpochSnapshot, warm_start: Option<&[f64]>) -> Result<ValueFunction> {
        let params = PatientParams::from_theta(&snap.theta_hat, &snap.mu_hat)?;
        let inputs = self.bonus_inputs(snap)?;
        let ctx = BellmanContext::new(&self.space, &params, &self.reward)?
            .with_bonus(bonus_table(self.space.grid(), &inputs))?;
        value_iteration_from(&ctx, BellmanMode::Optimistic, self.cfg.vi_tolerance, warm_start).map(|(v, _)| v)
    }

    /// Replaces the current epoch's estimates and radii and re-plans.
    pub fn replan_with(&mut self, theta_hat: Vec<f64>, mu_hat: Vec<f64>, alpha_theta: f64, alpha_mu: Vec<f64>) -> Result<()> {
        let m = self.counts.len();
        if theta_hat.len() != 2 * m + 1 || mu_hat.len() != m || alpha_mu.len() != m {
            return Err(EngageError::DimensionMismatch {
                expected: m,
                got: mu_hat.len(),
            });
        }
        self.snapshot.theta_hat = theta_hat;
        self.snapshot.mu_hat = mu_hat;
        self.snapshot.alpha_theta = alpha_theta;
        self.snapshot.alpha_mu = alpha_mu;
        self.value = self.plan(&self.snapshot, Some(&self.value.values))?;
        Ok(())
    }

    pub fn snapshot(&self) -> &EpochSnapshot {
        &self.snapshot
    }

    pub fn epochs(&self) -> usize {
        self.snapshot.epoch
    }

    /// Optimistic value function of the current epoch.
    pub fn optimistic_value(&self) -> &ValueFunction {
        &self.value
    }

    pub fn dynamics(&self) -> &DynamicsEstimator {
        &self.dynamics
    }

    pub fn adherence(&self) -> &AdherenceEstimator {
        &self.adherence
    }

    pub fn bonus_scales(&self) -> (f64, f64) {
        (self.scale_theta, self.scale_mu)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Confidence settings used for the radii (`δ/2` of the configured level).
    pub fn confidence(&self) -> &ConfidenceConfig {
        &self.confidence
    }
}

impl Policy for UcbBold {
    fn name(&self) -> &str {
        "UCB-BOLD"
    }

    fn act(&mut self, x: f64, _rng: &mut SimRng) -> Action {
        self.value.action_at(x)
    }

    fn observe(&mut self, tr: &Transition, _reward: f64, _rng: &mut SimRng) -> Result<bool> {
        self.dynamics.update(&tr.z, tr.x_next)?;
        if let Action::Treat(i) = tr.u {
            self.adherence.update(i, tr.x, tr.adhered());
            self.counts[i] += 1;
            self.stale_arms[i] = true;
        }
        let log_det = self.dynamics.log_det()?;
        if !epoch_trigger(log_det, self.snapshot.log_det, self.cfg.c_d, &self.counts, &self.snapshot.counts, self.cfg.c_n) {
            return Ok(false);
        }
        self.take_snapshot()?;
        let warm = std::mem::take(&mut self.value.values);
        self.value = self.plan(&self.snapshot, Some(&warm))?;
        Ok(true)
    }

    fn stationary_policy(&self, grid: &StateGrid) -> EvalPolicy {
        if grid == self.value.grid.as_ref() {
            return EvalPolicy::Table(self.value.policy.clone());
        }
        tabulate(grid, |x| self.value.action_at(x))
    }

    fn cadence(&self) -> Cadence {
        Cadence::OnChange
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expected_reward, NoiseSpec};
    use crate::planning::value_iteration;
    use rand::SeedableRng;

    fn context(gamma: f64) -> PolicyContext {
        let bounds = ModelBounds::reference(2);
        let noise = NoiseSpec::new(1.0, 2.5);
        let space = PlanningSpace::build(bounds.state_bound().unwrap(), 1.0 / 3.0, 0.5, &noise, 21).unwrap();
        PolicyContext {
            bounds,
            noise,
            reward: RewardSpec {
                rho: vec![1.0, 1.5],
                beta: 0.5,
                beta0: -2.0,
                gamma,
            },
            space,
            optimal: None,
        }
    }

    fn truth() -> PatientParams {
        PatientParams {
            a: 0.7,
            b: vec![-0.3, -0.6],
            c: vec![1.2, 0.4],
            mu: vec![-0.5, -1.0],
        }
    }

    #[test]
    fn trigger_examples() {
        assert!(epoch_trigger(3.1f64.ln(), 2.0f64.ln(), 0.5, &[0], &[0], 0.5));
        assert!(!epoch_trigger(2.9f64.ln(), 2.0f64.ln(), 0.5, &[0], &[0], 0.5));
        assert!(epoch_trigger(0.0, 0.0, 0.5, &[7, 0], &[4, 0], 0.5));
        assert!(!epoch_trigger(0.0, 0.0, 0.5, &[6, 0], &[4, 0], 0.5));
        assert!(epoch_trigger(0.0, 0.0, 0.5, &[0, 1], &[0, 0], 0.5));
    }

    #[test]
    fn truth_with_zero_radii_matches_optimal() {
        let ctx = context(0.8);
        let p = truth();
        let mut ucb = UcbBold::new(UcbBoldConfig::default(), &ctx).unwrap();
        ucb.replan_with(p.theta(), p.mu.clone(), 0.0, vec![0.0; 2]).unwrap();
        let bctx = BellmanContext::new(&ctx.space, &p, &ctx.reward).unwrap();
        let opt = value_iteration(&bctx, BellmanMode::Optimal, 1e-9).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        for (k, &x) in ctx.space.grid().points().iter().enumerate() {
            assert_eq!(ucb.act(x, &mut rng), opt.policy[k]);
        }
    }

    #[test]
    fn myopic_zero_radius_picks_best_immediate_reward() {
        let ctx = context(0.0);
        let p = truth();
        let mut ucb = UcbBold::new(UcbBoldConfig::default(), &ctx).unwrap();
        ucb.replan_with(p.theta(), p.mu.clone(), 0.0, vec![0.0; 2]).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        for &x in ctx.space.grid().points() {
            let scores: Vec<f64> = Action::all(2).map(|u| expected_reward(&ctx.reward, &p.mu, x, u)).collect();
            assert_eq!(ucb.act(x, &mut rng), super::super::argmax_action(scores));
        }
    }

    #[test]
    fn calibrated_initial_bonus_peaks_at_half_rho_bar() {
        let ctx = context(0.8);
        let ucb = UcbBold::new(UcbBoldConfig::default(), &ctx).unwrap();
        let inputs = ucb.bonus_inputs(ucb.snapshot()).unwrap();
        let grid = ctx.space.grid();
        let (mut mt, mut mm) = (0.0_f64, 0.0_f64);
        for &x in grid.points() {
            for u in Action::all(2) {
                let p = crate::planning::bonus_parts(x, u, &inputs);
                mt = mt.max(inputs.scale_theta * p.theta);
                mm = mm.max(inputs.scale_mu * p.mu);
            }
        }
        assert!((mt - 0.75).abs() < 1e-9);
        assert!((mm - 0.75).abs() < 1e-9);
    }

    #[test]
    fn policy_is_fixed_within_an_epoch_and_snapshot_replays() {
        let ctx = context(0.8);
        let p = truth();
        let mut ucb = UcbBold::new(UcbBoldConfig::default(), &ctx).unwrap();
        let mut env = SimRng::seed_from_u64(4);
        let mut prng = SimRng::seed_from_u64(5);
        let mut x = 0.0;
        let mut epochs_seen = 1;
        for _ in 0..300 {
            let before = ucb.optimistic_value().policy.clone();
            let u = ucb.act(x, &mut prng);
            assert_eq!(u, ucb.act(x, &mut prng));
            let out = crate::model::step(&p, &ctx.noise, x, u, &mut env);
            let tr = Transition::new(x, u, out.d, out.x_next, 2);
            let changed = ucb.observe(&tr, 0.0, &mut prng).unwrap();
            if changed {
                epochs_seen += 1;
                let replay = ucb.plan(ucb.snapshot(), None).unwrap();
                assert_eq!(replay.policy, ucb.optimistic_value().policy);
            } else {
                assert_eq!(before, ucb.optimistic_value().policy);
            }
            x = out.x_next;
        }
        assert_eq!(epochs_seen, ucb.epochs());
        let bound = epoch_count_bound(
            2,
            ucb.dynamics().log_det().unwrap(),
            5.0 * 1.0f64.ln(),
            300,
            0.5,
            0.5,
        );
        assert!((ucb.epochs() as f64) <= bound);
    }
}
