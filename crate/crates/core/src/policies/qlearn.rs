use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::model::{Action, SimRng, Transition};
use crate::planning::{EvalPolicy, StateGrid};

use super::{argmax_action, tabulate, Cadence, Policy, PolicyContext};

/// Steps between regret evaluations of the drifting Q-learners.
pub const Q_EVAL_EVERY: usize = 20;

/// `ε_t = t^{−decay}` for `t ≥ 1`.
pub fn epsilon_schedule(t: usize, decay: f64) -> f64 {
    (t.max(1) as f64).powf(-decay)
}

/// `n` centers spread uniformly on `[−1, 1]` and the width `0.8·(c₂ − c₁)`.
pub fn rbf_centers(n: usize) -> (Vec<f64>, f64) {
    if n == 1 {
        return (vec![0.0], 1.6);
    }
    let centers: Vec<f64> = (0..n).map(|j| -1.0 + 2.0 * j as f64 / (n - 1) as f64).collect();
    let width = 0.8 * (centers[1] - centers[0]);
    (centers, width)
}

fn validate_common(alpha: f64, decay: f64, eval_every: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EngageError::param("alpha", "learning rate must lie in (0, 1]"));
    }
    if !(decay > 0.0 && decay.is_finite()) {
        return Err(EngageError::param("epsilon_decay", "must be positive"));
    }
    if eval_every == 0 {
        return Err(EngageError::param("eval_every", "must be at least 1"));
    }
    Ok(())
}

fn epsilon_greedy(t: usize, decay: f64, m: usize, rng: &mut SimRng, greedy: impl FnOnce() -> Action) -> Action {
    if rng.random::<f64>() < epsilon_schedule(t, decay) {
        Action::from_index(rng.random_range(0..=m))
    } else {
        greedy()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LfaQConfig {
    pub centers: usize,
    pub alpha: f64,
    pub epsilon_decay: f64,
    /// State scale `C_g`; defaults to the planning grid's half-width.
    pub grid_bound: Option<f64>,
    pub init: f64,
    pub eval_every: usize,
}

impl Default for LfaQConfig {
    fn default() -> Self {
        LfaQConfig {
            centers: 6,
            alpha: 0.3,
            epsilon_decay: 1.5,
            grid_bound: None,
            init: 0.0,
            eval_every: Q_EVAL_EVERY,
        }
    }
}

impl LfaQConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(self.alpha, self.epsilon_decay, self.eval_every)?;
        if self.centers == 0 {
            return Err(EngageError::param("centers", "need at least one RBF center"));
        }
        if let Some(g) = self.grid_bound {
            if !(g > 0.0) {
                return Err(EngageError::param("grid_bound", "must be positive"));
            }
        }
        Ok(())
    }
}

/// ε-greedy Q-learning with Gaussian RBF features per action.
#[derive(Clone, Debug)]
pub struct LfaQ {
    cfg: LfaQConfig,
    gamma: f64,
    grid_bound: f64,
    centers: Vec<f64>,
    width: f64,
    /// `(M + 1) × n`, row-major.
    weights: Vec<f64>,
    actions: usize,
    t: usize,
}

impl LfaQ {
    pub fn new(cfg: LfaQConfig, ctx: &PolicyContext) -> Result<Self> {
        cfg.validate()?;
        let (centers, width) = rbf_centers(cfg.centers);
        let actions = ctx.treatments() + 1;
        Ok(LfaQ {
            gamma: ctx.reward.gamma,
            grid_bound: cfg.grid_bound.unwrap_or_else(|| ctx.grid_bound()),
            weights: vec![cfg.init; actions * centers.len()],
            centers,
            width,
            actions,
            t: 0,
            cfg,
        })
    }

    /// `φ(x)` on the rescaled, clipped state `x̃ = clip(x / C_g, −1, 1)`.
    pub fn features(&self, x: f64) -> Vec<f64> {
        let xs = (x / self.grid_bound).clamp(-1.0, 1.0);
        let two_s2 = 2.0 * self.width * self.width;
        self.centers.iter().map(|c| (-(xs - c).powi(2) / two_s2).exp()).collect()
    }

    fn q_values(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.centers.len();
        (0..self.actions)
            .map(|k| self.weights[k * n..(k + 1) * n].iter().zip(phi).map(|(w, f)| w * f).sum())
            .collect()
    }

    pub fn q(&self, x: f64, u: Action) -> f64 {
        self.q_values(&self.features(x))[u.index()]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn greedy(&self, x: f64) -> Action {
        argmax_action(self.q_values(&self.features(x)))
    }
}

impl Policy for LfaQ {
    fn name(&self) -> &str {
        "LFA-Q"
    }

    fn act(&mut self, x: f64, rng: &mut SimRng) -> Action {
        self.t += 1;
        let m = self.actions - 1;
        let t = self.t;
        let decay = self.cfg.epsilon_decay;
        epsilon_greedy(t, decay, m, rng, || self.greedy(x))
    }

    fn observe(&mut self, tr: &Transition, reward: f64, _rng: &mut SimRng) -> Result<bool> {
        let phi = self.features(tr.x);
        let next = self.q_values(&self.features(tr.x_next));
        let max_next = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = tr.u.index();
        let n = self.centers.len();
        let row = &mut self.weights[k * n..(k + 1) * n];
        let current: f64 = row.iter().zip(&phi).map(|(w, f)| w * f).sum();
        let td = reward + self.gamma * max_next - current;
        for (w, f) in row.iter_mut().zip(&phi) {
            *w += self.cfg.alpha * td * f;
        }
        Ok(false)
    }

    fn stationary_policy(&self, grid: &StateGrid) -> EvalPolicy {
        tabulate(grid, |x| self.greedy(x))
    }

    fn cadence(&self) -> Cadence {
        Cadence::Every(self.cfg.eval_every)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcQConfig {
    pub bin_width: f64,
    pub tilings: usize,
    pub alpha: f64,
    pub epsilon_decay: f64,
    /// Tiles cover `[−C_g, C_g]`; defaults to the planning grid's half-width.
    pub grid_bound: Option<f64>,
    pub init: f64,
    pub eval_every: usize,
}

impl Default for TcQConfig {
    fn default() -> Self {
        TcQConfig {
            bin_width: 40.0,
            tilings: 64,
            alpha: 0.5,
            epsilon_decay: 1.5,
            grid_bound: None,
            init: 0.0,
            eval_every: Q_EVAL_EVERY,
        }
    }
}

impl TcQConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(self.alpha, self.epsilon_decay, self.eval_every)?;
        if !(self.bin_width > 0.0) {
            return Err(EngageError::param("bin_width", "must be positive"));
        }
        if self.tilings == 0 {
            return Err(EngageError::param("tilings", "need at least one tiling"));
        }
        if let Some(g) = self.grid_bound {
            if !(g > 0.0) {
                return Err(EngageError::param("grid_bound", "must be positive"));
            }
        }
        Ok(())
    }
}

/// ε-greedy Q-learning on `n_t` offset tilings of `[−C_g, C_g]`.
#[derive(Clone, Debug)]
pub struct TcQ {
    cfg: TcQConfig,
    gamma: f64,
    lo: f64,
    hi: f64,
    offsets: Vec<f64>,
    bins: Vec<usize>,
    /// Per tiling, `bins[k] × (M + 1)` row-major.
    tables: Vec<Vec<f64>>,
    actions: usize,
    t: usize,
}

impl TcQ {
    pub fn new(cfg: TcQConfig, ctx: &PolicyContext) -> Result<Self> {
        cfg.validate()?;
        let g = cfg.grid_bound.unwrap_or_else(|| ctx.grid_bound());
        let (lo, hi) = (-g, g);
        let actions = ctx.treatments() + 1;
        let w = cfg.bin_width;
        let n_t = cfg.tilings;
        let offsets: Vec<f64> = (0..n_t).map(|k| k as f64 * w / n_t as f64).collect();
        let bins: Vec<usize> = offsets
            .iter()
            .map(|off| (((hi - lo + off) / w).ceil() as usize).max(1))
            .collect();
        let tables = bins.iter().map(|&b| vec![cfg.init; b * actions]).collect();
        Ok(TcQ {
            gamma: ctx.reward.gamma,
            lo,
            hi,
            offsets,
            bins,
            tables,
            actions,
            t: 0,
            cfg,
        })
    }

    /// Bin of `x` in tiling `k` (state clipped to the tiled range).
    pub fn bin(&self, k: usize, x: f64) -> usize {
        let xc = x.clamp(self.lo, self.hi);
        let idx = ((xc - self.lo + self.offsets[k]) / self.cfg.bin_width).floor();
        (idx.max(0.0) as usize).min(self.bins[k] - 1)
    }

    pub fn bins_per_tiling(&self) -> &[usize] {
        &self.bins
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    fn q_values(&self, x: f64) -> Vec<f64> {
        let a = self.actions;
        let mut q = vec![0.0; a];
        for (k, table) in self.tables.iter().enumerate() {
            let b = self.bin(k, x);
            for (qu, v) in q.iter_mut().zip(&table[b * a..(b + 1) * a]) {
                *qu += v;
            }
        }
        q
    }

    pub fn q(&self, x: f64, u: Action) -> f64 {
        self.q_values(x)[u.index()]
    }

    pub fn greedy(&self, x: f64) -> Action {
        argmax_action(self.q_values(x))
    }
}

impl Policy for TcQ {
    fn name(&self) -> &str {
        "TC-Q"
    }

    fn act(&mut self, x: f64, rng: &mut SimRng) -> Action {
        self.t += 1;
        let m = self.actions - 1;
        let t = self.t;
        let decay = self.cfg.epsilon_decay;
        epsilon_greedy(t, decay, m, rng, || self.greedy(x))
    }

    fn observe(&mut self, tr: &Transition, reward: f64, _rng: &mut SimRng) -> Result<bool> {
        let max_next = self.q_values(tr.x_next).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let td = reward + self.gamma * max_next - self.q(tr.x, tr.u);
        let step = self.cfg.alpha / self.cfg.tilings as f64 * td;
        let a = self.actions;
        let u = tr.u.index();
        for k in 0..self.tables.len() {
            let b = self.bin(k, tr.x);
            self.tables[k][b * a + u] += step;
        }
        Ok(false)
    }

    fn stationary_policy(&self, grid: &StateGrid) -> EvalPolicy {
        tabulate(grid, |x| self.greedy(x))
    }

    fn cadence(&self) -> Cadence {
        Cadence::Every(self.cfg.eval_every)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelBounds, NoiseSpec, RewardSpec};
    use crate::planning::PlanningSpace;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn context() -> PolicyContext {
        let bounds = ModelBounds::reference(2);
        let noise = NoiseSpec::new(1.0, 2.5);
        let space = PlanningSpace::build(bounds.state_bound().unwrap(), 1.0 / 3.0, 0.1, &noise, 21).unwrap();
        PolicyContext {
            bounds,
            noise,
            reward: RewardSpec {
                rho: vec![1.0, 1.5],
                beta: 0.0,
                beta0: 0.0,
                gamma: 0.8,
            },
            space,
            optimal: None,
        }
    }

    #[test]
    fn rbf_examples() {
        let (c, w) = rbf_centers(2);
        assert_eq!(c, vec![-1.0, 1.0]);
        assert_abs_diff_eq!(w, 1.6, epsilon = 1e-15);
        let ctx = context();
        let q = LfaQ::new(
            LfaQConfig {
                centers: 2,
                ..Default::default()
            },
            &ctx,
        )
        .unwrap();
        let phi = q.features(-ctx.grid_bound());
        assert_abs_diff_eq!(phi[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(phi[1], (-4.0f64 / (2.0 * 1.6 * 1.6)).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(phi[1], 0.45783336177161427, epsilon = 1e-12);
        // clipping beyond the grid bound
        assert_eq!(q.features(-1e6), phi);
        let (c6, w6) = rbf_centers(6);
        assert_abs_diff_eq!(c6[1] - c6[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(w6, 0.32, epsilon = 1e-15);
    }

    #[test]
    fn epsilon_schedule_decreases_from_one() {
        assert_eq!(epsilon_schedule(1, 1.5), 1.0);
        let mut prev = 1.0;
        for t in 2..1000 {
            let e = epsilon_schedule(t, 1.5);
            assert!(e < prev && e > 0.0);
            prev = e;
        }
    }

    #[test]
    fn zero_rewards_keep_zero_weights() {
        let ctx = context();
        let mut q = LfaQ::new(LfaQConfig::default(), &ctx).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        let mut x = 0.0;
        for _ in 0..500 {
            let u = q.act(x, &mut rng);
            let x_next = rng.random_range(-20.0..20.0);
            q.observe(&Transition::new(x, u, Action::Null, x_next, 2), 0.0, &mut rng).unwrap();
            x = x_next;
        }
        assert!(q.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn lfa_update_follows_td_rule() {
        let ctx = context();
        let mut q = LfaQ::new(LfaQConfig::default(), &ctx).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        for _ in 0..50 {
            let x = rng.random_range(-20.0..20.0);
            let x2 = rng.random_range(-20.0..20.0);
            let u = Action::from_index(rng.random_range(0..3));
            let r = rng.random_range(-1.0..2.0);
            let phi = q.features(x);
            let max_next = Action::all(2).map(|v| q.q(x2, v)).fold(f64::NEG_INFINITY, f64::max);
            let td = r + 0.8 * max_next - q.q(x, u);
            let before = q.weights().to_vec();
            q.observe(&Transition::new(x, u, Action::Null, x2, 2), r, &mut rng).unwrap();
            let n = phi.len();
            for (j, (b, a)) in before.iter().zip(q.weights()).enumerate() {
                let expected = if j / n == u.index() { b + 0.3 * td * phi[j % n] } else { *b };
                assert_abs_diff_eq!(*a, expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tile_layout() {
        let ctx = context();
        let q = TcQ::new(TcQConfig::default(), &ctx).unwrap();
        assert_abs_diff_eq!(ctx.grid_bound(), 20.0, epsilon = 1e-9);
        assert_eq!(q.bins_per_tiling()[0], 1);
        assert!(q.bins_per_tiling()[1..].iter().all(|&b| b == 2));
        for (k, off) in q.offsets().iter().enumerate() {
            assert_abs_diff_eq!(*off, k as f64 * 40.0 / 64.0, epsilon = 1e-12);
        }
        for k in 0..64 {
            for x in [-25.0, -20.0, 0.0, 19.99, 20.0, 50.0] {
                assert!(q.bin(k, x) < q.bins_per_tiling()[k]);
            }
        }
    }

    #[test]
    fn single_tiling_is_one_state_tabular() {
        let ctx = context();
        let mut q = TcQ::new(
            TcQConfig {
                tilings: 1,
                ..Default::default()
            },
            &ctx,
        )
        .unwrap();
        let mut rng = SimRng::seed_from_u64(2);
        q.observe(&Transition::new(-7.0, Action::Treat(1), Action::Null, 3.0, 2), 1.0, &mut rng)
            .unwrap();
        for x in [-20.0, 0.0, 13.0] {
            assert_abs_diff_eq!(q.q(x, Action::Treat(1)), 0.5, epsilon = 1e-15);
            assert_eq!(q.q(x, Action::Null), 0.0);
        }
    }

    #[test]
    fn tc_update_moves_q_by_alpha_td() {
        let ctx = context();
        let mut q = TcQ::new(TcQConfig::default(), &ctx).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        for _ in 0..100 {
            let x = rng.random_range(-20.0..20.0);
            let x2 = rng.random_range(-20.0..20.0);
            let u = Action::from_index(rng.random_range(0..3));
            let r = rng.random_range(-1.0..2.0);
            let max_next = Action::all(2).map(|v| q.q(x2, v)).fold(f64::NEG_INFINITY, f64::max);
            let before = q.q(x, u);
            let td = r + 0.8 * max_next - before;
            q.observe(&Transition::new(x, u, Action::Null, x2, 2), r, &mut rng).unwrap();
            assert_abs_diff_eq!(q.q(x, u) - before, 0.5 * td, epsilon = 1e-10);
        }
    }
}
