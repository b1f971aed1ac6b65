use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::model::{Action, SimRng, Transition};
use crate::planning::{EvalPolicy, StateGrid};

use super::{Cadence, Policy};

/// Forced exploration: in every block of `k` steps, `⌈r·k⌉` positions drawn
/// at random take uniform actions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploratoryConfig {
    pub r: f64,
    pub k: usize,
}

impl ExploratoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(EngageError::param("r", "exploration fraction must lie in (0, 1]"));
        }
        if self.k == 0 {
            return Err(EngageError::param("k", "block length must be at least 1"));
        }
        Ok(())
    }

    /// `⌈r·k⌉`.
    pub fn per_block(&self) -> usize {
        // guard against r·k landing a few ulps above an integer
        let raw = self.r * self.k as f64;
        let rounded = raw.round();
        let n = if (raw - rounded).abs() <= 1e-9 * raw.max(1.0) {
            rounded
        } else {
            raw.ceil()
        };
        (n as usize).clamp(1, self.k)
    }
}

/// Exploratory positions for one block.
pub fn exploratory_steps(cfg: &ExploratoryConfig, rng: &mut SimRng) -> Vec<bool> {
    let mut mask = vec![false; cfg.k];
    for i in sample(rng, cfg.k, cfg.per_block()).iter() {
        mask[i] = true;
    }
    mask
}

/// Wraps a base policy with block-wise uniform exploration.
pub struct ExploratoryPolicy {
    base: Box<dyn Policy>,
    cfg: ExploratoryConfig,
    treatments: usize,
    mask: Vec<bool>,
    position: usize,
    explored: Vec<bool>,
    name: String,
}

pub fn rk_wrap(base: Box<dyn Policy>, cfg: ExploratoryConfig, treatments: usize) -> Result<ExploratoryPolicy> {
    cfg.validate()?;
    let name = format!("{}+rk({},{})", base.name(), cfg.r, cfg.k);
    Ok(ExploratoryPolicy {
        base,
        cfg,
        treatments,
        mask: Vec::new(),
        position: 0,
        explored: Vec::new(),
        name,
    })
}

impl ExploratoryPolicy {
    /// Whether each step so far was an exploratory one.
    pub fn history(&self) -> &[bool] {
        &self.explored
    }
}

impl Policy for ExploratoryPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, x: f64, rng: &mut SimRng) -> Action {
        if self.position.is_multiple_of(self.cfg.k) {
            self.mask = exploratory_steps(&self.cfg, rng);
        }
        let explore = self.mask[self.position % self.cfg.k];
        self.position += 1;
        self.explored.push(explore);
        if explore {
            Action::from_index(rng.random_range(0..=self.treatments))
        } else {
            self.base.act(x, rng)
        }
    }

    fn observe(&mut self, tr: &Transition, reward: f64, rng: &mut SimRng) -> Result<bool> {
        self.base.observe(tr, reward, rng)
    }

    /// The base policy's map; the exploratory steps are not stationary.
    fn stationary_policy(&self, grid: &StateGrid) -> EvalPolicy {
        self.base.stationary_policy(grid)
    }

    fn cadence(&self) -> Cadence {
        self.base.cadence()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::FixedPolicy;
    use rand::SeedableRng;

    fn wrapped(r: f64, k: usize) -> ExploratoryPolicy {
        rk_wrap(Box::new(FixedPolicy::new(Action::Null, 2)), ExploratoryConfig { r, k }, 2).unwrap()
    }

    #[test]
    fn block_counts() {
        assert_eq!(ExploratoryConfig { r: 0.3, k: 10 }.per_block(), 3);
        assert_eq!(ExploratoryConfig { r: 1.0, k: 7 }.per_block(), 7);
        assert_eq!(ExploratoryConfig { r: 0.25, k: 10 }.per_block(), 3);
        assert_eq!(ExploratoryConfig { r: 0.01, k: 10 }.per_block(), 1);
        assert!(ExploratoryConfig { r: 0.0, k: 10 }.validate().is_err());
        assert!(ExploratoryConfig { r: 0.5, k: 0 }.validate().is_err());
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut p = wrapped(1.0, 1);
        let mut rng = SimRng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[p.act(0.0, &mut rng).index()] += 1;
        }
        assert!(p.history().iter().all(|&e| e));
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 3.0 * (30_000.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt());
        }
    }

    #[test]
    fn every_aligned_block_has_exact_quota() {
        let mut p = wrapped(0.3, 10);
        let mut rng = SimRng::seed_from_u64(4);
        for _ in 0..10_000 {
            p.act(1.0, &mut rng);
        }
        for block in p.history().chunks(10) {
            assert_eq!(block.iter().filter(|&&e| e).count(), 3);
        }
    }
}
