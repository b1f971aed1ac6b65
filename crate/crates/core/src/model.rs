//! Ground-truth patient system.
//!
//! A scalar engagement state `x` evolves as
//! `x' = a·x + bᵀu + cᵀd + w`, where `u` is a 1-sparse recommendation, `d`
//! the (also 1-sparse) adherence outcome and `w` bounded symmetric noise.
//! Recommending treatment `i` at state `x` yields adherence with probability
//! `σ(x + μᵢ)`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};

/// Random stream used for every simulated trajectory.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Standard logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function, `σ(x)(1 − σ(x))`.
#[inline]
pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Known bounds on the parameter space and the noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub a_bar: f64,
    pub b_bar: f64,
    pub c_bar: f64,
    pub w_bar: f64,
    pub mu_bar: f64,
    /// Number of (non-null) treatments `M`.
    pub treatments: usize,
}

impl ModelBounds {
    /// The bounds used throughout the reference experiments.
    pub fn reference(treatments: usize) -> Self {
        ModelBounds {
            a_bar: 0.85,
            b_bar: 3.75,
            c_bar: 2.75,
            w_bar: 2.5,
            mu_bar: 2.5,
            treatments,
        }
    }

    pub fn with_treatments(&self, treatments: usize) -> Self {
        ModelBounds {
            treatments,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_bar > 0.0 && self.a_bar < 1.0) {
            return Err(EngageError::InvalidBounds(format!(
                "a_bar must lie in (0, 1), got {}",
                self.a_bar
            )));
        }
        for (name, v) in [
            ("b_bar", self.b_bar),
            ("c_bar", self.c_bar),
            ("w_bar", self.w_bar),
            ("mu_bar", self.mu_bar),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EngageError::InvalidBounds(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.treatments == 0 {
            return Err(EngageError::InvalidBounds(
                "at least one treatment is required".into(),
            ));
        }
        let c_x = self.state_bound()?;
        if !(c_x > 0.0) {
            return Err(EngageError::InvalidBounds(
                "state bound must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `C_x = (b̄ + c̄ + w̄) / (1 − ā)`.
    pub fn state_bound(&self) -> Result<f64> {
        compute_state_bound(self)
    }

    /// `(σ(−C_x − μ̄), σ(C_x + μ̄))`.
    pub fn adherence_bounds(&self) -> Result<(f64, f64)> {
        adherence_bounds(self)
    }

    /// Length of the dynamics parameter `θ = [a, bᵀ, cᵀ]`.
    pub fn theta_dim(&self) -> usize {
        2 * self.treatments + 1
    }

    /// Lower and upper corners of the dynamics parameter box.
    pub fn theta_box(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.treatments;
        let mut lo = Vec::with_capacity(2 * m + 1);
        let mut hi = Vec::with_capacity(2 * m + 1);
        lo.push(0.0);
        hi.push(self.a_bar);
        for _ in 0..m {
            lo.push(-self.b_bar);
            hi.push(self.b_bar);
        }
        for _ in 0..m {
            lo.push(-self.c_bar);
            hi.push(self.c_bar);
        }
        (lo, hi)
    }

    /// Squared-norm bound of the dynamics box, `ā² + M·b̄² + M·c̄²`.
    pub fn theta_norm_sq_bound(&self) -> f64 {
        let m = self.treatments as f64;
        self.a_bar * self.a_bar + m * self.b_bar * self.b_bar + m * self.c_bar * self.c_bar
    }
}

pub fn compute_state_bound(bounds: &ModelBounds) -> Result<f64> {
    if !(bounds.a_bar >= 0.0 && bounds.a_bar < 1.0) {
        return Err(EngageError::InvalidBounds(format!(
            "persistence bound a_bar = {} must lie in [0, 1)",
            bounds.a_bar
        )));
    }
    let num = bounds.b_bar + bounds.c_bar + bounds.w_bar;
    if !num.is_finite() || num < 0.0 {
        return Err(EngageError::InvalidBounds(
            "b_bar + c_bar + w_bar must be finite and nonnegative".into(),
        ));
    }
    Ok(num / (1.0 - bounds.a_bar))
}

pub fn adherence_bounds(bounds: &ModelBounds) -> Result<(f64, f64)> {
    let c_x = compute_state_bound(bounds)?;
    let hi = sigmoid(c_x + bounds.mu_bar);
    Ok((1.0 - hi, hi))
}

/// `uⁱ · σ(x + μᵢ)`.
#[inline]
pub fn adherence_prob(x: f64, mu_i: f64, recommended: bool) -> f64 {
    if recommended {
        sigmoid(x + mu_i)
    } else {
        0.0
    }
}

/// Truncated-Gaussian process noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the Gaussian before truncation.
    pub sigma_w: f64,
    /// Symmetric truncation bound.
    pub w_bar: f64,
    /// Subgaussian parameter used by the confidence radii.
    pub sigma_s: f64,
}

impl NoiseSpec {
    pub fn new(sigma_w: f64, w_bar: f64) -> Self {
        NoiseSpec {
            sigma_w,
            w_bar,
            sigma_s: sigma_w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_w", self.sigma_w),
            ("w_bar", self.w_bar),
            ("sigma_s", self.sigma_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EngageError::param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Draws one noise value by rejection from the untruncated Gaussian.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let w = self.sigma_w * z;
            if w.abs() <= self.w_bar {
                return w;
            }
        }
    }
}

pub fn sample_noise<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> f64 {
    spec.sample(rng)
}

/// A 1-sparse recommendation (or adherence outcome).
///
/// Actions are ordered `Null < Treat(0) < Treat(1) < …`; the ordering is the
/// tie-break rule used by every argmax in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Null,
    /// Zero-based treatment index.
    Treat(usize),
}

impl Action {
    /// Position in the action set `U` (`Null` is 0).
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Action::Null => 0,
            Action::Treat(i) => i + 1,
        }
    }

    #[inline]
    pub fn from_index(k: usize) -> Self {
        if k == 0 {
            Action::Null
        } else {
            Action::Treat(k - 1)
        }
    }

    #[inline]
    pub fn treatment(self) -> Option<usize> {
        match self {
            Action::Null => None,
            Action::Treat(i) => Some(i),
        }
    }

    /// All `M + 1` actions in tie-break order.
    pub fn all(treatments: usize) -> impl Iterator<Item = Action> {
        (0..=treatments).map(Action::from_index)
    }

    /// Dense 0/1 vector of length `treatments`.
    pub fn to_vector(self, treatments: usize) -> Vec<f64> {
        let mut v = vec![0.0; treatments];
        if let Action::Treat(i) = self {
            v[i] = 1.0;
        }
        v
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Null => write!(f, "null"),
            Action::Treat(i) => write!(f, "treat{}", i + 1),
        }
    }
}

/// True system parameters `(a, b, c, μ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    pub a: f64,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub mu: Vec<f64>,
}

impl PatientParams {
    pub fn treatments(&self) -> usize {
        self.b.len()
    }

    /// Splits `θ = [a, bᵀ, cᵀ]` and pairs it with `μ`.
    pub fn from_theta(theta: &[f64], mu: &[f64]) -> Result<Self> {
        let m = mu.len();
        if theta.len() != 2 * m + 1 {
            return Err(EngageError::DimensionMismatch {
                expected: 2 * m + 1,
                got: theta.len(),
            });
        }
        Ok(PatientParams {
            a: theta[0],
            b: theta[1..=m].to_vec(),
            c: theta[m + 1..].to_vec(),
            mu: mu.to_vec(),
        })
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(2 * self.treatments() + 1);
        t.push(self.a);
        t.extend_from_slice(&self.b);
        t.extend_from_slice(&self.c);
        t
    }

    pub fn validate(&self, bounds: &ModelBounds) -> Result<()> {
        let m = self.treatments();
        if self.c.len() != m || self.mu.len() != m {
            return Err(EngageError::param(
                "params",
                "b, c and mu must have the same length",
            ));
        }
        if m != bounds.treatments {
            return Err(EngageError::DimensionMismatch {
                expected: bounds.treatments,
                got: m,
            });
        }
        if !(self.a >= 0.0 && self.a <= bounds.a_bar && self.a < 1.0) {
            return Err(EngageError::param("a", format!("{} outside [0, {}]", self.a, bounds.a_bar)));
        }
        let tol = 1e-12;
        if self.b.iter().any(|v| !(v.abs() <= bounds.b_bar + tol)) {
            return Err(EngageError::param("b", "component outside [-b_bar, b_bar]"));
        }
        if self.c.iter().any(|v| !(v.abs() <= bounds.c_bar + tol)) {
            return Err(EngageError::param("c", "component outside [-c_bar, c_bar]"));
        }
        if self.mu.iter().any(|v| !(v.abs() <= bounds.mu_bar + tol)) {
            return Err(EngageError::param("mu", "component outside [-mu_bar, mu_bar]"));
        }
        Ok(())
    }

    /// Deterministic part of the transition: `a·x + bᵀu + cᵀd`.
    #[inline]
    pub fn mean_next(&self, x: f64, u: Action, d: Action) -> f64 {
        let mut y = self.a * x;
        if let Action::Treat(i) = u {
            y += self.b[i];
        }
        if let Action::Treat(i) = d {
            y += self.c[i];
        }
        y
    }
}

/// Feature vector `z = [x, uᵀ, dᵀ]`.
pub fn feature_vector(x: f64, u: Action, d: Action, treatments: usize) -> Vec<f64> {
    let mut z = vec![0.0; 2 * treatments + 1];
    z[0] = x;
    if let Action::Treat(i) = u {
        z[1 + i] = 1.0;
    }
    if let Action::Treat(i) = d {
        z[1 + treatments + i] = 1.0;
    }
    z
}

/// One observed step of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: f64,
    pub u: Action,
    pub d: Action,
    pub x_next: f64,
    pub z: Vec<f64>,
}

impl Transition {
    pub fn new(x: f64, u: Action, d: Action, x_next: f64, treatments: usize) -> Self {
        Transition {
            x,
            u,
            d,
            x_next,
            z: feature_vector(x, u, d, treatments),
        }
    }

    pub fn adhered(&self) -> bool {
        self.d != Action::Null
    }
}

/// Outcome of one simulated step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub d: Action,
    pub x_next: f64,
    pub w: f64,
}

/// Transition with the adherence draw and the noise supplied by the caller.
pub fn step_with(params: &PatientParams, x: f64, u: Action, adhered: bool, w: f64) -> StepOutcome {
    let d = match u {
        Action::Treat(_) if adhered => u,
        _ => Action::Null,
    };
    StepOutcome {
        d,
        x_next: params.mean_next(x, u, d) + w,
        w,
    }
}

/// Samples the adherence outcome and the noise, then advances the state.
pub fn step<R: Rng + ?Sized>(
    params: &PatientParams,
    noise: &NoiseSpec,
    x: f64,
    u: Action,
    rng: &mut R,
) -> StepOutcome {
    let adhered = match u {
        Action::Null => false,
        Action::Treat(i) => rng.random::<f64>() < sigmoid(x + params.mu[i]),
    };
    let w = noise.sample(rng);
    step_with(params, x, u, adhered, w)
}

/// Reward structure `r(x, u, d) = −β·σ(β₀ − x) + Σ ρᵢ dᵢ` with discount `γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub rho: Vec<f64>,
    pub beta: f64,
    pub beta0: f64,
    pub gamma: f64,
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rho.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(EngageError::param("rho", "rewards must be finite and nonnegative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(EngageError::param("beta", "must be nonnegative"));
        }
        if !self.beta0.is_finite() {
            return Err(EngageError::param("beta0", "must be finite"));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(EngageError::param("gamma", format!("{} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }

    /// `ρ̄`, taken as the largest configured treatment reward.
    pub fn rho_bar(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }

    /// State penalty `β·σ(β₀ − x)` (returned as a nonnegative cost).
    #[inline]
    pub fn penalty(&self, x: f64) -> f64 {
        if self.beta == 0.0 {
            0.0
        } else {
            self.beta * sigmoid(self.beta0 - x)
        }
    }
}

pub fn reward(spec: &RewardSpec, x: f64, _u: Action, d: Action) -> f64 {
    let gain = match d {
        Action::Null => 0.0,
        Action::Treat(i) => spec.rho[i],
    };
    gain - spec.penalty(x)
}

/// Reward averaged over the adherence outcome under shifts `mu`.
pub fn expected_reward(spec: &RewardSpec, mu: &[f64], x: f64, u: Action) -> f64 {
    let gain = match u {
        Action::Null => 0.0,
        Action::Treat(i) => spec.rho[i] * sigmoid(x + mu[i]),
    };
    gain - spec.penalty(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn reference_bounds() -> ModelBounds {
        ModelBounds::reference(3)
    }

    #[test]
    fn state_bound_examples() {
        assert_abs_diff_eq!(reference_bounds().state_bound().unwrap(), 60.0, epsilon = 1e-12);
        let zero_persist = ModelBounds {
            a_bar: 0.0,
            b_bar: 1.0,
            c_bar: 1.0,
            w_bar: 1.0,
            mu_bar: 0.0,
            treatments: 1,
        };
        assert_abs_diff_eq!(compute_state_bound(&zero_persist).unwrap(), 3.0);
        let pure_noise = ModelBounds {
            a_bar: 0.5,
            b_bar: 0.0,
            c_bar: 0.0,
            w_bar: 1.0,
            mu_bar: 0.0,
            treatments: 1,
        };
        assert_abs_diff_eq!(compute_state_bound(&pure_noise).unwrap(), 2.0);
    }

    #[test]
    fn state_bound_rejects_unstable_persistence() {
        let b = ModelBounds {
            a_bar: 1.0,
            ..reference_bounds()
        };
        assert!(matches!(compute_state_bound(&b), Err(EngageError::InvalidBounds(_))));
        assert!(b.validate().is_err());
    }

    #[test]
    fn adherence_probability_examples() {
        assert_eq!(adherence_prob(5.0, -1.0, false), 0.0);
        assert_abs_diff_eq!(adherence_prob(0.0, 0.0, true), 0.5);
        assert_abs_diff_eq!(adherence_prob(1.0, 0.0, true), 0.731_058_578_630_004_9, epsilon = 1e-15);
    }

    #[test]
    fn adherence_bound_examples() {
        let flat = ModelBounds {
            a_bar: 0.5,
            b_bar: 0.0,
            c_bar: 0.0,
            w_bar: 0.0,
            mu_bar: 0.0,
            treatments: 1,
        };
        assert_eq!(adherence_bounds(&flat).unwrap(), (0.5, 0.5));
        // C_x = 2
        let two = ModelBounds {
            w_bar: 1.0,
            ..flat
        };
        let (lo, hi) = adherence_bounds(&two).unwrap();
        assert_abs_diff_eq!(lo, 0.119_202_922_022_117_55, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 0.880_797_077_977_882_4, epsilon = 1e-15);
        let (lo, hi) = reference_bounds().adherence_bounds().unwrap();
        assert_abs_diff_eq!(lo + hi, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn step_examples() {
        let p = PatientParams {
            a: 0.5,
            b: vec![1.0],
            c: vec![1.0],
            mu: vec![0.0],
        };
        let out = step_with(&p, 2.0, Action::Treat(0), true, 0.0);
        assert_eq!(out.d, Action::Treat(0));
        assert_abs_diff_eq!(out.x_next, 3.0);

        let null = step_with(&p, 2.0, Action::Null, true, 0.25);
        assert_eq!(null.d, Action::Null);
        assert_abs_diff_eq!(null.x_next, 1.25);

        let inert = PatientParams {
            a: 0.0,
            b: vec![0.0],
            c: vec![0.0],
            mu: vec![0.0],
        };
        assert_eq!(step_with(&inert, 7.0, Action::Treat(0), true, 0.0).x_next, 0.0);

        let noise = NoiseSpec::new(1.0, 2.5);
        let mut rng = SimRng::seed_from_u64(3);
        for _ in 0..100 {
            let o = step(&p, &noise, 0.3, Action::Null, &mut rng);
            assert_eq!(o.d, Action::Null);
            assert_abs_diff_eq!(o.x_next, 0.15 + o.w, epsilon = 1e-15);
        }
    }

    #[test]
    fn reward_examples() {
        let spec = RewardSpec {
            rho: vec![1.0],
            beta: 0.0,
            beta0: 0.0,
            gamma: 0.8,
        };
        assert_eq!(reward(&spec, 3.0, Action::Treat(0), Action::Treat(0)), 1.0);
        assert_eq!(reward(&spec, 3.0, Action::Treat(0), Action::Null), 0.0);
        let penalised = RewardSpec { beta: 1.0, ..spec.clone() };
        assert_abs_diff_eq!(reward(&penalised, 0.0, Action::Null, Action::Null), -0.5);
    }

    #[test]
    fn expected_reward_examples() {
        let spec = RewardSpec {
            rho: vec![2.0],
            beta: 0.0,
            beta0: 0.0,
            gamma: 0.8,
        };
        assert_eq!(expected_reward(&spec, &[0.0], 1.3, Action::Null), 0.0);
        assert_abs_diff_eq!(expected_reward(&spec, &[0.0], 0.0, Action::Treat(0)), 1.0);
    }

    #[test]
    fn expected_reward_matches_monte_carlo() {
        let spec = RewardSpec {
            rho: vec![1.5, 0.7],
            beta: 1.2,
            beta0: -0.5,
            gamma: 0.8,
        };
        let params = PatientParams {
            a: 0.4,
            b: vec![0.1, -0.2],
            c: vec![0.3, 0.5],
            mu: vec![-0.4, 0.9],
        };
        let noise = NoiseSpec::new(1.0, 2.5);
        let mut rng = SimRng::seed_from_u64(11);
        let x = 0.35;
        let u = Action::Treat(1);
        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let o = step(&params, &noise, x, u, &mut rng);
            let r = reward(&spec, x, u, o.d);
            sum += r;
            sum_sq += r * r;
        }
        let mean = sum / n as f64;
        let sd = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = expected_reward(&spec, &params.mu, x, u);
        assert!((mean - exact).abs() <= 3.0 * sd, "mc {mean} vs exact {exact} (sd {sd})");
    }

    #[test]
    fn noise_samples_are_truncated_and_centered() {
        let noise = NoiseSpec::new(1.0, 2.5);
        let mut rng = SimRng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let w = noise.sample(&mut rng);
            assert!(w.abs() <= 2.5);
            s += w;
            s2 += w * w;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        // Variance of N(0, 1) truncated to ±2.5, from quadrature of the density:
        // 1 − 2·2.5·φ(2.5)/(2Φ(2.5) − 1) = 0.911256…
        let oracle = truncated_variance_by_quadrature(1.0, 2.5);
        assert_abs_diff_eq!(oracle, 0.911_256_360_935_391_9, epsilon = 1e-9);
        assert!((var - oracle).abs() < 0.01, "var {var} vs {oracle}");
    }

    /// Composite Simpson integration of the truncated density, independent of the sampler.
    fn truncated_variance_by_quadrature(sigma: f64, bound: f64) -> f64 {
        let n = 20_000;
        let h = 2.0 * bound / n as f64;
        let (mut z, mut m2) = (0.0, 0.0);
        for k in 0..=n {
            let x = -bound + k as f64 * h;
            let wgt = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let dens = (-0.5 * (x / sigma).powi(2)).exp();
            z += wgt * dens;
            m2 += wgt * dens * x * x;
        }
        m2 / z
    }

    #[test]
    fn action_index_roundtrip_and_order() {
        let all: Vec<_> = Action::all(3).collect();
        assert_eq!(all.len(), 4);
        for (k, a) in all.iter().enumerate() {
            assert_eq!(a.index(), k);
            assert_eq!(Action::from_index(k), *a);
        }
        assert!(Action::Null < Action::Treat(0));
        assert!(Action::Treat(0) < Action::Treat(2));
        assert_eq!(Action::Treat(1).to_vector(3), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn theta_roundtrip() {
        let p = PatientParams {
            a: 0.3,
            b: vec![0.1, 0.2],
            c: vec![-0.3, 0.4],
            mu: vec![0.0, 1.0],
        };
        let back = PatientParams::from_theta(&p.theta(), &p.mu).unwrap();
        assert_eq!(back, p);
        assert!(PatientParams::from_theta(&[0.0; 4], &p.mu).is_err());
    }
}
