//! Online estimators and confidence radii.
//!
//! Dynamics `θ = [a, bᵀ, cᵀ]` are fit by ridge regression of the next state on
//! `z = [x, uᵀ, dᵀ]` and then projected onto the parameter box in the
//! `V̄`-weighted norm. Each adherence shift `μᵢ` is a ridge-penalised
//! one-dimensional logistic MLE clipped to `[−μ̄, μ̄]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::model::{sigmoid, sigmoid_prime, ModelBounds};

const PROJECTION_MAX_ITER: usize = 10_000;
const MLE_BRACKET: f64 = 50.0;

/// Ridge regression state for the dynamics parameters.
#[derive(Clone, Debug)]
pub struct DynamicsEstimator {
    v_bar: DMatrix<f64>,
    moment: DVector<f64>,
    lambda1: f64,
    samples: usize,
}

impl DynamicsEstimator {
    pub fn new(dim: usize, lambda1: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda1.is_finite()) {
            return Err(EngageError::param("lambda1", "must be positive"));
        }
        if dim == 0 {
            return Err(EngageError::param("dim", "must be positive"));
        }
        Ok(DynamicsEstimator {
            v_bar: DMatrix::identity(dim, dim) * lambda1,
            moment: DVector::zeros(dim),
            lambda1,
            samples: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.moment.len()
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    /// Number of regression samples absorbed so far.
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `V̄ = λ₁I + Σ zzᵀ`.
    pub fn v_bar(&self) -> &DMatrix<f64> {
        &self.v_bar
    }

    /// `s = Σ z·x_next`.
    pub fn moment(&self) -> &DVector<f64> {
        &self.moment
    }

    pub fn update(&mut self, z: &[f64], x_next: f64) -> Result<()> {
        let d = self.dim();
        if z.len() != d {
            return Err(EngageError::DimensionMismatch {
                expected: d,
                got: z.len(),
            });
        }
        for i in 0..d {
            if z[i] == 0.0 {
                continue;
            }
            self.moment[i] += z[i] * x_next;
            for j in 0..d {
                self.v_bar[(i, j)] += z[i] * z[j];
            }
        }
        self.samples += 1;
        Ok(())
    }

    fn cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        self.v_bar
            .clone()
            .cholesky()
            .ok_or_else(|| EngageError::Numerical("second-moment matrix is not positive definite".into()))
    }

    /// `V̄⁻¹ s` via a Cholesky solve.
    pub fn solve_rls(&self) -> Result<Vec<f64>> {
        let chol = self.cholesky()?;
        Ok(chol.solve(&self.moment).iter().copied().collect())
    }

    pub fn log_det(&self) -> Result<f64> {
        let chol = self.cholesky()?;
        let l = chol.l_dirty();
        Ok((0..self.dim()).map(|i| 2.0 * l[(i, i)].ln()).sum())
    }

    pub fn v_bar_inverse(&self) -> Result<DMatrix<f64>> {
        Ok(self.cholesky()?.inverse())
    }

    /// `‖a − b‖_{V̄}`.
    pub fn weighted_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
        (diff.dot(&(&self.v_bar * &diff))).max(0.0).sqrt()
    }

    /// RLS solution followed by the weighted box projection.
    pub fn estimate(&self, bounds: &ModelBounds) -> Result<ThetaEstimate> {
        let rls = self.solve_rls()?;
        let projected = project_theta(self, &rls, bounds)?;
        Ok(ThetaEstimate { rls, projected })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaEstimate {
    pub rls: Vec<f64>,
    pub projected: Vec<f64>,
}

pub fn update_dynamics(est: &mut DynamicsEstimator, z: &[f64], x_next: f64) -> Result<()> {
    est.update(z, x_next)
}

pub fn solve_rls(est: &DynamicsEstimator) -> Result<Vec<f64>> {
    est.solve_rls()
}

/// Projection of `theta_rls` onto the dynamics box under the `V̄` norm.
pub fn project_theta(est: &DynamicsEstimator, theta_rls: &[f64], bounds: &ModelBounds) -> Result<Vec<f64>> {
    let (lo, hi) = bounds.theta_box();
    if theta_rls.len() != lo.len() {
        return Err(EngageError::DimensionMismatch {
            expected: lo.len(),
            got: theta_rls.len(),
        });
    }
    project_box(est.v_bar(), theta_rls, &lo, &hi)
}

/// `argmin_{lo ≤ θ ≤ hi} ‖θ − target‖²_V` for symmetric positive definite `V`.
///
/// Primal active-set method on the equivalent QP
/// `½θᵀVθ − (V·target)ᵀθ`; terminates exactly in finitely many steps.
pub fn project_box(v: &DMatrix<f64>, target: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    let n = target.len();
    if v.nrows() != n || v.ncols() != n || lo.len() != n || hi.len() != n {
        return Err(EngageError::DimensionMismatch {
            expected: n,
            got: v.nrows(),
        });
    }
    if target.iter().zip(lo).zip(hi).all(|((t, l), h)| t >= l && t <= h) {
        return Ok(target.to_vec());
    }
    let tvec = DVector::from_column_slice(target);
    let q = v * &tvec;
    let scale = q.amax().max(v.amax()).max(1.0);
    let kkt_tol = 1e-12 * scale;

    #[derive(Clone, Copy, PartialEq)]
    enum Bound {
        Free,
        Lower,
        Upper,
    }
    let mut x: Vec<f64> = (0..n).map(|i| target[i].clamp(lo[i], hi[i])).collect();
    let mut state: Vec<Bound> = (0..n)
        .map(|i| {
            if target[i] < lo[i] {
                Bound::Lower
            } else if target[i] > hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    for _ in 0..PROJECTION_MAX_ITER {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        let mut y = x.clone();
        if !free.is_empty() {
            let k = free.len();
            let mut a = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (r, &i) in free.iter().enumerate() {
                let mut acc = q[i];
                for j in 0..n {
                    if state[j] != Bound::Free {
                        acc -= v[(i, j)] * x[j];
                    }
                }
                rhs[r] = acc;
                for (c, &j) in free.iter().enumerate() {
                    a[(r, c)] = v[(i, j)];
                }
            }
            let sol = a
                .cholesky()
                .ok_or_else(|| EngageError::Numerical("projection subproblem not positive definite".into()))?
                .solve(&rhs);
            for (r, &i) in free.iter().enumerate() {
                y[i] = sol[r];
            }
        }

        let feasible = free.iter().all(|&i| y[i] >= lo[i] && y[i] <= hi[i]);
        if feasible {
            x = y;
            // multipliers of the bound constraints
            let xv = DVector::from_column_slice(&x);
            let grad = v * &xv - &q;
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                let violation = match state[i] {
                    Bound::Lower => -grad[i],
                    Bound::Upper => grad[i],
                    Bound::Free => continue,
                };
                if violation > kkt_tol && worst.is_none_or(|(_, w)| violation > w) {
                    worst = Some((i, violation));
                }
            }
            match worst {
                None => return Ok(x),
                Some((i, _)) => state[i] = Bound::Free,
            }
        } else {
            let mut step = 1.0_f64;
            let mut blocking = Vec::new();
            for &i in &free {
                let dir = y[i] - x[i];
                let limit = if y[i] < lo[i] {
                    (lo[i] - x[i]) / dir
                } else if y[i] > hi[i] {
                    (hi[i] - x[i]) / dir
                } else {
                    continue;
                };
                let limit = limit.clamp(0.0, 1.0);
                if limit < step - 1e-15 {
                    step = limit;
                    blocking.clear();
                    blocking.push(i);
                } else if (limit - step).abs() <= 1e-15 {
                    blocking.push(i);
                }
            }
            for &i in &free {
                x[i] += step * (y[i] - x[i]);
            }
            for i in blocking {
                if y[i] < lo[i] {
                    x[i] = lo[i];
                    state[i] = Bound::Lower;
                } else {
                    x[i] = hi[i];
                    state[i] = Bound::Upper;
                }
            }
        }
    }
    Err(EngageError::NonConvergence {
        what: "weighted box projection",
        iterations: PROJECTION_MAX_ITER,
        residual: f64::NAN,
    })
}

/// Inputs shared by both confidence radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    pub delta: f64,
    pub sigma_s: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub bounds: ModelBounds,
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(EngageError::param("delta", format!("{} outside (0, 1)", self.delta)));
        }
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(EngageError::param("lambda", "regularizers must be positive"));
        }
        Ok(())
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        ConfidenceConfig {
            delta,
            ..self.clone()
        }
    }
}

/// Dynamics confidence radius
/// `σ_s·√((2M+1)·log(1/δ + t(C_x²+2)/(δλ₁))) + √(λ₁(ā² + Mb̄² + Mc̄²))`.
pub fn theta_radius(cfg: &ConfidenceConfig, t: f64) -> f64 {
    let b = &cfg.bounds;
    let dim = b.theta_dim() as f64;
    let c_x = b.state_bound().unwrap_or(f64::INFINITY);
    let inner = 1.0 / cfg.delta + t * (c_x * c_x + 2.0) / (cfg.delta * cfg.lambda1);
    let stochastic = cfg.sigma_s * (dim * inner.ln().max(0.0)).sqrt();
    stochastic + (cfg.lambda1 * b.theta_norm_sq_bound()).sqrt()
}

/// Adherence confidence radius evaluated at information `h`.
pub fn mu_radius_from_information(cfg: &ConfidenceConfig, h: f64) -> f64 {
    let mu_bar = cfg.bounds.mu_bar;
    let m = cfg.bounds.treatments as f64;
    let sl2 = cfg.lambda2.sqrt();
    let sh = h.sqrt();
    let log_term = (2.0 * m * sh / (cfg.delta * sl2)).ln();
    (3.0 * mu_bar).exp() / sh * (sl2 / 2.0 + 2.0 / sl2 * (mu_bar + log_term))
        + (2.0 * mu_bar).exp() * cfg.lambda2 * mu_bar / h
}

/// Adherence radius for arm `i` at its current projected estimate.
pub fn mu_radius(cfg: &ConfidenceConfig, est: &AdherenceEstimator, i: usize) -> f64 {
    let h = est.h_value(i, est.mu_hat(i));
    mu_radius_from_information(cfg, h)
}

/// Per-treatment logistic MLE for the adherence shifts.
#[derive(Clone, Debug)]
pub struct AdherenceEstimator {
    lambda2: f64,
    mu_bar: f64,
    observations: Vec<Vec<(f64, bool)>>,
    mu_hat: Vec<f64>,
    unclipped: Vec<f64>,
}

impl AdherenceEstimator {
    pub fn new(treatments: usize, lambda2: f64, mu_bar: f64) -> Result<Self> {
        if !(lambda2 >= 0.0 && lambda2.is_finite()) {
            return Err(EngageError::param("lambda2", "must be nonnegative"));
        }
        if !(mu_bar >= 0.0) {
            return Err(EngageError::param("mu_bar", "must be nonnegative"));
        }
        Ok(AdherenceEstimator {
            lambda2,
            mu_bar,
            observations: vec![Vec::new(); treatments],
            mu_hat: vec![0.0; treatments],
            unclipped: vec![0.0; treatments],
        })
    }

    pub fn treatments(&self) -> usize {
        self.observations.len()
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Records one recommendation of treatment `i` and whether it was followed.
    pub fn update(&mut self, i: usize, x: f64, adhered: bool) {
        self.observations[i].push((x, adhered));
    }

    /// `Nᵢ`.
    pub fn count(&self, i: usize) -> usize {
        self.observations[i].len()
    }

    pub fn observations(&self, i: usize) -> &[(f64, bool)] {
        &self.observations[i]
    }

    /// Last solved (clipped) estimate of `μᵢ`.
    pub fn mu_hat(&self, i: usize) -> f64 {
        self.mu_hat[i]
    }

    pub fn mu_hat_all(&self) -> &[f64] {
        &self.mu_hat
    }

    /// Penalised log-likelihood of arm `i` at shift `mu`.
    pub fn log_likelihood(&self, i: usize, mu: f64) -> f64 {
        let ll: f64 = self.observations[i]
            .iter()
            .map(|&(x, d)| {
                let s = sigmoid(x + mu);
                if d {
                    s.ln()
                } else {
                    (1.0 - s).ln()
                }
            })
            .sum();
        ll - 0.5 * self.lambda2 * mu * mu
    }

    /// Derivative of the penalised log-likelihood, `−λ₂μ + Σ(d − σ(x+μ))`.
    pub fn score(&self, i: usize, mu: f64) -> f64 {
        self.score_and_information(i, mu).0
    }

    fn score_and_information(&self, i: usize, mu: f64) -> (f64, f64) {
        let mut score = -self.lambda2 * mu;
        let mut info = self.lambda2;
        for &(x, d) in &self.observations[i] {
            let s = sigmoid(x + mu);
            score += if d { 1.0 - s } else { -s };
            info += s * (1.0 - s);
        }
        (score, info)
    }

    /// `Hₜ(μ) = λ₂ + Σ σ′(x + μ)` over arm-`i` samples.
    pub fn h_value(&self, i: usize, mu: f64) -> f64 {
        self.lambda2
            + self.observations[i]
                .iter()
                .map(|&(x, _)| sigmoid_prime(x + mu))
                .sum::<f64>()
    }

    /// Solves the penalised MLE for arm `i`, clips it to `[−μ̄, μ̄]` and caches it.
    pub fn solve(&mut self, i: usize) -> f64 {
        let raw = self.solve_unclipped(i, self.unclipped[i]);
        self.unclipped[i] = raw;
        let clipped = raw.clamp(-self.mu_bar, self.mu_bar);
        self.mu_hat[i] = clipped;
        clipped
    }

    pub fn solve_all(&mut self) -> Vec<f64> {
        for i in 0..self.treatments() {
            self.solve(i);
        }
        self.mu_hat.clone()
    }

    /// Safeguarded Newton on the (strictly decreasing) score within `[−50, 50]`.
    fn solve_unclipped(&self, i: usize, start: f64) -> f64 {
        if self.observations[i].is_empty() {
            return 0.0;
        }
        let (mut lo, mut hi) = (-MLE_BRACKET, MLE_BRACKET);
        if self.score(i, lo) <= 0.0 {
            return lo;
        }
        if self.score(i, hi) >= 0.0 {
            return hi;
        }
        let mut mu = start.clamp(lo, hi);
        for _ in 0..200 {
            let (s, info) = self.score_and_information(i, mu);
            if s == 0.0 {
                return mu;
            }
            if s > 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            let newton = mu + s / info;
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - mu).abs() <= 1e-15 * mu.abs().max(1.0) || hi - lo <= 1e-15 {
                return next;
            }
            mu = next;
        }
        mu
    }
}

pub fn update_adherence(est: &mut AdherenceEstimator, i: usize, x: f64, adhered: bool) {
    est.update(i, x, adhered)
}

pub fn solve_mle(est: &mut AdherenceEstimator, i: usize) -> f64 {
    est.solve(i)
}

pub fn h_value(est: &AdherenceEstimator, i: usize, mu: f64) -> f64 {
    est.h_value(i, mu)
}
