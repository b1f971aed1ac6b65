use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{EngageError, Result};
use crate::model::NoiseSpec;

/// Uniform grid over a closed state interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    lo: f64,
    hi: f64,
    resolution: f64,
    points: Vec<f64>,
}

impl StateGrid {
    /// Grid on `[lo, hi]` whose spacing is `resolution` (the span must be a
    /// whole number of steps, up to rounding).
    pub fn new(lo: f64, hi: f64, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(EngageError::param("resolution", "must be positive"));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(EngageError::param("grid", format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        let steps = ((hi - lo) / resolution).round();
        if steps < 1.0 || ((hi - lo) / resolution - steps).abs() > 1e-6 {
            return Err(EngageError::param(
                "resolution",
                format!("span {} is not a multiple of {}", hi - lo, resolution),
            ));
        }
        let n = steps as usize + 1;
        let span = hi - lo;
        let points = (0..n)
            .map(|k| if k + 1 == n { hi } else { lo + span * k as f64 / (n - 1) as f64 })
            .collect();
        Ok(StateGrid {
            lo,
            hi,
            resolution: span / (n - 1) as f64,
            points,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Left node index and interpolation weight of `x`, clamped to the grid.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.points.len();
        if x <= self.lo {
            return (0, 0.0);
        }
        if x >= self.hi {
            return (n - 2, 1.0);
        }
        let pos = (x - self.lo) / self.resolution;
        let i = (pos.floor() as usize).min(n - 2);
        (i, (pos - i as f64).clamp(0.0, 1.0))
    }

    /// Index of the node nearest `x` (ties go to the lower node).
    #[inline]
    pub fn nearest(&self, x: f64) -> usize {
        let (i, frac) = self.locate(x);
        if frac > 0.5 {
            i + 1
        } else {
            i
        }
    }

    /// Piecewise-linear interpolation of nodal `values`, constant beyond the ends.
    #[inline]
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let (i, f) = self.locate(x);
        (1.0 - f) * values[i] + f * values[i + 1]
    }
}

/// Uniform grid on `[−c_x·shrink, c_x·shrink]`.
pub fn build_grid(c_x: f64, shrink: f64, resolution: f64) -> Result<StateGrid> {
    let half = c_x * shrink;
    StateGrid::new(-half, half, resolution)
}

/// Discrete approximation of the noise distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseQuadrature {
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NoiseQuadrature {
    pub fn mean(&self) -> f64 {
        self.offsets.iter().zip(&self.weights).map(|(o, w)| o * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(o, w)| w * (o - m) * (o - m))
            .sum()
    }
}

/// Midpoint rule for the truncated Gaussian on `n_nodes` cells of `[−w̄, w̄]`.
pub fn build_noise_quadrature(spec: &NoiseSpec, n_nodes: usize) -> Result<NoiseQuadrature> {
    if n_nodes < 3 || n_nodes.is_multiple_of(2) {
        return Err(EngageError::param("quadrature_nodes", format!("must be odd and ≥ 3, got {n_nodes}")));
    }
    spec.validate()?;
    let h = 2.0 * spec.w_bar / n_nodes as f64;
    let half = n_nodes / 2;
    let mut offsets = vec![0.0; n_nodes];
    for k in 0..half {
        let o = spec.w_bar - (k as f64 + 0.5) * h;
        offsets[k] = -o;
        offsets[n_nodes - 1 - k] = o;
    }
    let mut weights: Vec<f64> = offsets
        .iter()
        .map(|o| (-0.5 * (o / spec.sigma_w).powi(2)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(NoiseQuadrature { offsets, weights })
}

/// Linear operator `J ↦ G`, `G_j = Σ_k q_k · J(x_j + o_k)` with `J` linearly
/// interpolated (and clamped) on the grid. Stored as one contiguous band per node.
#[derive(Clone, Debug)]
pub struct NoiseSmoother {
    starts: Vec<usize>,
    spans: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

impl NoiseSmoother {
    pub fn new(grid: &StateGrid, quad: &NoiseQuadrature) -> Self {
        let n = grid.len();
        let mut starts = Vec::with_capacity(n);
        let mut spans = Vec::with_capacity(n);
        let mut weights = Vec::new();
        let mut band = Vec::new();
        for &x in grid.points() {
            let lo_idx = quad
                .offsets
                .iter()
                .map(|o| grid.locate(x + o).0)
                .min()
                .unwrap_or(0);
            let hi_idx = quad
                .offsets
                .iter()
                .map(|o| grid.locate(x + o).0 + 1)
                .max()
                .unwrap_or(1);
            band.clear();
            band.resize(hi_idx - lo_idx + 1, 0.0);
            for (o, q) in quad.offsets.iter().zip(&quad.weights) {
                let (i, f) = grid.locate(x + o);
                band[i - lo_idx] += q * (1.0 - f);
                band[i + 1 - lo_idx] += q * f;
            }
            starts.push(lo_idx);
            spans.push((weights.len(), band.len()));
            weights.extend_from_slice(&band);
        }
        NoiseSmoother {
            starts,
            spans,
            weights,
        }
    }

    pub fn apply_into(&self, values: &[f64], out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            let (off, len) = self.spans[j];
            let start = self.starts[j];
            let w = &self.weights[off..off + len];
            let v = &values[start..start + len];
            *slot = w.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }
}

/// Grid, noise quadrature and the derived smoothing operator, shared by every
/// Bellman context built on them.
#[derive(Clone, Debug)]
pub struct PlanningSpace {
    grid: Arc<StateGrid>,
    quadrature: Arc<NoiseQuadrature>,
    smoother: Arc<NoiseSmoother>,
}

impl PlanningSpace {
    pub fn new(grid: StateGrid, quadrature: NoiseQuadrature) -> Self {
        let smoother = NoiseSmoother::new(&grid, &quadrature);
        PlanningSpace {
            grid: Arc::new(grid),
            quadrature: Arc::new(quadrature),
            smoother: Arc::new(smoother),
        }
    }

    /// Grid on `[−C_x·shrink, C_x·shrink]` and a midpoint noise quadrature.
    pub fn build(c_x: f64, shrink: f64, resolution: f64, noise: &NoiseSpec, nodes: usize) -> Result<Self> {
        Ok(Self::new(
            build_grid(c_x, shrink, resolution)?,
            build_noise_quadrature(noise, nodes)?,
        ))
    }

    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    pub fn quadrature(&self) -> &NoiseQuadrature {
        &self.quadrature
    }

    pub fn smoother(&self) -> &NoiseSmoother {
        &self.smoother
    }
}
