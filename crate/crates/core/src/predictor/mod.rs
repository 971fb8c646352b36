//! Numerical predictor operator `(X, U[t-D, t]) ↦ P(θ), θ ∈ [-D, 0]`, where `P`
//! solves `P(θ) = X + ∫_{-D}^{θ} f(P(s), U(s)) ds`, so that `P(0) = X(t + D)`.

mod continuity;
mod oracle;
mod successive;

pub use continuity::{check_predictor_continuity, predictor_lipschitz_bound, ContinuityConfig, ContinuityReport};
pub use oracle::predict_dense_oracle;
pub use successive::{predict_successive, SuccessiveOutcome, SuccessiveSolver};

use thiserror::Error;

use crate::util::{all_finite, grid_steps};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("grid step {dt} does not divide the delay {delay}")]
    GridMismatch { delay: f64, dt: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered ({0})")]
    NonFinite(&'static str),
    #[error("no convergence after {iters} iterations (residual {residual:e})")]
    NonConvergence { iters: usize, residual: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Quadrature rule for the predictor integral on the history grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    #[default]
    Trapezoid,
    LeftEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Sup-norm tolerance on the fixed-point residual.
    pub tol: f64,
    pub max_iters: usize,
    pub quadrature: Quadrature,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-7, max_iters: 100, quadrature: Quadrature::Trapezoid }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if !(self.tol > 0.0) {
            return Err(PredictorError::InvalidConfig(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(PredictorError::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// The input segment `U(t + θ)`, `θ ∈ [-D, 0]`, sampled on a uniform grid of
/// `N + 1` points with `N = D / dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlHistory {
    dt: f64,
    steps: usize,
    m: usize,
    t_now: f64,
    data: Vec<f64>,
}

impl ControlHistory {
    /// `data` holds the `N + 1` control vectors at `t - D, t - D + dt, …, t`,
    /// flattened row by row.
    pub fn new(delay: f64, dt: f64, m: usize, data: Vec<f64>, t_now: f64) -> Result<Self, PredictorError> {
        let steps = grid_steps(delay, dt).ok_or(PredictorError::GridMismatch { delay, dt })?;
        if m == 0 {
            return Err(PredictorError::InvalidConfig("input dimension must be >= 1".into()));
        }
        if data.len() != (steps + 1) * m {
            return Err(PredictorError::DimensionMismatch { expected: (steps + 1) * m, got: data.len() });
        }
        if !all_finite(&data) {
            return Err(PredictorError::NonFinite("control history"));
        }
        Ok(Self { dt, steps, m, t_now, data })
    }

    /// Samples `u(θ)` at the grid offsets `θ = -D + k dt`.
    pub fn from_fn(
        delay: f64,
        dt: f64,
        m: usize,
        t_now: f64,
        mut u: impl FnMut(f64) -> Vec<f64>,
    ) -> Result<Self, PredictorError> {
        let steps = grid_steps(delay, dt).ok_or(PredictorError::GridMismatch { delay, dt })?;
        let mut data = Vec::with_capacity((steps + 1) * m);
        for k in 0..=steps {
            let v = u(-delay + k as f64 * dt);
            if v.len() != m {
                return Err(PredictorError::DimensionMismatch { expected: m, got: v.len() });
            }
            data.extend(v);
        }
        Self::new(delay, dt, m, data, t_now)
    }

    pub fn constant(delay: f64, dt: f64, value: &[f64], t_now: f64) -> Result<Self, PredictorError> {
        Self::from_fn(delay, dt, value.len(), t_now, |_| value.to_vec())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `N`, the number of grid intervals.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn points(&self) -> usize {
        self.steps + 1
    }

    pub fn delay(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn t_now(&self) -> f64 {
        self.t_now
    }

    /// Control at grid node `k` (offset `θ = -D + k dt`).
    pub fn value(&self, k: usize) -> &[f64] {
        &self.data[k * self.m..(k + 1) * self.m]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Linear interpolation at continuous grid position `s ∈ [0, N]` (in units of `dt`).
    pub fn interpolate_index(&self, s: f64, out: &mut [f64]) {
        let s = s.clamp(0.0, self.steps as f64);
        let k = (s.floor() as usize).min(self.steps - 1);
        let w = s - k as f64;
        let (a, b) = (self.value(k), self.value(k + 1));
        for i in 0..self.m {
            out[i] = a[i] + w * (b[i] - a[i]);
        }
    }

    /// Linear interpolation at offset `θ ∈ [-D, 0]`.
    pub fn interpolate(&self, theta: f64, out: &mut [f64]) {
        self.interpolate_index((theta + self.delay()) / self.dt, out);
    }

    /// Sup norm over grid nodes (the sup of the piecewise-linear interpolant).
    pub fn sup_norm(&self) -> f64 {
        (0..self.points()).map(|k| crate::util::norm2(self.value(k))).fold(0.0, f64::max)
    }

    /// Same history resampled on a grid `factor` times finer.
    pub fn refined(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let steps = self.steps * factor;
        let mut data = vec![0.0; (steps + 1) * self.m];
        for k in 0..=steps {
            self.interpolate_index(k as f64 / factor as f64, &mut data[k * self.m..(k + 1) * self.m]);
        }
        Self { dt: self.dt / factor as f64, steps, m: self.m, t_now: self.t_now, data }
    }
}

/// Predicted trajectory `P(θ)` on the history grid; `values[0] = X(t)` and the
/// last node is the `D`-ahead prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSolution {
    dt: f64,
    n: usize,
    data: Vec<f64>,
}

impl PredictorSolution {
    pub fn new(dt: f64, n: usize, data: Vec<f64>) -> Result<Self, PredictorError> {
        if n == 0 || data.is_empty() || data.len() % n != 0 {
            return Err(PredictorError::DimensionMismatch { expected: n, got: data.len() });
        }
        Ok(Self { dt, n, data })
    }

    pub(crate) fn from_parts(dt: f64, n: usize, data: Vec<f64>) -> Self {
        debug_assert!(n > 0 && data.len() % n == 0);
        Self { dt, n, data }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn value_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.n..(k + 1) * self.n]
    }

    /// `P(0)`, the prediction of `X(t + D)`.
    pub fn terminal(&self) -> &[f64] {
        self.value(self.points() - 1)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// `max_k |self(θ_k) - other(θ_k)|`.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "solutions live on different grids");
        (0..self.points()).map(|k| crate::util::dist2(self.value(k), other.value(k))).fold(0.0, f64::max)
    }
}

/// `max_θ |P(θ) - X - ∫_{-D}^{θ} f(P, U)|` under the given quadrature; zero
/// exactly at the discrete fixed point.
pub fn self_consistency_residual(
    system: &dyn crate::dynamics::System,
    x: &[f64],
    hist: &ControlHistory,
    solution: &PredictorSolution,
    quadrature: Quadrature,
) -> f64 {
    let mut next = vec![0.0; solution.as_flat().len()];
    let mut rates = vec![0.0; next.len()];
    successive::picard_map(system, x, hist, solution.as_flat(), &mut next, &mut rates, quadrature);
    let n = solution.state_dim();
    (0..solution.points())
        .map(|k| crate::util::dist2(&next[k * n..(k + 1) * n], solution.value(k)))
        .fold(0.0, f64::max)
}

pub(crate) fn check_inputs(
    system: &dyn crate::dynamics::System,
    x: &[f64],
    hist: &ControlHistory,
) -> Result<(), PredictorError> {
    let spec = system.spec();
    if x.len() != spec.n {
        return Err(PredictorError::DimensionMismatch { expected: spec.n, got: x.len() });
    }
    if hist.input_dim() != spec.m {
        return Err(PredictorError::DimensionMismatch { expected: spec.m, got: hist.input_dim() });
    }
    if !all_finite(x) {
        return Err(PredictorError::NonFinite("state"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_requires_dividing_grid() {
        assert!(matches!(
            ControlHistory::new(0.5, 0.3, 1, vec![0.0; 3], 0.0),
            Err(PredictorError::GridMismatch { .. })
        ));
        assert!(matches!(
            ControlHistory::new(0.5, 0.1, 1, vec![0.0; 5], 0.0),
            Err(PredictorError::DimensionMismatch { expected: 6, got: 5 })
        ));
        assert!(ControlHistory::new(0.5, 0.1, 1, vec![f64::NAN; 6], 0.0).is_err());
    }

    #[test]
    fn interpolation_and_refinement() {
        let h = ControlHistory::from_fn(0.5, 0.1, 1, 0.0, |th| vec![2.0 * th]).unwrap();
        let mut out = [0.0];
        h.interpolate(-0.25, &mut out);
        assert!((out[0] + 0.5).abs() < 1e-12);
        h.interpolate(0.0, &mut out);
        assert!(out[0].abs() < 1e-12);
        let fine = h.refined(4);
        assert_eq!(fine.points(), 21);
        assert!((fine.value(3)[0] - 2.0 * (-0.5 + 0.075)).abs() < 1e-12);
        assert_eq!(fine.value(20), h.value(5));
    }
}
