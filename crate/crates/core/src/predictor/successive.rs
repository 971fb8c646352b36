use super::{check_inputs, ControlHistory, PredictorError, PredictorSolution, Quadrature, SolverConfig};
use crate::dynamics::System;
use crate::util::{all_finite, dist2};

/// Result of a successive-approximation solve.
///
/// When `converged` is false the solution is the iterate with the smallest
/// residual seen, so a controller can keep running on a degraded prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessiveOutcome {
    pub solution: PredictorSolution,
    /// Number of fixed-point map evaluations.
    pub iterations: usize,
    /// `max_θ |P - X - ∫ f(P, U)|` of the returned solution.
    pub residual: f64,
    pub converged: bool,
}

impl SuccessiveOutcome {
    /// Promotes a non-converged outcome into [`PredictorError::NonConvergence`].
    pub fn into_converged(self) -> Result<Self, PredictorError> {
        if self.converged {
            Ok(self)
        } else {
            Err(PredictorError::NonConvergence { iters: self.iterations, residual: self.residual })
        }
    }
}

/// One application of the Picard map `Φ(P)(θ_k) = x + ∫_{-D}^{θ_k} f(P, U)`.
///
/// `rates` receives `f(P_j, U_j)` at every node.
pub(crate) fn picard_map(
    system: &dyn System,
    x: &[f64],
    hist: &ControlHistory,
    current: &[f64],
    next: &mut [f64],
    rates: &mut [f64],
    quadrature: Quadrature,
) {
    let n = x.len();
    let points = hist.points();
    let h = hist.dt();
    for k in 0..points {
        system.rhs(&current[k * n..(k + 1) * n], hist.value(k), &mut rates[k * n..(k + 1) * n]);
    }
    next[..n].copy_from_slice(x);
    for k in 1..points {
        for i in 0..n {
            let incr = match quadrature {
                Quadrature::Trapezoid => 0.5 * h * (rates[(k - 1) * n + i] + rates[k * n + i]),
                Quadrature::LeftEuler => h * rates[(k - 1) * n + i],
            };
            next[k * n + i] = next[(k - 1) * n + i] + incr;
        }
    }
}

/// Successive-approximation predictor with reusable buffers.
#[derive(Debug, Default, Clone)]
pub struct SuccessiveSolver {
    current: Vec<f64>,
    next: Vec<f64>,
    rates: Vec<f64>,
    best: Vec<f64>,
}

impl SuccessiveSolver {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, len: usize) {
        for buf in [&mut self.current, &mut self.next, &mut self.rates, &mut self.best] {
            buf.clear();
            buf.resize(len, 0.0);
        }
    }

    fn residual(&self, n: usize, points: usize) -> f64 {
        (0..points)
            .map(|k| dist2(&self.next[k * n..(k + 1) * n], &self.current[k * n..(k + 1) * n]))
            .fold(0.0, f64::max)
    }

    /// Exactly one Picard sweep starting from the constant guess `P⁰ ≡ x`;
    /// returns the residual of that guess. Used for per-iteration timing.
    pub fn single_iteration(
        &mut self,
        system: &dyn System,
        x: &[f64],
        hist: &ControlHistory,
        quadrature: Quadrature,
    ) -> f64 {
        let n = x.len();
        let points = hist.points();
        self.prepare(n * points);
        for k in 0..points {
            self.current[k * n..(k + 1) * n].copy_from_slice(x);
        }
        picard_map(system, x, hist, &self.current, &mut self.next, &mut self.rates, quadrature);
        self.residual(n, points)
    }

    /// Iterates `P ← Φ(P)` from `P⁰ ≡ x` until `|Φ(P) - P|_∞ ≤ tol`.
    pub fn solve(
        &mut self,
        system: &dyn System,
        x: &[f64],
        hist: &ControlHistory,
        cfg: &SolverConfig,
    ) -> Result<SuccessiveOutcome, PredictorError> {
        cfg.validate()?;
        check_inputs(system, x, hist)?;
        let n = x.len();
        let points = hist.points();
        self.prepare(n * points);
        for k in 0..points {
            self.current[k * n..(k + 1) * n].copy_from_slice(x);
        }

        let mut best_residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < cfg.max_iters {
            picard_map(system, x, hist, &self.current, &mut self.next, &mut self.rates, cfg.quadrature);
            iterations += 1;
            if !all_finite(&self.next) {
                return Err(PredictorError::NonFinite("successive approximation iterate"));
            }
            let residual = self.residual(n, points);
            if residual < best_residual {
                best_residual = residual;
                self.best.copy_from_slice(&self.current);
            }
            if residual <= cfg.tol {
                break;
            }
            std::mem::swap(&mut self.current, &mut self.next);
        }
        // the anchor node is x by construction of the map; keep it bit-exact
        self.best[..n].copy_from_slice(x);
        Ok(SuccessiveOutcome {
            solution: PredictorSolution::from_parts(hist.dt(), n, self.best.clone()),
            iterations,
            residual: best_residual,
            converged: best_residual <= cfg.tol,
        })
    }
}

/// Successive-approximation (Picard) predictor.
pub fn predict_successive(
    system: &dyn System,
    x: &[f64],
    hist: &ControlHistory,
    cfg: &SolverConfig,
) -> Result<SuccessiveOutcome, PredictorError> {
    SuccessiveSolver::new().solve(system, x, hist, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearPlant;
    use crate::predictor::self_consistency_residual;

    #[test]
    fn constant_input_integrates_exactly() {
        let plant = LinearPlant::scalar(0.0, 1.0, 0.0, 0.5);
        let hist = ControlHistory::constant(0.5, 0.1, &[1.0], 0.0).unwrap();
        let out = predict_successive(&plant, &[1.0], &hist, &SolverConfig::default()).unwrap();
        assert!(out.converged);
        assert!((out.solution.terminal()[0] - 1.5).abs() < 1e-12);
        assert_eq!(out.solution.value(0), &[1.0]);
    }

    #[test]
    fn exponential_growth_within_discretization_error() {
        let plant = LinearPlant::scalar(1.0, 0.0, 0.0, 0.5);
        let hist = ControlHistory::constant(0.5, 0.01, &[0.0], 0.0).unwrap();
        let out = predict_successive(&plant, &[1.0], &hist, &SolverConfig::default()).unwrap();
        // trapezoid error ≈ D h² e^D / 12
        assert!((out.solution.terminal()[0] - 0.5f64.exp()).abs() < 1e-7 + 0.5 * 1e-4 * 1.7 / 12.0 * 1.1);
        assert!(out.residual <= 1e-7);
        let r = self_consistency_residual(&plant, &[1.0], &hist, &out.solution, Quadrature::Trapezoid);
        assert!(r <= 1e-7 * 1.0001, "{r}");
    }

    #[test]
    fn non_convergence_returns_best_iterate() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let hist = ControlHistory::constant(0.5, 0.1, &[1.0], 0.0).unwrap();
        let cfg = SolverConfig { tol: 1e-14, max_iters: 2, quadrature: Quadrature::Trapezoid };
        let out = predict_successive(&plant, &[1.0], &hist, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
        assert!(out.residual > 1e-14);
        assert_eq!(out.solution.value(0), &[1.0]);
        assert!(matches!(out.into_converged(), Err(PredictorError::NonConvergence { iters: 2, .. })));
    }

    #[test]
    fn left_euler_reaches_fixed_point_in_n_plus_one_sweeps() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let hist = ControlHistory::from_fn(0.5, 0.1, 1, 0.0, |th| vec![th.sin()]).unwrap();
        let cfg = SolverConfig { tol: 1e-15, max_iters: 50, quadrature: Quadrature::LeftEuler };
        let out = predict_successive(&plant, &[0.3], &hist, &cfg).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= hist.points() + 1);
    }

    #[test]
    fn rejects_wrong_dimensions_and_blowup() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let hist = ControlHistory::constant(0.5, 0.1, &[1.0, 2.0], 0.0).unwrap();
        assert!(matches!(
            predict_successive(&plant, &[1.0], &hist, &SolverConfig::default()),
            Err(PredictorError::DimensionMismatch { .. })
        ));
        let wild = LinearPlant::scalar(1e300, 0.0, 0.0, 0.5);
        let hist = ControlHistory::constant(0.5, 0.1, &[0.0], 0.0).unwrap();
        assert!(matches!(
            predict_successive(&wild, &[1e10], &hist, &SolverConfig::default()),
            Err(PredictorError::NonFinite(_))
        ));
    }
}
