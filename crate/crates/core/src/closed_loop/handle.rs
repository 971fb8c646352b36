use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::LoopError;
use crate::dynamics::System;
use crate::neural::NnoModel;
use crate::predictor::{predict_dense_oracle, ControlHistory, PredictorSolution, SolverConfig, SuccessiveSolver};
use crate::util::stream_rng;

/// Which predictor drives the loop.
#[derive(Debug, Clone)]
pub enum PredictorHandle {
    /// Dense RK4 integration of the predictor ODE at `dt / refine`.
    ExactOracle { refine: usize },
    /// Successive approximations.
    Successive(SolverConfig),
    /// Trained neural operator.
    Neural(Arc<NnoModel>),
    /// Wraps another predictor and adds i.i.d. `Uniform(lo, hi)` noise to
    /// every channel of the `D`-ahead prediction, drawn once per step.
    Perturbed { inner: Box<PredictorHandle>, lo: f64, hi: f64, seed: u64 },
}

impl PredictorHandle {
    /// `Uniform(-ε, ε)` perturbation of `inner`.
    pub fn perturbed(inner: PredictorHandle, epsilon: f64, seed: u64) -> Self {
        Self::Perturbed { inner: Box::new(inner), lo: -epsilon, hi: epsilon, seed }
    }

    pub fn successive() -> Self {
        Self::Successive(SolverConfig::default())
    }

    pub fn exact() -> Self {
        Self::ExactOracle { refine: 10 }
    }

    pub fn label(&self) -> String {
        match self {
            Self::ExactOracle { refine } => format!("exact(refine={refine})"),
            Self::Successive(cfg) => format!("successive(tol={:e},{:?})", cfg.tol, cfg.quadrature),
            Self::Neural(model) => format!("neural(d_c={},L={})", model.config().channels, model.config().layers),
            Self::Perturbed { inner, lo, hi, seed } => {
                format!("perturbed({},[{lo},{hi}],seed={seed})", inner.label())
            }
        }
    }

    /// Seeds of all perturbation layers, outermost first.
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Self::Perturbed { inner, seed, .. } => {
                let mut s = vec![*seed];
                s.extend(inner.seeds());
                s
            }
            _ => Vec::new(),
        }
    }
}

enum Base {
    Exact(usize),
    Successive(SolverConfig, SuccessiveSolver),
    Neural(Arc<NnoModel>),
}

struct NoiseLayer {
    lo: f64,
    hi: f64,
    rng: ChaCha8Rng,
}

/// Per-run state behind a [`PredictorHandle`].
pub(crate) struct PredictorRuntime {
    base: Base,
    noise: Vec<NoiseLayer>,
    /// Whether the most recent numerical solve met its tolerance.
    pub(crate) last_converged: bool,
}

impl PredictorRuntime {
    pub(crate) fn new(handle: &PredictorHandle) -> Self {
        let mut noise = Vec::new();
        let mut h = handle;
        while let PredictorHandle::Perturbed { inner, lo, hi, seed } = h {
            noise.push(NoiseLayer { lo: *lo, hi: *hi, rng: stream_rng(*seed, 0) });
            h = inner;
        }
        let base = match h {
            PredictorHandle::ExactOracle { refine } => Base::Exact(*refine),
            PredictorHandle::Successive(cfg) => Base::Successive(*cfg, SuccessiveSolver::new()),
            PredictorHandle::Neural(model) => Base::Neural(Arc::clone(model)),
            PredictorHandle::Perturbed { .. } => unreachable!("unwrapped above"),
        };
        Self { base, noise, last_converged: true }
    }

    /// Noise to add to the `D`-ahead prediction at this step; `None` when no
    /// layer perturbs (or every layer is the degenerate `[0, 0]`).
    pub(crate) fn draw_noise(&mut self, n: usize) -> Option<Vec<f64>> {
        if self.noise.is_empty() {
            return None;
        }
        let mut total = vec![0.0; n];
        let mut any = false;
        for layer in &mut self.noise {
            if layer.lo == layer.hi {
                if layer.lo != 0.0 {
                    total.iter_mut().for_each(|v| *v += layer.lo);
                    any = true;
                }
                continue;
            }
            for v in total.iter_mut() {
                *v += layer.rng.gen_range(layer.lo..layer.hi);
            }
            any = true;
        }
        any.then_some(total)
    }

    /// Unperturbed prediction from the base predictor.
    pub(crate) fn predict(
        &mut self,
        system: &dyn System,
        x: &[f64],
        hist: &ControlHistory,
    ) -> Result<PredictorSolution, LoopError> {
        match &mut self.base {
            Base::Exact(refine) => Ok(predict_dense_oracle(system, x, hist, *refine)?),
            Base::Successive(cfg, solver) => {
                let out = solver.solve(system, x, hist, cfg)?;
                self.last_converged = out.converged;
                Ok(out.solution)
            }
            Base::Neural(model) => Ok(crate::neural::nno_predict(model, x, hist)?),
        }
    }
}
