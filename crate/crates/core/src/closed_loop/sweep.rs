use rand::Rng;

use super::{compute_metrics, run_closed_loop, LoopConfig, LoopError, PredictorHandle};
use crate::dynamics::System;
use crate::util::{mean, median, stream_rng};

/// Nominal state plus `Uniform(-half_width, half_width)` on the perturbed
/// channels (joint angles for the manipulator, every channel otherwise).
pub fn sample_initial_state(system: &dyn System, rng: &mut impl Rng, half_width: f64) -> Vec<f64> {
    let mut x = system.nominal_state();
    let k = system.perturbed_channels().min(x.len());
    if half_width > 0.0 {
        for v in &mut x[..k] {
            *v += rng.gen_range(-half_width..half_width);
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Ascending, starting at 0.
    pub eps_list: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Half-width of the initial-condition spread; 0 keeps the loop config's state.
    pub initial_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonRow {
    pub epsilon: f64,
    /// Per-trial mean tracking error over the final fifth of the horizon.
    pub residuals: Vec<f64>,
    pub median_residual: f64,
    pub mean_residual: f64,
    pub max_state_norm: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<EpsilonRow>,
}

impl SweepReport {
    /// Median residual nondecreasing in ε.
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].median_residual >= w[0].median_residual)
    }
}

/// Runs every trial at every ε with common random numbers: trial `i` uses the
/// same initial state and noise stream at each ε, so only the noise scale
/// changes along a row.
pub fn epsilon_sweep(
    system: &dyn System,
    base: &PredictorHandle,
    cfg: &LoopConfig,
    sweep: &SweepConfig,
) -> Result<SweepReport, LoopError> {
    if sweep.eps_list.first() != Some(&0.0) {
        return Err(LoopError::InvalidConfig("eps_list must start at 0".into()));
    }
    if sweep.eps_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LoopError::InvalidConfig("eps_list must be strictly ascending".into()));
    }
    let trials: Vec<(Vec<f64>, u64)> = (0..sweep.trials as u64)
        .map(|i| {
            let mut rng = stream_rng(sweep.seed, i);
            let x0 = if sweep.initial_spread > 0.0 {
                sample_initial_state(system, &mut rng, sweep.initial_spread)
            } else {
                cfg.initial_state.clone()
            };
            (x0, rng.gen())
        })
        .collect();

    let mut rows = Vec::with_capacity(sweep.eps_list.len());
    for &eps in &sweep.eps_list {
        let mut residuals = Vec::with_capacity(trials.len());
        let mut max_state_norm = 0.0_f64;
        let mut diverged = 0;
        for (x0, noise_seed) in &trials {
            let handle = PredictorHandle::perturbed(base.clone(), eps, *noise_seed);
            let trial_cfg = LoopConfig { initial_state: x0.clone(), ..cfg.clone() };
            let rec = run_closed_loop(system, &handle, &trial_cfg)?;
            if rec.meta.diverged {
                diverged += 1;
                max_state_norm = f64::INFINITY;
                residuals.push(f64::INFINITY);
                continue;
            }
            let m = compute_metrics(&rec);
            max_state_norm = max_state_norm.max(m.max_state_norm);
            residuals.push(m.asymptotic_residual);
        }
        rows.push(EpsilonRow {
            epsilon: eps,
            median_residual: median(&residuals),
            mean_residual: mean(&residuals),
            residuals,
            max_state_norm,
            diverged,
        });
    }
    Ok(SweepReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearPlant;

    #[test]
    fn rejects_list_not_starting_at_zero() {
        let plant = LinearPlant::scalar(0.0, 1.0, 2.0, 0.2);
        let cfg = LoopConfig::new(0.1, 1.0, vec![1.0]);
        let sweep = SweepConfig { eps_list: vec![0.1, 0.2], trials: 1, seed: 0, initial_spread: 0.0 };
        assert!(epsilon_sweep(&plant, &PredictorHandle::exact(), &cfg, &sweep).is_err());
    }

    #[test]
    fn residual_grows_with_noise_on_linear_plant() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.2);
        let cfg = LoopConfig::new(0.05, 6.0, vec![0.5]);
        let sweep = SweepConfig { eps_list: vec![0.0, 0.05, 0.2], trials: 3, seed: 9, initial_spread: 0.0 };
        let report = epsilon_sweep(&plant, &PredictorHandle::exact(), &cfg, &sweep).unwrap();
        assert!(report.is_monotone(), "{report:?}");
        assert!(report.rows[2].median_residual > report.rows[0].median_residual);
        assert!(report.rows.iter().all(|r| r.diverged == 0));
    }
}
