use rand::Rng;

use super::{predict_dense_oracle, ControlHistory, PredictorError};
use crate::dynamics::System;
use crate::util::{dist2, stream_rng, Bounds};

/// `C_P = max(1, D C_f) e^{D C_f}`, the Lipschitz constant of the predictor
/// operator in `|X₁-X₂| + ‖U₁-U₂‖_∞`.
pub fn predictor_lipschitz_bound(cf: f64, delay: f64) -> f64 {
    let dc = delay * cf;
    dc.max(1.0) * dc.exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityConfig {
    pub pairs: usize,
    /// History grid step; must divide the system delay.
    pub dt: f64,
    /// Oracle sub-step refinement.
    pub refine: usize,
    pub seed: u64,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self { pairs: 500, dt: 0.1, refine: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    /// Largest `‖P₁-P₂‖_∞ / (|X₁-X₂| + ‖U₁-U₂‖_∞)` over the sampled pairs.
    pub max_ratio: f64,
    pub c_p: f64,
    pub cf: f64,
    /// Pairs with a nonzero denominator.
    pub evaluated: usize,
    pub violations: usize,
    pub pass: bool,
}

/// Empirical audit of the predictor Lipschitz bound.
///
/// Pairs alternate between independent draws over the boxes and small local
/// perturbations of the first draw. Identical pairs have ratio 0 by
/// convention and are skipped.
pub fn check_predictor_continuity(
    system: &dyn System,
    cfg: &ContinuityConfig,
    box_x: &Bounds,
    box_u: &Bounds,
    cf: f64,
) -> Result<ContinuityReport, PredictorError> {
    let delay = system.delay();
    let m = system.input_dim();
    let c_p = predictor_lipschitz_bound(cf, delay);
    let steps = crate::util::grid_steps(delay, cfg.dt).ok_or(PredictorError::GridMismatch { delay, dt: cfg.dt })?;
    let points = steps + 1;
    let mut rng = stream_rng(cfg.seed, 1);
    let wx = box_x.widths();
    let wu = box_u.widths();

    let mut max_ratio = 0.0_f64;
    let mut evaluated = 0;
    let mut violations = 0;
    for i in 0..cfg.pairs {
        let x1 = box_x.sample(&mut rng);
        let u1: Vec<f64> = (0..points).flat_map(|_| box_u.sample(&mut rng)).collect();
        let (x2, u2): (Vec<f64>, Vec<f64>) = if i % 2 == 0 {
            (box_x.sample(&mut rng), (0..points).flat_map(|_| box_u.sample(&mut rng)).collect())
        } else {
            let scale = 10f64.powf(rng.gen_range(-4.0..-1.0));
            let x2 = x1.iter().zip(&wx).map(|(v, w)| v + scale * w * rng.gen_range(-1.0..=1.0)).collect();
            let u2 = u1
                .iter()
                .enumerate()
                .map(|(j, v)| v + scale * wu[j % m] * rng.gen_range(-1.0..=1.0))
                .collect();
            (x2, u2)
        };

        let dx = dist2(&x1, &x2);
        let du = (0..points).map(|k| dist2(&u1[k * m..(k + 1) * m], &u2[k * m..(k + 1) * m])).fold(0.0, f64::max);
        if dx + du == 0.0 {
            continue;
        }
        let h1 = ControlHistory::new(delay, cfg.dt, m, u1, 0.0)?;
        let h2 = ControlHistory::new(delay, cfg.dt, m, u2, 0.0)?;
        let p1 = predict_dense_oracle(system, &x1, &h1, cfg.refine)?;
        let p2 = predict_dense_oracle(system, &x2, &h2, cfg.refine)?;
        let ratio = p1.sup_distance(&p2) / (dx + du);
        evaluated += 1;
        if ratio > c_p {
            violations += 1;
        }
        max_ratio = max_ratio.max(ratio);
    }
    Ok(ContinuityReport { max_ratio, c_p, cf, evaluated, violations, pass: violations == 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearPlant;

    #[test]
    fn closed_form_values() {
        assert!((predictor_lipschitz_bound(1.0, 0.5) - 0.5f64.exp()).abs() < 1e-15);
        assert_eq!(predictor_lipschitz_bound(0.0, 0.7), 1.0);
        assert!((predictor_lipschitz_bound(2.0, 1.0) - 2.0 * 2f64.exp()).abs() < 1e-12);
        assert!((predictor_lipschitz_bound(2.0, 1.0) - 14.778).abs() < 1e-3);
    }

    #[test]
    fn identical_pairs_are_ignored() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        // zero-width boxes collapse every pair onto a single point
        let bx = Bounds::new(vec![0.3], vec![0.3]);
        let bu = Bounds::new(vec![0.1], vec![0.1]);
        let cfg = ContinuityConfig { pairs: 4, ..Default::default() };
        let report = check_predictor_continuity(&plant, &cfg, &bx, &bu, 1.0).unwrap();
        assert_eq!(report.evaluated, 0);
        assert_eq!(report.max_ratio, 0.0);
        assert!(report.pass);
    }
}
