use super::{check_inputs, ControlHistory, PredictorError, PredictorSolution};
use crate::dynamics::System;
use crate::util::all_finite;

/// Reference predictor: integrates `Ṗ = f(P, U(θ))` forward from `P(-D) = x`
/// with classical RK4 at step `dt / refine`, reading `U` by linear
/// interpolation of the history, and reports the coarse grid nodes.
///
/// Independent of the fixed-point machinery; meant for tests and audits.
pub fn predict_dense_oracle(
    system: &dyn System,
    x: &[f64],
    hist: &ControlHistory,
    refine: usize,
) -> Result<PredictorSolution, PredictorError> {
    check_inputs(system, x, hist)?;
    if refine == 0 {
        return Err(PredictorError::InvalidConfig("refine must be >= 1".into()));
    }
    let n = x.len();
    let m = hist.input_dim();
    let steps = hist.steps();
    let h = hist.dt() / refine as f64;
    let inv = 1.0 / refine as f64;

    let mut out = Vec::with_capacity((steps + 1) * n);
    out.extend_from_slice(x);
    let mut p = x.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let (mut u0, mut um, mut u1) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);

    for coarse in 0..steps {
        for sub in 0..refine {
            let s0 = coarse as f64 + sub as f64 * inv;
            hist.interpolate_index(s0, &mut u0);
            hist.interpolate_index(s0 + 0.5 * inv, &mut um);
            hist.interpolate_index(s0 + inv, &mut u1);

            system.rhs(&p, &u0, &mut k1);
            for i in 0..n {
                tmp[i] = p[i] + 0.5 * h * k1[i];
            }
            system.rhs(&tmp, &um, &mut k2);
            for i in 0..n {
                tmp[i] = p[i] + 0.5 * h * k2[i];
            }
            system.rhs(&tmp, &um, &mut k3);
            for i in 0..n {
                tmp[i] = p[i] + h * k3[i];
            }
            system.rhs(&tmp, &u1, &mut k4);
            for i in 0..n {
                p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if !all_finite(&p) {
            return Err(PredictorError::NonFinite("dense oracle trajectory"));
        }
        out.extend_from_slice(&p);
    }
    Ok(PredictorSolution::from_parts(hist.dt(), n, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearPlant;

    #[test]
    fn exponential_matches_analytic_value() {
        let plant = LinearPlant::scalar(1.0, 0.0, 0.0, 0.5);
        let hist = ControlHistory::constant(0.5, 0.1, &[0.0], 0.0).unwrap();
        let sol = predict_dense_oracle(&plant, &[1.0], &hist, 100).unwrap();
        assert!((sol.terminal()[0] - 0.5f64.exp()).abs() < 1e-9);
        assert_eq!(sol.value(0), &[1.0]);
    }

    #[test]
    fn zero_dynamics_keep_state() {
        let plant = LinearPlant::scalar(0.0, 0.0, 0.0, 0.5);
        let hist = ControlHistory::from_fn(0.5, 0.1, 1, 0.0, |th| vec![th * 3.0]).unwrap();
        let sol = predict_dense_oracle(&plant, &[2.5], &hist, 3).unwrap();
        for k in 0..sol.points() {
            assert_eq!(sol.value(k), &[2.5]);
        }
    }

    #[test]
    fn refine_zero_rejected() {
        let plant = LinearPlant::scalar(0.0, 0.0, 0.0, 0.5);
        let hist = ControlHistory::constant(0.5, 0.1, &[0.0], 0.0).unwrap();
        assert!(predict_dense_oracle(&plant, &[0.0], &hist, 0).is_err());
    }
}
