mod common;

use common::*;
use delaycomp::predictor::{predict_dense_oracle, predict_successive, Quadrature};
use delaycomp::{ControlHistory, LinearPlant, SolverConfig};

fn successive_error(plant: &LinearPlant, a: f64, b: f64, x: f64, hist: &ControlHistory, quadrature: Quadrature) -> f64 {
    let cfg = SolverConfig { tol: 1e-12, max_iters: 200, quadrature };
    let got = predict_successive(plant, &[x], hist, &cfg).unwrap().into_converged().unwrap().solution;
    let want = linear_predictor_exact(a, b, x, hist);
    want.iter().enumerate().map(|(k, w)| (got.value(k)[0] - w).abs()).fold(0.0, f64::max)
}

#[test]
fn integrator_of_a_constant() {
    let plant = LinearPlant::scalar(0.0, 1.0, 1.0, 0.5);
    let hist = ControlHistory::constant(0.5, 0.1, &[1.0], 0.0).unwrap();
    let out = predict_successive(&plant, &[1.0], &hist, &SolverConfig::default()).unwrap();
    assert!(out.converged);
    assert!((out.solution.terminal()[0] - 1.5).abs() < 1e-12);
}

#[test]
fn closed_form_agrees_for_several_plants() {
    for (a, b) in [(0.0, 1.0), (-0.7, 2.0), (1.0, 1.0), (1.5, -0.5)] {
        let plant = LinearPlant::scalar(a, b, 1.0, 0.5);
        for seed in 0..5 {
            let hist = smooth_random_history(0.5, 0.01, 1, seed, 2.0);
            let err = successive_error(&plant, a, b, 0.3, &hist, Quadrature::Trapezoid);
            assert!(err < 5e-5, "a={a} b={b} seed={seed}: {err:e}");
        }
    }
}

#[test]
fn trapezoid_is_second_order_and_left_euler_first() {
    let plant = linear_plant();
    let errs = |q| -> Vec<f64> {
        [0.05, 0.025, 0.0125]
            .iter()
            .map(|&dt| {
                let hist = ControlHistory::from_fn(0.5, dt, 1, 0.0, |th| vec![(3.0 * th).cos()]).unwrap();
                successive_error(&plant, 1.0, 1.0, 0.8, &hist, q)
            })
            .collect()
    };
    // the closed form is exact for the piecewise-linear input, so this is
    // the quadrature error alone
    let trap = errs(Quadrature::Trapezoid);
    let euler = errs(Quadrature::LeftEuler);
    for w in trap.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..4.5).contains(&ratio), "trapezoid ratio {ratio}");
    }
    for w in euler.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "euler ratio {ratio}");
    }
}

#[test]
fn dense_oracle_is_near_exact_for_linear_input() {
    let plant = LinearPlant::scalar(-1.3, 0.7, 1.0, 1.0);
    for seed in 0..5 {
        let hist = smooth_random_history(1.0, 0.05, 1, seed, 1.0);
        let got = predict_dense_oracle(&plant, &[-0.4], &hist, 10).unwrap();
        let want = linear_predictor_exact(-1.3, 0.7, -0.4, &hist);
        for (k, w) in want.iter().enumerate() {
            assert!((got.value(k)[0] - w).abs() < 1e-10);
        }
    }
}

#[test]
fn successive_converges_to_oracle_on_the_manipulator() {
    let arm = manipulator();
    let x = {
        let mut x = delaycomp::System::nominal_state(&arm);
        x[0] += 0.03;
        x[3] = -0.2;
        x
    };
    let cfg = SolverConfig { tol: 1e-11, max_iters: 300, ..SolverConfig::default() };
    let err = |dt: f64| {
        let hist = smooth_random_history(0.5, dt, 2, 4, 5.0);
        let got = predict_successive(&arm, &x, &hist, &cfg).unwrap().into_converged().unwrap().solution;
        got.sup_distance(&predict_dense_oracle(&arm, &x, &hist, 20).unwrap())
    };
    let (e1, e2) = (err(0.01), err(0.005));
    assert!(e1 < 5e-2 && (3.5..4.5).contains(&(e1 / e2)), "{e1:e} {e2:e}");
}
