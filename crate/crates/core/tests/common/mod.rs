#![allow(dead_code)]

use delaycomp::dataset::{DatasetSpec, NoiseMode};
use delaycomp::predictor::ControlHistory;
use delaycomp::util::stream_rng;
use delaycomp::{LinearPlant, Manipulator, ManipulatorParams};
use rand::Rng;

pub fn linear_plant() -> LinearPlant {
    LinearPlant::scalar(1.0, 1.0, 2.0, 0.5)
}

pub fn manipulator() -> Manipulator {
    Manipulator::new(ManipulatorParams::default(), 0.5).unwrap()
}

/// Closed-form predictor of `ẋ = a x + b u` with `u` linear between the
/// history nodes, stepped segment by segment.
pub fn linear_predictor_exact(a: f64, b: f64, x: f64, hist: &ControlHistory) -> Vec<f64> {
    let h = hist.dt();
    let e = (a * h).exp();
    // ∫₀ʰ e^{a(h-s)} ds and ∫₀ʰ e^{a(h-s)} s ds
    let (i0, i1) = if a.abs() < 1e-8 {
        (h, 0.5 * h * h)
    } else {
        ((a * h).exp_m1() / a, ((a * h).exp_m1() - a * h) / (a * a))
    };
    let mut out = Vec::with_capacity(hist.points());
    let mut p = x;
    out.push(p);
    for k in 0..hist.steps() {
        let u0 = hist.value(k)[0];
        let u1 = hist.value(k + 1)[0];
        p = e * p + b * (u0 * i0 + (u1 - u0) / h * i1);
        out.push(p);
    }
    out
}

/// A few random sinusoids sampled on the history grid.
pub fn smooth_random_history(delay: f64, dt: f64, m: usize, seed: u64, amplitude: f64) -> ControlHistory {
    let mut rng = stream_rng(seed, 7);
    let modes: Vec<(f64, f64, f64)> = (0..3 * m)
        .map(|_| (rng.gen_range(-amplitude..amplitude), rng.gen_range(0.5..6.0), rng.gen_range(0.0..6.3)))
        .collect();
    ControlHistory::from_fn(delay, dt, m, 0.0, |theta| {
        (0..m)
            .map(|i| modes[3 * i..3 * i + 3].iter().map(|(c, w, ph)| c * (w * theta + ph).sin()).sum())
            .collect()
    })
    .unwrap()
}

/// Linear dataset used for the learning and determinism checks.
pub fn linear_dataset_spec() -> DatasetSpec {
    DatasetSpec {
        trajectories: 143,
        traj_length: 2.0,
        noise_mode: NoiseMode::Both,
        initial_range: (-0.5, 0.5),
        ..DatasetSpec::desk_default()
    }
}

pub fn manipulator_dataset_spec() -> DatasetSpec {
    DatasetSpec { noise_mode: NoiseMode::Both, warmup_samples: true, ..DatasetSpec::desk_default() }
}
