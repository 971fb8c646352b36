use super::handle::PredictorRuntime;
use super::{DelayLine, LoopError, PredictorHandle};
use crate::dynamics::System;
use crate::predictor::{ControlHistory, PredictorSolution};
use crate::util::{all_finite, dist2, grid_steps, norm2};

/// Fixed-point solve of the endpoint coupling `U(t) = κ(P̂(X(t), U[t-D, t]))`.
///
/// On the discrete grid the last history node is the input being computed,
/// so the prediction depends (weakly, through one interval) on its own output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub max_iters: usize,
    /// Relative tolerance on successive input iterates.
    pub tol: f64,
}

impl Default for Coupling {
    fn default() -> Self {
        Self { max_iters: 20, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub dt: f64,
    /// Horizon `T`; the record holds `T / dt + 1` samples.
    pub duration: f64,
    pub initial_state: Vec<f64>,
    pub integrator: Integrator,
    pub coupling: Coupling,
    /// `|X|` above this flags the run as diverged and stops it.
    pub divergence_threshold: f64,
    /// Carried into the record for provenance.
    pub config_hash: Option<String>,
}

impl LoopConfig {
    pub fn new(dt: f64, duration: f64, initial_state: Vec<f64>) -> Self {
        Self {
            dt,
            duration,
            initial_state,
            integrator: Integrator::Rk4,
            coupling: Coupling::default(),
            divergence_threshold: 1e6,
            config_hash: None,
        }
    }

    pub fn validate(&self, system: &dyn System) -> Result<(usize, usize), LoopError> {
        let delay = system.delay();
        let n_delay = grid_steps(delay, self.dt).ok_or(LoopError::GridMismatch { span: delay, dt: self.dt })?;
        let n_steps =
            grid_steps(self.duration, self.dt).ok_or(LoopError::GridMismatch { span: self.duration, dt: self.dt })?;
        if self.initial_state.len() != system.state_dim() {
            return Err(LoopError::DimensionMismatch { expected: system.state_dim(), got: self.initial_state.len() });
        }
        if !all_finite(&self.initial_state) {
            return Err(LoopError::NonFinite("initial state"));
        }
        if self.coupling.max_iters == 0 {
            return Err(LoopError::InvalidConfig("coupling.max_iters must be >= 1".into()));
        }
        Ok((n_delay, n_steps))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub system: String,
    pub predictor: String,
    pub seeds: Vec<u64>,
    pub config_hash: Option<String>,
    pub dt: f64,
    pub delay: f64,
    pub diverged: bool,
    /// Steps where the numerical predictor stopped at `max_iters`.
    pub nonconverged_steps: usize,
}

/// One closed-loop rollout sampled at `t_k = k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `U(t_k)`, the input committed at `t_k`.
    pub inputs: Vec<Vec<f64>>,
    /// `P̂(t_k)` as fed to the controller (after any perturbation).
    pub predictions: Vec<Vec<f64>>,
    /// `U(t_k - D)`, the input reaching the plant at `t_k`.
    pub delayed_inputs: Vec<Vec<f64>>,
    pub references: Vec<Vec<f64>>,
    /// `|X(t_k) - X_des(t_k)|`.
    pub tracking_error: Vec<f64>,
    /// `|X(t_k + D) - P̂(t_k)|`, defined while `t_k + D` is inside the record.
    pub prediction_error: Vec<Option<f64>>,
    /// Initial input function at `-D, …, -dt`.
    pub initial_inputs: Vec<Vec<f64>>,
    pub meta: RecordMeta,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Grid steps per delay, `N`.
    pub fn delay_steps(&self) -> usize {
        (self.meta.delay / self.meta.dt).round() as usize
    }

    /// Input at grid index `k` (negative indices read the initial function).
    pub fn input_at(&self, k: i64) -> Option<&[f64]> {
        if k >= 0 {
            self.inputs.get(k as usize).map(|v| v.as_slice())
        } else {
            let idx = self.initial_inputs.len() as i64 + k;
            (idx >= 0).then(|| self.initial_inputs[idx as usize].as_slice())
        }
    }

    /// The history `U[t_k - D, t_k]` the predictor saw at step `k`.
    pub fn history_at(&self, k: usize) -> Option<ControlHistory> {
        let steps = self.delay_steps();
        let m = self.inputs.first()?.len();
        let mut data = Vec::with_capacity((steps + 1) * m);
        for j in 0..=steps {
            data.extend_from_slice(self.input_at(k as i64 - steps as i64 + j as i64)?);
        }
        ControlHistory::new(self.meta.delay, self.meta.dt, m, data, self.times[k]).ok()
    }
}

/// What the loop saw at one step; handed to observers.
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub x: &'a [f64],
    /// History ending in the committed input `U(t)`.
    pub history: &'a ControlHistory,
    /// Unperturbed prediction from the final coupling iteration.
    pub raw_prediction: &'a PredictorSolution,
    pub input: &'a [f64],
}

/// Simulates `Ẋ = f(X, U(t - D))` with `U(t) = κ(P̂(t), t + D)`.
pub fn run_closed_loop(
    system: &dyn System,
    predictor: &PredictorHandle,
    cfg: &LoopConfig,
) -> Result<TrajectoryRecord, LoopError> {
    run_closed_loop_with(system, predictor, cfg, |_| Ok(()))
}

/// [`run_closed_loop`] with a per-step observer (used by dataset generation).
pub fn run_closed_loop_with(
    system: &dyn System,
    predictor: &PredictorHandle,
    cfg: &LoopConfig,
    mut observer: impl FnMut(&StepView<'_>) -> Result<(), LoopError>,
) -> Result<TrajectoryRecord, LoopError> {
    let (n_delay, n_steps) = cfg.validate(system)?;
    let n = system.state_dim();
    let m = system.input_dim();
    let delay = system.delay();
    let dt = cfg.dt;

    let mut line = DelayLine::zeros(delay, dt, m)?;
    let initial_inputs: Vec<Vec<f64>> =
        (-(n_delay as i64)..0).map(|k| line.node(k).expect("initial window").to_vec()).collect();
    let mut runtime = PredictorRuntime::new(predictor);

    let cap = n_steps + 1;
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        inputs: Vec::with_capacity(cap),
        predictions: Vec::with_capacity(cap),
        delayed_inputs: Vec::with_capacity(cap),
        references: Vec::with_capacity(cap),
        tracking_error: Vec::with_capacity(cap),
        prediction_error: Vec::new(),
        initial_inputs,
        meta: RecordMeta {
            system: system.name().to_string(),
            predictor: predictor.label(),
            seeds: predictor.seeds(),
            config_hash: cfg.config_hash.clone(),
            dt,
            delay,
            diverged: false,
            nonconverged_steps: 0,
        },
    };

    let mut x = cfg.initial_state.clone();
    let mut reference = vec![0.0; n];
    let mut delayed = vec![0.0; m];
    let mut u_new = vec![0.0; m];
    for k in 0..=n_steps {
        let t = k as f64 * dt;
        let noise = runtime.draw_noise(n);

        // endpoint coupling, warm-started from the previous input
        let mut u = line.latest().to_vec();
        let mut hist;
        let mut raw;
        let mut p_hat;
        let mut iters = 0;
        loop {
            hist = line.window(&u);
            raw = runtime.predict(system, &x, &hist)?;
            p_hat = raw.terminal().to_vec();
            if let Some(noise) = &noise {
                p_hat.iter_mut().zip(noise).for_each(|(p, e)| *p += e);
            }
            system.control(&p_hat, t + delay, &mut u_new);
            iters += 1;
            let change = dist2(&u_new, &u);
            std::mem::swap(&mut u, &mut u_new);
            if change <= cfg.coupling.tol * (1.0 + norm2(&u)) || iters >= cfg.coupling.max_iters {
                break;
            }
        }
        if !runtime.last_converged {
            rec.meta.nonconverged_steps += 1;
        }
        if !all_finite(&u) {
            rec.meta.diverged = true;
            break;
        }
        let hist = line.window(&u);
        observer(&StepView { step: k, t, x: &x, history: &hist, raw_prediction: &raw, input: &u })?;

        line.push(u.clone());
        line.at(t - delay, &mut delayed)?;
        system.reference(t, &mut reference);
        rec.times.push(t);
        rec.tracking_error.push(dist2(&x, &reference));
        rec.states.push(x.clone());
        rec.inputs.push(u);
        rec.predictions.push(p_hat);
        rec.delayed_inputs.push(delayed.clone());
        rec.references.push(reference.clone());

        if k == n_steps {
            break;
        }
        x = rk4_step(system, &line, &x, t, dt, delay)?;
        if !all_finite(&x) || norm2(&x) > cfg.divergence_threshold {
            rec.meta.diverged = true;
            break;
        }
    }

    let len = rec.times.len();
    rec.prediction_error = (0..len)
        .map(|k| (k + n_delay < len).then(|| dist2(&rec.states[k + n_delay], &rec.predictions[k])))
        .collect();
    Ok(rec)
}

/// One RK4 step of `Ẋ = f(X, U(τ - D))` with the delayed input read from the
/// line at the stage times.
fn rk4_step(
    system: &dyn System,
    line: &DelayLine,
    x: &[f64],
    t: f64,
    dt: f64,
    delay: f64,
) -> Result<Vec<f64>, LoopError> {
    let n = x.len();
    let m = system.input_dim();
    let (mut u0, mut um, mut u1) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    line.at(t - delay, &mut u0)?;
    line.at(t + 0.5 * dt - delay, &mut um)?;
    line.at(t + dt - delay, &mut u1)?;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    system.rhs(x, &u0, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    system.rhs(&tmp, &um, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    system.rhs(&tmp, &um, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    system.rhs(&tmp, &u1, &mut k4);
    Ok((0..n).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearPlant, Manipulator, ManipulatorParams};

    #[test]
    fn zero_dynamics_hold_the_state() {
        let plant = LinearPlant::scalar(0.0, 0.0, 3.0, 0.5);
        let rec = run_closed_loop(&plant, &PredictorHandle::successive(), &LoopConfig::new(0.1, 3.0, vec![0.7])).unwrap();
        assert!(rec.states.iter().all(|x| x[0] == 0.7));
        assert!(!rec.meta.diverged);
    }

    #[test]
    fn exact_predictor_matches_delay_free_decay() {
        let (k, d) = (2.0, 0.5);
        let plant = LinearPlant::scalar(0.0, 1.0, k, d);
        let rec = run_closed_loop(&plant, &PredictorHandle::exact(), &LoopConfig::new(0.01, 5.0 / k + d + 0.5, vec![0.1])).unwrap();
        // inputs are linear between nodes, so U(0) ramps in over the last step before D
        let k_d = (d / 0.01).round() as usize;
        let x_d = rec.states[k_d][0];
        assert!((x_d - 0.1).abs() <= k * 0.1 * 0.01);
        for (t, x) in rec.times.iter().zip(&rec.states) {
            let expected = if *t <= d - 0.01 + 1e-12 { 0.1 } else if *t >= d - 1e-12 { x_d * (-k * (t - d)).exp() } else { continue };
            // linear interpolation of the exponential input: O(k² dt² |x| / 8) per unit time
            assert!((x[0] - expected).abs() < k * k * 1e-4 * 0.1, "t={t}: {} vs {expected}", x[0]);
        }
        let k_end = ((5.0 / k + d) / 0.01).round() as usize;
        assert!(rec.states[k_end][0].abs() < 1e-3);
        // prediction lands on the state D later
        let worst = rec.prediction_error.iter().flatten().copied().fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn runs_are_deterministic_and_zero_noise_is_transparent() {
        let arm = Manipulator::new(ManipulatorParams::default(), 0.5).unwrap();
        let cfg = LoopConfig::new(0.05, 2.0, arm.nominal_state());
        let noisy = PredictorHandle::perturbed(PredictorHandle::successive(), 0.1, 7);
        let a = run_closed_loop(&arm, &noisy, &cfg).unwrap();
        let b = run_closed_loop(&arm, &noisy, &cfg).unwrap();
        assert_eq!(a.states, b.states);
        let plain = run_closed_loop(&arm, &PredictorHandle::successive(), &cfg).unwrap();
        let zero = run_closed_loop(&arm, &PredictorHandle::perturbed(PredictorHandle::successive(), 0.0, 7), &cfg).unwrap();
        assert_eq!(plain.states, zero.states);
        assert_eq!(plain.inputs, zero.inputs);
        assert_ne!(a.states, plain.states);
    }

    #[test]
    fn history_rebuild_matches_delay_line() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let rec = run_closed_loop(&plant, &PredictorHandle::exact(), &LoopConfig::new(0.1, 2.0, vec![1.0])).unwrap();
        let n = rec.delay_steps();
        assert_eq!(n, 5);
        let h = rec.history_at(7).unwrap();
        for j in 0..=n {
            assert_eq!(h.value(j), rec.input_at(7 + j as i64 - n as i64).unwrap());
        }
        assert_eq!(rec.input_at(-1).unwrap(), &[0.0]);
    }

    #[test]
    fn non_dividing_step_is_rejected() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let err = run_closed_loop(&plant, &PredictorHandle::exact(), &LoopConfig::new(0.3, 2.0, vec![1.0]));
        assert!(matches!(err, Err(LoopError::GridMismatch { .. })));
    }

    #[test]
    fn unstable_open_loop_is_flagged() {
        let plant = LinearPlant::scalar(5.0, 0.0, 0.0, 0.5);
        let rec = run_closed_loop(&plant, &PredictorHandle::exact(), &LoopConfig::new(0.1, 10.0, vec![1.0])).unwrap();
        assert!(rec.meta.diverged);
    }
}
