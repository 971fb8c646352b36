//! Transport-PDE view of the delay line and the backstepping transform.
//!
//! The delayed input is `u(x, t) = U(t + x - D)`, `x ∈ [0, D]`, which obeys
//! `u_t = u_x` with `u(D, t) = U(t)`. With `p` solving
//! `p(x) = X(t) + ∫₀ˣ f(p, u) dξ` the transform `w = u - κ(p)` maps the
//! loop into a cascade whose boundary `w(D, t)` is the controller mismatch
//! caused by the predictor; it vanishes for the exact predictor.
//!
//! Note the sign: with `w = u - κ(p)` and `U = κ(P̂)`, the boundary is
//! `κ(P̂) - κ(P)`.

use std::io::Write;

use crate::closed_loop::TrajectoryRecord;
use crate::dynamics::System;
use crate::predictor::{ControlHistory, PredictorError, PredictorSolution};
use crate::util::{all_finite, dist2, norm2};

/// Values on the nodes `x_k = k D / N`, `k = 0..=N`, at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub dx: f64,
    pub t: f64,
    pub dim: usize,
    data: Vec<f64>,
}

/// `u(x_k, t) = U(t + x_k - D)`.
pub type TransportState = NodeField;
/// `w(x_k, t)`.
pub type TargetState = NodeField;

impl NodeField {
    pub fn new(dx: f64, t: f64, dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && !data.is_empty() && data.len() % dim == 0, "field data must fill whole nodes");
        Self { dx, t, dim, data }
    }

    /// The delay line at time `t` as a transport state: node `k` holds the
    /// history value at `θ = x_k - D`.
    pub fn from_history(hist: &ControlHistory) -> Self {
        Self::new(hist.dt(), hist.t_now(), hist.input_dim(), hist.as_flat().to_vec())
    }

    pub fn zeros(dx: f64, t: f64, dim: usize, nodes: usize) -> Self {
        Self::new(dx, t, dim, vec![0.0; dim * nodes])
    }

    pub fn nodes(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn steps(&self) -> usize {
        self.nodes() - 1
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn value_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// `max_k |v(x_k)|`.
    pub fn sup_norm(&self) -> f64 {
        weighted_sup_norm(self, 0.0)
    }

    fn interpolate_index(&self, s: f64, out: &mut [f64]) {
        let s = s.clamp(0.0, self.steps() as f64);
        let k = (s.floor() as usize).min(self.steps() - 1);
        let w = s - k as f64;
        let (a, b) = (self.value(k), self.value(k + 1));
        for i in 0..self.dim {
            out[i] = a[i] + w * (b[i] - a[i]);
        }
    }
}

/// `max_k e^{c x_k} |w(x_k)|`.
pub fn weighted_sup_norm(w: &NodeField, c: f64) -> f64 {
    (0..w.nodes()).map(|k| (c * k as f64 * w.dx).exp() * norm2(w.value(k))).fold(0.0, f64::max)
}

/// How the `x`-integral equations are marched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum March {
    /// Implicit trapezoid steps on the node grid, the same discrete scheme as
    /// the successive-approximation predictor. Exactly invertible.
    Trapezoid,
    /// RK4 at `dx / refine` with linear interpolation between nodes; matches
    /// the dense oracle predictor.
    Rk4 { refine: usize },
}

impl Default for March {
    fn default() -> Self {
        Self::Rk4 { refine: 10 }
    }
}

const LOCAL_TOL: f64 = 1e-15;
const LOCAL_MAX_ITERS: usize = 200;

/// Marches `y' = f(y, input(s, y))` from `y(0) = x` over `steps` nodes, with
/// `s` the fractional node index.
fn march(
    system: &dyn System,
    x: &[f64],
    steps: usize,
    dx: f64,
    scheme: March,
    mut input: impl FnMut(f64, &[f64], &mut [f64]),
) -> Result<PredictorSolution, PredictorError> {
    let n = x.len();
    let m = system.input_dim();
    if n != system.state_dim() {
        return Err(PredictorError::DimensionMismatch { expected: system.state_dim(), got: n });
    }
    if !all_finite(x) {
        return Err(PredictorError::NonFinite("state"));
    }
    let mut out = Vec::with_capacity((steps + 1) * n);
    out.extend_from_slice(x);
    let mut y = x.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let (mut u0, mut um, mut u1) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    match scheme {
        March::Trapezoid => {
            input(0.0, &y, &mut u0);
            system.rhs(&y, &u0, &mut k1);
            let mut next = vec![0.0; n];
            for j in 0..steps {
                for i in 0..n {
                    next[i] = y[i] + dx * k1[i];
                }
                let mut converged = false;
                for _ in 0..LOCAL_MAX_ITERS {
                    input((j + 1) as f64, &next, &mut u1);
                    system.rhs(&next, &u1, &mut k2);
                    let mut change = 0.0_f64;
                    for i in 0..n {
                        let v = y[i] + 0.5 * dx * (k1[i] + k2[i]);
                        change = change.max((v - next[i]).abs() / (1.0 + v.abs()));
                        next[i] = v;
                    }
                    if !change.is_finite() {
                        return Err(PredictorError::NonFinite("transport march"));
                    }
                    if change <= LOCAL_TOL {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(PredictorError::NonConvergence { iters: LOCAL_MAX_ITERS, residual: f64::NAN });
                }
                input((j + 1) as f64, &next, &mut u1);
                system.rhs(&next, &u1, &mut k1);
                y.copy_from_slice(&next);
                out.extend_from_slice(&y);
            }
        }
        March::Rk4 { refine } => {
            if refine == 0 {
                return Err(PredictorError::InvalidConfig("refine must be >= 1".into()));
            }
            let h = dx / refine as f64;
            let inv = 1.0 / refine as f64;
            for coarse in 0..steps {
                for sub in 0..refine {
                    let s0 = coarse as f64 + sub as f64 * inv;
                    input(s0, &y, &mut u0);
                    system.rhs(&y, &u0, &mut k1);
                    for i in 0..n {
                        tmp[i] = y[i] + 0.5 * h * k1[i];
                    }
                    input(s0 + 0.5 * inv, &tmp, &mut um);
                    system.rhs(&tmp, &um, &mut k2);
                    for i in 0..n {
                        tmp[i] = y[i] + 0.5 * h * k2[i];
                    }
                    input(s0 + 0.5 * inv, &tmp, &mut um);
                    system.rhs(&tmp, &um, &mut k3);
                    for i in 0..n {
                        tmp[i] = y[i] + h * k3[i];
                    }
                    input(s0 + inv, &tmp, &mut u1);
                    system.rhs(&tmp, &u1, &mut k4);
                    for i in 0..n {
                        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
                if !all_finite(&y) {
                    return Err(PredictorError::NonFinite("transport march"));
                }
                out.extend_from_slice(&y);
            }
        }
    }
    Ok(PredictorSolution::from_parts(dx, n, out))
}

/// `p(x, t) = X(t) + ∫₀ˣ f(p, u) dξ` on the nodes of `u`.
pub fn solve_p(system: &dyn System, x: &[f64], u: &TransportState, scheme: March) -> Result<PredictorSolution, PredictorError> {
    if u.dim != system.input_dim() {
        return Err(PredictorError::DimensionMismatch { expected: system.input_dim(), got: u.dim });
    }
    march(system, x, u.steps(), u.dx, scheme, |s, _, out| u.interpolate_index(s, out))
}

/// `π(x, t) = X(t) + ∫₀ˣ f(π, κ(π) + w) dξ`, with κ at time `t + ξ`.
pub fn solve_pi(system: &dyn System, x: &[f64], w: &TargetState, scheme: March) -> Result<PredictorSolution, PredictorError> {
    if w.dim != system.input_dim() {
        return Err(PredictorError::DimensionMismatch { expected: system.input_dim(), got: w.dim });
    }
    let mut wv = vec![0.0; w.dim];
    march(system, x, w.steps(), w.dx, scheme, |s, state, out| {
        system.control(state, w.t + s * w.dx, out);
        w.interpolate_index(s, &mut wv);
        out.iter_mut().zip(&wv).for_each(|(o, v)| *o += v);
    })
}

/// `w(x_k) = u(x_k) - κ(p(x_k), t + x_k)`.
pub fn forward_transform(system: &dyn System, u: &TransportState, p: &PredictorSolution) -> TargetState {
    assert_eq!(u.nodes(), p.points(), "transport state and p live on different grids");
    let mut w = u.clone();
    let mut k = vec![0.0; u.dim];
    for j in 0..u.nodes() {
        system.control(p.value(j), u.t + j as f64 * u.dx, &mut k);
        w.value_mut(j).iter_mut().zip(&k).for_each(|(v, kj)| *v -= kj);
    }
    w
}

/// `u(x_k) = w(x_k) + κ(π(x_k), t + x_k)`.
pub fn inverse_transform(system: &dyn System, w: &TargetState, pi: &PredictorSolution) -> TransportState {
    assert_eq!(w.nodes(), pi.points(), "target state and π live on different grids");
    let mut u = w.clone();
    let mut k = vec![0.0; w.dim];
    for j in 0..w.nodes() {
        system.control(pi.value(j), w.t + j as f64 * w.dx, &mut k);
        u.value_mut(j).iter_mut().zip(&k).for_each(|(v, kj)| *v += kj);
    }
    u
}

/// The target system reconstructed along a closed-loop record.
#[derive(Debug, Clone)]
pub struct TargetTrajectory {
    pub times: Vec<f64>,
    pub delay: f64,
    /// `w(·, t_k)` at every recorded step.
    pub w: Vec<TargetState>,
    /// `|κ(P̂(t_k)) - κ(P(t_k))|`, `P` the exact predictor from the record.
    pub perturbation: Vec<f64>,
    /// `|w(D, t_k) - (κ(P̂) - κ(P))|`.
    pub boundary_residual: Vec<f64>,
}

impl TargetTrajectory {
    pub fn from_record(record: &TrajectoryRecord, system: &dyn System, scheme: March) -> Result<Self, PredictorError> {
        let delay = record.meta.delay;
        let m = system.input_dim();
        let mut out = Self {
            times: Vec::with_capacity(record.len()),
            delay,
            w: Vec::with_capacity(record.len()),
            perturbation: Vec::with_capacity(record.len()),
            boundary_residual: Vec::with_capacity(record.len()),
        };
        let (mut k_hat, mut k_true) = (vec![0.0; m], vec![0.0; m]);
        for k in 0..record.len() {
            let hist = record
                .history_at(k)
                .ok_or(PredictorError::InvalidConfig(format!("record cannot rebuild history at step {k}")))?;
            let u = TransportState::from_history(&hist);
            let p = solve_p(system, &record.states[k], &u, scheme)?;
            let w = forward_transform(system, &u, &p);
            let t_ahead = record.times[k] + delay;
            system.control(&record.predictions[k], t_ahead, &mut k_hat);
            system.control(p.terminal(), t_ahead, &mut k_true);
            let mismatch: Vec<f64> = k_hat.iter().zip(&k_true).map(|(a, b)| a - b).collect();
            out.perturbation.push(norm2(&mismatch));
            out.boundary_residual.push(dist2(w.value(w.steps()), &mismatch));
            out.times.push(record.times[k]);
            out.w.push(w);
        }
        Ok(out)
    }

    /// `max_t |w(D, t)|`.
    pub fn max_boundary(&self) -> f64 {
        self.w.iter().map(|w| norm2(w.value(w.steps()))).fold(0.0, f64::max)
    }

    /// `max_{t ≥ from} ‖w(t)‖_∞`.
    pub fn max_sup_after(&self, from: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.w)
            .filter(|(t, _)| **t >= from - 1e-9)
            .map(|(_, w)| w.sup_norm())
            .fold(0.0, f64::max)
    }

    /// Finite-difference residual of `w_t = w_x` at interior nodes.
    pub fn transport_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for k in 0..self.w.len().saturating_sub(1) {
            let (now, next) = (&self.w[k], &self.w[k + 1]);
            let dt = self.times[k + 1] - self.times[k];
            for j in 0..now.steps() {
                for i in 0..now.dim {
                    let wt = (next.value(j)[i] - now.value(j)[i]) / dt;
                    let wx = (now.value(j + 1)[i] - now.value(j)[i]) / now.dx;
                    worst = worst.max((wt - wx).abs());
                }
            }
        }
        worst
    }

    /// Both sides of `‖w(t)‖_∞ ≤ e^{c(D-t)}‖w(0)‖_∞ + e^{cD} sup_{s≤t} |κ(P(s)) - κ(P̂(s))|`.
    pub fn iss_bound(&self, c: f64, slack: f64) -> IssReport {
        let w0 = self.w.first().map_or(0.0, NodeField::sup_norm);
        let gain = (c * self.delay).exp();
        let mut sup_pert = 0.0_f64;
        let mut lhs = Vec::with_capacity(self.w.len());
        let mut rhs = Vec::with_capacity(self.w.len());
        for (k, w) in self.w.iter().enumerate() {
            sup_pert = sup_pert.max(self.perturbation[k]);
            lhs.push(w.sup_norm());
            rhs.push((c * (self.delay - self.times[k])).exp() * w0 + gain * sup_pert);
        }
        let violations = lhs.iter().zip(&rhs).filter(|(l, r)| **l > **r + slack).count();
        IssReport { c, slack, times: self.times.clone(), lhs, rhs, violations }
    }

    pub fn target_report(&self, slack: f64) -> TargetReport {
        let max_residual = self.boundary_residual.iter().copied().fold(0.0, f64::max);
        TargetReport {
            slack,
            max_boundary: self.max_boundary(),
            max_residual,
            max_perturbation: self.perturbation.iter().copied().fold(0.0, f64::max),
            transport_residual: self.transport_residual(),
            pass: max_residual <= slack,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IssReport {
    pub c: f64,
    pub slack: f64,
    pub times: Vec<f64>,
    /// `‖w(t)‖_∞`.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub violations: usize,
}

impl IssReport {
    /// `rhs + slack - lhs`; negative entries are violations.
    pub fn margins(&self) -> Vec<f64> {
        self.lhs.iter().zip(&self.rhs).map(|(l, r)| r + self.slack - l).collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# c={} slack={:e} violations={}", self.c, self.slack, self.violations)?;
        writeln!(out, "t,w_sup,bound,margin")?;
        for ((t, l), (r, m)) in self.times.iter().zip(&self.lhs).zip(self.rhs.iter().zip(self.margins())) {
            writeln!(out, "{t},{l:e},{r:e},{m:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetReport {
    pub slack: f64,
    /// `max_t |w(D, t)|`.
    pub max_boundary: f64,
    /// `max_t |w(D, t) - (κ(P̂) - κ(P))|`.
    pub max_residual: f64,
    pub max_perturbation: f64,
    /// `max |w_t - w_x|` by finite differences.
    pub transport_residual: f64,
    pub pass: bool,
}

/// Lemma-4 style audit of one record.
pub fn check_iss_bound(
    record: &TrajectoryRecord,
    system: &dyn System,
    c: f64,
    slack: f64,
) -> Result<IssReport, PredictorError> {
    Ok(TargetTrajectory::from_record(record, system, March::default())?.iss_bound(c, slack))
}

/// Boundary audit `w(D, t) = κ(P̂) - κ(P)` of one record.
pub fn check_target_system(record: &TrajectoryRecord, system: &dyn System, slack: f64) -> Result<TargetReport, PredictorError> {
    Ok(TargetTrajectory::from_record(record, system, March::default())?.target_report(slack))
}

/// Discretization slack from an exact-predictor record: ten times the
/// largest `‖w(t)‖_∞` after the initial input has flushed out, floored at 1e-9.
pub fn calibrate_slack(exact_record: &TrajectoryRecord, system: &dyn System) -> Result<f64, PredictorError> {
    let traj = TargetTrajectory::from_record(exact_record, system, March::default())?;
    Ok((10.0 * traj.max_sup_after(traj.delay)).max(1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_loop::{run_closed_loop, LoopConfig, PredictorHandle};
    use crate::dynamics::{LinearPlant, Manipulator, ManipulatorParams};
    use crate::predictor::predict_dense_oracle;

    fn field(dx: f64, values: &[f64]) -> NodeField {
        NodeField::new(dx, 0.0, 1, values.to_vec())
    }

    #[test]
    fn weighted_norm_values() {
        let w = field(0.1, &[1.0; 6]);
        assert!((weighted_sup_norm(&w, 1.0) - 0.5f64.exp()).abs() < 1e-12);
        let v = field(0.1, &[0.0, -3.0, 2.0, 1.0, 0.0, 0.5]);
        assert_eq!(weighted_sup_norm(&v, 0.0), 3.0);
        let c = 2.0;
        let wn = weighted_sup_norm(&v, c);
        assert!(v.sup_norm() <= wn && wn <= (c * 0.5).exp() * v.sup_norm());
    }

    #[test]
    fn p_with_zero_dynamics_is_constant() {
        let plant = LinearPlant::scalar(0.0, 0.0, 1.0, 0.5);
        let u = field(0.1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        for scheme in [March::Trapezoid, March::default()] {
            let p = solve_p(&plant, &[2.5], &u, scheme).unwrap();
            assert!(p.as_flat().iter().all(|v| *v == 2.5));
        }
    }

    #[test]
    fn p_growth_matches_exponential() {
        let plant = LinearPlant::scalar(1.0, 0.0, 0.0, 0.5);
        let u = field(0.01, &[0.0; 51]);
        let p = solve_p(&plant, &[1.0], &u, March::Trapezoid).unwrap();
        assert_eq!(p.value(0), &[1.0]);
        // trapezoid local error dx³/12 per step
        assert!((p.terminal()[0] - 0.5f64.exp()).abs() < 0.5 * 0.5f64.exp() * 0.01f64.powi(2));
    }

    #[test]
    fn rk4_march_reproduces_dense_oracle() {
        let arm = Manipulator::new(ManipulatorParams::default(), 0.5).unwrap();
        let hist = ControlHistory::from_fn(0.5, 0.1, 2, 1.0, |th| vec![3.0 * th.sin(), 1.0 + th]).unwrap();
        let x = [0.1, -0.5, 0.2, 0.0];
        let p = solve_p(&arm, &x, &TransportState::from_history(&hist), March::Rk4 { refine: 10 }).unwrap();
        let o = predict_dense_oracle(&arm, &x, &hist, 10).unwrap();
        assert_eq!(p.as_flat(), o.as_flat());
    }

    #[test]
    fn pi_with_zero_target_is_closed_loop_flow() {
        let (a, b, k) = (0.5, 1.0, 2.0);
        let plant = LinearPlant::scalar(a, b, k, 0.5);
        let w = field(0.05, &[0.0; 11]);
        let pi = solve_pi(&plant, &[1.3], &w, March::Rk4 { refine: 10 }).unwrap();
        for j in 0..=10 {
            let exact = ((a - b * k) * 0.05 * j as f64).exp() * 1.3;
            assert!((pi.value(j)[0] - exact).abs() < 1e-10);
        }
        assert_eq!(pi.value(0), &[1.3]);
    }

    #[test]
    fn zero_state_and_target_give_zero_input() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let w = field(0.1, &[0.0; 6]);
        let pi = solve_pi(&plant, &[0.0], &w, March::Trapezoid).unwrap();
        let u = inverse_transform(&plant, &w, &pi);
        assert!(u.as_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn transform_round_trip() {
        let arm = Manipulator::new(ManipulatorParams::default(), 0.5).unwrap();
        let hist = ControlHistory::from_fn(0.5, 0.05, 2, 2.0, |th| vec![5.0 + th.cos(), -3.0 * th]).unwrap();
        let x = [0.05, -0.6, 0.1, -0.2];
        let u = TransportState::from_history(&hist);
        let p = solve_p(&arm, &x, &u, March::Trapezoid).unwrap();
        let w = forward_transform(&arm, &u, &p);
        let pi = solve_pi(&arm, &x, &w, March::Trapezoid).unwrap();
        let back = inverse_transform(&arm, &w, &pi);
        let err = u.as_flat().iter().zip(back.as_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "{err}");
        // u = κ(p) pointwise gives w ≡ 0
        let u_ctrl = inverse_transform(&arm, &NodeField::zeros(0.05, 2.0, 2, u.nodes()), &p);
        let w0 = forward_transform(&arm, &u_ctrl, &p);
        assert!(w0.sup_norm() == 0.0);
    }

    #[test]
    fn exact_loop_has_flat_target_after_delay() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let rec = run_closed_loop(&plant, &PredictorHandle::exact(), &LoopConfig::new(0.05, 4.0, vec![1.0])).unwrap();
        let traj = TargetTrajectory::from_record(&rec, &plant, March::default()).unwrap();
        assert!(traj.max_boundary() < 1e-9, "{}", traj.max_boundary());
        assert!(traj.max_sup_after(0.5) < 1e-6);
        let slack = calibrate_slack(&rec, &plant).unwrap();
        let report = traj.iss_bound(1.0, slack);
        assert_eq!(report.violations, 0);
        assert!(traj.transport_residual() < 1e-4, "{}", traj.transport_residual());
    }

    #[test]
    fn perturbed_loop_boundary_matches_mismatch() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let cfg = LoopConfig::new(0.05, 4.0, vec![1.0]);
        let exact = run_closed_loop(&plant, &PredictorHandle::exact(), &cfg).unwrap();
        let slack = calibrate_slack(&exact, &plant).unwrap();
        let noisy = PredictorHandle::perturbed(PredictorHandle::exact(), 0.05, 3);
        let rec = run_closed_loop(&plant, &noisy, &cfg).unwrap();
        let traj = TargetTrajectory::from_record(&rec, &plant, March::default()).unwrap();
        let report = traj.target_report(slack);
        assert!(report.pass, "{report:?}");
        assert!(report.max_boundary > 1e-3 && report.max_boundary <= 2.0 * 0.05 + 1e-9);
        for c in [0.5, 1.0, 2.0] {
            assert_eq!(traj.iss_bound(c, slack).violations, 0);
        }
    }

    #[test]
    fn iss_csv_lists_every_step() {
        let r = IssReport { c: 1.0, slack: 1e-9, times: vec![0.0, 0.1], lhs: vec![1.0, 0.5], rhs: vec![1.6, 1.4], violations: 0 };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
