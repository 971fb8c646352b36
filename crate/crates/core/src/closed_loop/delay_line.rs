use std::collections::VecDeque;

use super::LoopError;
use crate::predictor::ControlHistory;
use crate::util::grid_steps;

/// Input buffer spanning exactly one delay `[t_latest - D, t_latest]`.
///
/// Values live on the grid `k dt`; reads between nodes interpolate linearly and
/// reads outside the window are rejected, so nothing can look ahead of the
/// latest pushed input.
#[derive(Debug, Clone)]
pub struct DelayLine {
    dt: f64,
    steps: usize,
    m: usize,
    /// Grid index of the newest value.
    latest: i64,
    buf: VecDeque<Vec<f64>>,
}

impl DelayLine {
    /// Buffer pre-filled with the initial input function `U(θ)`, `θ < 0`; the
    /// newest entry sits at `θ = -dt`.
    pub fn new(
        delay: f64,
        dt: f64,
        m: usize,
        initial: impl Fn(f64) -> Vec<f64>,
    ) -> Result<Self, LoopError> {
        let steps = grid_steps(delay, dt).ok_or(LoopError::GridMismatch { span: delay, dt })?;
        let latest = -1_i64;
        let buf = (latest - steps as i64..=latest)
            .map(|k| {
                let v = initial(k as f64 * dt);
                assert_eq!(v.len(), m, "initial input function has wrong dimension");
                v
            })
            .collect();
        Ok(Self { dt, steps, m, latest, buf })
    }

    pub fn zeros(delay: f64, dt: f64, m: usize) -> Result<Self, LoopError> {
        Self::new(delay, dt, m, |_| vec![0.0; m])
    }

    pub fn latest_time(&self) -> f64 {
        self.latest as f64 * self.dt
    }

    pub fn latest(&self) -> &[f64] {
        self.buf.back().expect("delay line is never empty")
    }

    /// Value stored at grid index `k`, if still buffered.
    pub fn node(&self, k: i64) -> Option<&[f64]> {
        let first = self.latest - self.steps as i64;
        if k < first || k > self.latest {
            return None;
        }
        Some(&self.buf[(k - first) as usize])
    }

    pub fn push(&mut self, u: Vec<f64>) {
        debug_assert_eq!(u.len(), self.m);
        self.buf.pop_front();
        self.buf.push_back(u);
        self.latest += 1;
    }

    /// Linear interpolation at absolute time `tau`.
    pub fn at(&self, tau: f64, out: &mut [f64]) -> Result<(), LoopError> {
        let first = self.latest - self.steps as i64;
        let s = tau / self.dt - first as f64;
        let tol = 1e-9;
        if s < -tol || s > self.steps as f64 + tol {
            return Err(LoopError::OutOfWindow {
                tau,
                lo: first as f64 * self.dt,
                hi: self.latest_time(),
            });
        }
        let s = s.clamp(0.0, self.steps as f64);
        let k = (s.floor() as usize).min(self.steps - 1);
        let w = s - k as f64;
        let (a, b) = (&self.buf[k], &self.buf[k + 1]);
        for i in 0..self.m {
            out[i] = a[i] + w * (b[i] - a[i]);
        }
        Ok(())
    }

    /// History on `[t - D, t]` for `t = latest + dt`, with `candidate` as the
    /// not-yet-committed input at `t`.
    pub fn window(&self, candidate: &[f64]) -> ControlHistory {
        let mut data = Vec::with_capacity((self.steps + 1) * self.m);
        for v in self.buf.iter().skip(1) {
            data.extend_from_slice(v);
        }
        data.extend_from_slice(candidate);
        let t_now = (self.latest + 1) as f64 * self.dt;
        ControlHistory::new(self.steps as f64 * self.dt, self.dt, self.m, data, t_now)
            .expect("delay line grid is consistent by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_and_interpolation() {
        let mut line = DelayLine::new(0.3, 0.1, 1, |t| vec![t]).unwrap();
        assert!((line.latest_time() + 0.1).abs() < 1e-15);
        let w = line.window(&[9.0]);
        assert_eq!(w.points(), 4);
        assert!((w.value(0)[0] + 0.3).abs() < 1e-12);
        assert_eq!(w.value(3), &[9.0]);

        line.push(vec![1.0]);
        let mut out = [0.0];
        line.at(-0.05, &mut out).unwrap();
        assert!((out[0] - 0.45).abs() < 1e-12);
        line.at(0.0, &mut out).unwrap();
        assert_eq!(out[0], 1.0);
        line.at(-0.3, &mut out).unwrap();
        assert!((out[0] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn reads_outside_window_fail() {
        let mut line = DelayLine::zeros(0.5, 0.1, 2).unwrap();
        line.push(vec![1.0, 1.0]);
        let mut out = [0.0; 2];
        assert!(matches!(line.at(0.05, &mut out), Err(LoopError::OutOfWindow { .. })));
        assert!(matches!(line.at(-0.6, &mut out), Err(LoopError::OutOfWindow { .. })));
        assert!(line.at(-0.5, &mut out).is_ok());
    }

    #[test]
    fn node_lookup_tracks_pushes() {
        let mut line = DelayLine::zeros(0.2, 0.1, 1).unwrap();
        line.push(vec![5.0]);
        line.push(vec![6.0]);
        assert_eq!(line.node(1), Some(&[6.0][..]));
        assert_eq!(line.node(0), Some(&[5.0][..]));
        assert_eq!(line.node(-1), Some(&[0.0][..]));
        assert_eq!(line.node(-2), None);
    }
}
