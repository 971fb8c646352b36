//! Plants `Ẋ = f(X, U(t - D))` and their nominal delay-free controllers `κ`.
//!
//! Two concrete systems ship with the crate: [`LinearPlant`] (closed-form
//! predictor, used as a test oracle) and a planar two-link [`Manipulator`]
//! driven by a computed-torque tracking law.

mod linear;
mod lipschitz;
mod manipulator;

pub use linear::LinearPlant;
pub use lipschitz::estimate_lipschitz;
pub use manipulator::{desired_trajectory, manipulator_matrices, Link, Manipulator, ManipulatorParams};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate sampling box (zero volume)")]
    DegenerateBox,
}

/// Static description shared by every plant.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    /// State dimension.
    pub n: usize,
    /// Input dimension.
    pub m: usize,
    /// Input delay in seconds.
    pub delay: f64,
    /// Per-channel `(min, max)` input limits, applied inside `κ`.
    pub saturation: Option<Vec<(f64, f64)>>,
    /// Lipschitz constant of `f` (sum norm on `(x, u)`), when known.
    pub lipschitz_cf: Option<f64>,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.n == 0 || self.m == 0 {
            return Err(DynamicsError::InvalidParameter("state and input dimensions must be >= 1".into()));
        }
        if !(self.delay > 0.0) || !self.delay.is_finite() {
            return Err(DynamicsError::InvalidParameter(format!("delay must be > 0, got {}", self.delay)));
        }
        if let Some(sat) = &self.saturation {
            if sat.len() != self.m {
                return Err(DynamicsError::DimensionMismatch { expected: self.m, got: sat.len() });
            }
            if sat.iter().any(|(lo, hi)| !(lo < hi)) {
                return Err(DynamicsError::InvalidParameter("saturation requires min < max per channel".into()));
            }
        }
        if let Some(cf) = self.lipschitz_cf {
            if !(cf >= 0.0) || !cf.is_finite() {
                return Err(DynamicsError::InvalidParameter(format!("Lipschitz constant must be >= 0, got {cf}")));
            }
        }
        Ok(())
    }

    /// Clamp `u` in place to the declared limits.
    pub fn saturate(&self, u: &mut [f64]) {
        if let Some(sat) = &self.saturation {
            for (v, (lo, hi)) in u.iter_mut().zip(sat) {
                *v = v.clamp(*lo, *hi);
            }
        }
    }
}

/// A delayed plant together with its nominal controller.
///
/// Implementations are immutable after construction; every method is a pure
/// function of its arguments, so a system can be shared across threads.
/// The slice methods skip validation and are the hot path used by the
/// solvers; [`eval_f`] and [`kappa`] are the checked entry points.
pub trait System: Send + Sync {
    fn spec(&self) -> &SystemSpec;

    /// Short identifier used in metadata and file headers.
    fn name(&self) -> &str;

    /// `dx = f(x, u)`.
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    /// Nominal delay-free control `κ(x, t)`, already saturated.
    fn control(&self, x: &[f64], t: f64, u: &mut [f64]);

    /// Reference state at time `t` (zero for regulation problems).
    fn reference(&self, t: f64, out: &mut [f64]);

    /// Nominal initial state around which initial conditions are sampled.
    fn nominal_state(&self) -> Vec<f64>;

    /// Number of leading state channels perturbed by initial-condition noise.
    fn perturbed_channels(&self) -> usize {
        self.spec().n
    }

    fn state_dim(&self) -> usize {
        self.spec().n
    }

    fn input_dim(&self) -> usize {
        self.spec().m
    }

    fn delay(&self) -> f64 {
        self.spec().delay
    }
}

/// Plant state `X(t)`; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct State(Vec<f64>);

impl State {
    pub fn new(values: Vec<f64>) -> Result<Self, DynamicsError> {
        if !crate::util::all_finite(&values) {
            return Err(DynamicsError::NonFinite("state"));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Control input `U(t)`; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector(Vec<f64>);

impl ControlVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DynamicsError> {
        if !crate::util::all_finite(&values) {
            return Err(DynamicsError::NonFinite("control"));
        }
        Ok(Self(values))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), DynamicsError> {
    if expected != got {
        return Err(DynamicsError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Checked evaluation of `dX/dt = f(x, u)`.
pub fn eval_f(system: &dyn System, x: &State, u: &ControlVector) -> Result<Vec<f64>, DynamicsError> {
    let spec = system.spec();
    check_dim(spec.n, x.dim())?;
    check_dim(spec.m, u.dim())?;
    let mut dx = vec![0.0; spec.n];
    system.rhs(x.as_slice(), u.as_slice(), &mut dx);
    if !crate::util::all_finite(&dx) {
        return Err(DynamicsError::NonFinite("state derivative"));
    }
    Ok(dx)
}

/// Checked evaluation of the nominal controller `κ(x, t)`.
pub fn kappa(system: &dyn System, x: &State, t: f64) -> Result<ControlVector, DynamicsError> {
    let spec = system.spec();
    check_dim(spec.n, x.dim())?;
    if !t.is_finite() {
        return Err(DynamicsError::NonFinite("time"));
    }
    let mut u = vec![0.0; spec.m];
    system.control(x.as_slice(), t, &mut u);
    ControlVector::new(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_plant_examples() {
        let zero = LinearPlant::scalar(0.0, 0.0, 0.0, 0.5);
        let dx = eval_f(&zero, &State::new(vec![1.0]).unwrap(), &ControlVector::new(vec![7.0]).unwrap()).unwrap();
        assert_eq!(dx, vec![0.0]);

        let unit = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let dx = eval_f(&unit, &State::new(vec![2.0]).unwrap(), &ControlVector::new(vec![3.0]).unwrap()).unwrap();
        assert_eq!(dx, vec![5.0]);

        let u = kappa(&unit, &State::new(vec![3.0]).unwrap(), 0.0).unwrap();
        assert_eq!(u.as_slice(), &[-6.0]);
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let plant = LinearPlant::scalar(1.0, 1.0, 2.0, 0.5);
        let err = eval_f(&plant, &State::new(vec![1.0, 2.0]).unwrap(), &ControlVector::zeros(1)).unwrap_err();
        assert_eq!(err, DynamicsError::DimensionMismatch { expected: 1, got: 2 });
        assert!(State::new(vec![f64::NAN]).is_err());
        assert!(ControlVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = SystemSpec { n: 1, m: 1, delay: 0.5, saturation: None, lipschitz_cf: None };
        assert!(spec.validate().is_ok());
        spec.delay = 0.0;
        assert!(spec.validate().is_err());
        spec.delay = 0.5;
        spec.saturation = Some(vec![(1.0, -1.0)]);
        assert!(spec.validate().is_err());
    }
}
