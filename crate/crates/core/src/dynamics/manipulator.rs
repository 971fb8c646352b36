use nalgebra::{Matrix2, Vector2};

use super::{DynamicsError, System, SystemSpec};
use crate::util::Bounds;

/// One rigid link of the planar arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// Distance from the proximal joint to the center of mass, m.
    pub com: f64,
    /// Rotational inertia about the center of mass, kg·m².
    pub inertia: f64,
}

impl Default for Link {
    fn default() -> Self {
        Self { mass: 1.0, length: 1.0, com: 0.5, inertia: 1.0 / 12.0 }
    }
}

/// Physical and controller parameters of the two-link planar manipulator.
///
/// Joint angles are measured from the horizontal axis (joint 2 relative to
/// link 1) and gravity acts along `-y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorParams {
    pub links: [Link; 2],
    pub gravity: f64,
    /// Diagonal of the error-filter gain `α`.
    pub alpha: [f64; 2],
    /// Diagonal of the error-decay gain `β`.
    pub beta: [f64; 2],
    pub joint_min: [f64; 2],
    pub joint_max: [f64; 2],
    pub torque_min: [f64; 2],
    pub torque_max: [f64; 2],
    /// Amplitude of the sinusoidal reference, rad.
    pub amplitude: f64,
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self {
            links: [Link::default(), Link::default()],
            gravity: 9.81,
            alpha: [1.0, 1.0],
            beta: [1.0, 1.0],
            joint_min: [-1.7016, -2.147],
            joint_max: [1.7016, 1.047],
            torque_min: [-50.0, -50.0],
            torque_max: [50.0, 50.0],
            amplitude: 0.1,
        }
    }
}

impl ManipulatorParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: &str| Err(DynamicsError::InvalidParameter(msg.to_string()));
        for link in &self.links {
            if !(link.mass > 0.0 && link.length > 0.0 && link.inertia > 0.0) {
                return bad("link mass, length and inertia must be > 0");
            }
            if !(link.com >= 0.0 && link.com.is_finite()) {
                return bad("link center-of-mass offset must be finite and >= 0");
            }
        }
        if !self.gravity.is_finite() {
            return bad("gravity must be finite");
        }
        if self.alpha.iter().chain(&self.beta).any(|g| !(*g > 0.0)) {
            return bad("alpha and beta gains must be > 0");
        }
        for i in 0..2 {
            if !(self.joint_min[i] < self.joint_max[i]) {
                return bad("joint limits require min < max");
            }
            if !(self.torque_min[i] < self.torque_max[i]) {
                return bad("torque limits require min < max");
            }
        }
        if !self.amplitude.is_finite() {
            return bad("trajectory amplitude must be finite");
        }
        Ok(())
    }

    /// Midpoint of the joint limits; the reference oscillates around it.
    pub fn joint_offset(&self) -> [f64; 2] {
        [
            0.5 * (self.joint_max[0] + self.joint_min[0]),
            0.5 * (self.joint_max[1] + self.joint_min[1]),
        ]
    }

    pub fn joint_box(&self) -> Bounds {
        Bounds::new(self.joint_min.to_vec(), self.joint_max.to_vec())
    }

    /// State box made of the joint limits and `|q̇| <= velocity_bound`.
    pub fn state_box(&self, velocity_bound: f64) -> Bounds {
        Bounds::new(
            vec![self.joint_min[0], self.joint_min[1], -velocity_bound, -velocity_bound],
            vec![self.joint_max[0], self.joint_max[1], velocity_bound, velocity_bound],
        )
    }

    pub fn torque_box(&self) -> Bounds {
        Bounds::new(self.torque_min.to_vec(), self.torque_max.to_vec())
    }
}

/// Mass, Coriolis and gravity terms of `M(q) q̈ + C(q, q̇) q̇ + G(q) = τ`.
///
/// `C` is the Christoffel form, so `Ṁ - 2C` is skew-symmetric.
pub fn manipulator_matrices(
    params: &ManipulatorParams,
    q: [f64; 2],
    qdot: [f64; 2],
) -> (Matrix2<f64>, Matrix2<f64>, Vector2<f64>) {
    let [l1, l2] = params.links;
    let g = params.gravity;
    let (s2, c2) = q[1].sin_cos();

    let m11 = l1.mass * l1.com * l1.com
        + l2.mass * (l1.length * l1.length + l2.com * l2.com + 2.0 * l1.length * l2.com * c2)
        + l1.inertia
        + l2.inertia;
    let m12 = l2.mass * (l2.com * l2.com + l1.length * l2.com * c2) + l2.inertia;
    let m22 = l2.mass * l2.com * l2.com + l2.inertia;
    let mass = Matrix2::new(m11, m12, m12, m22);

    let h = -l2.mass * l1.length * l2.com * s2;
    let coriolis = Matrix2::new(h * qdot[1], h * (qdot[0] + qdot[1]), -h * qdot[0], 0.0);

    let c1 = q[0].cos();
    let c12 = (q[0] + q[1]).cos();
    let gravity = Vector2::new(
        (l1.mass * l1.com + l2.mass * l1.length) * g * c1 + l2.mass * l2.com * g * c12,
        l2.mass * l2.com * g * c12,
    );
    (mass, coriolis, gravity)
}

/// Sinusoidal reference `q_des(t) = A sin(t) + offset` with analytic derivatives.
pub fn desired_trajectory(params: &ManipulatorParams, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let offset = params.joint_offset();
    let (s, c) = t.sin_cos();
    let a = params.amplitude;
    ([a * s + offset[0], a * s + offset[1]], [a * c, a * c], [-a * s, -a * s])
}

/// Two-link arm with state `[q1, q2, q̇1, q̇2]` and torque input, tracking
/// [`desired_trajectory`] with a feedback-linearizing computed-torque law.
#[derive(Debug, Clone)]
pub struct Manipulator {
    params: ManipulatorParams,
    spec: SystemSpec,
}

impl Manipulator {
    pub fn new(params: ManipulatorParams, delay: f64) -> Result<Self, DynamicsError> {
        params.validate()?;
        let saturation = (0..2).map(|i| (params.torque_min[i], params.torque_max[i])).collect();
        let spec = SystemSpec { n: 4, m: 2, delay, saturation: Some(saturation), lipschitz_cf: None };
        spec.validate()?;
        Ok(Self { params, spec })
    }

    /// Records a Lipschitz constant (typically from [`super::estimate_lipschitz`]).
    pub fn with_lipschitz(mut self, cf: f64) -> Result<Self, DynamicsError> {
        self.spec.lipschitz_cf = Some(cf);
        self.spec.validate()?;
        Ok(self)
    }

    pub fn params(&self) -> &ManipulatorParams {
        &self.params
    }

    /// Unsaturated computed torque `τ = M(h + (β + α) e₂)`.
    pub fn computed_torque(&self, x: &[f64], t: f64) -> [f64; 2] {
        let p = &self.params;
        let q = [x[0], x[1]];
        let qd = [x[2], x[3]];
        let (mass, coriolis, gravity) = manipulator_matrices(p, q, qd);
        let (q_des, qd_des, qdd_des) = desired_trajectory(p, t);

        let e1 = Vector2::new(q_des[0] - q[0], q_des[1] - q[1]);
        let e1_dot = Vector2::new(qd_des[0] - qd[0], qd_des[1] - qd[1]);
        let alpha = Vector2::new(p.alpha[0], p.alpha[1]);
        let beta = Vector2::new(p.beta[0], p.beta[1]);
        let e2 = e1_dot + alpha.component_mul(&e1);

        let qd_des = Vector2::new(qd_des[0], qd_des[1]);
        let qdd_des = Vector2::new(qdd_des[0], qdd_des[1]);
        // M h = M(q̈_des - α² e₁) + C(q̇_des + α e₁ - e₂) + G
        let accel = qdd_des - alpha.component_mul(&alpha).component_mul(&e1) + (beta + alpha).component_mul(&e2);
        let tau = mass * accel + coriolis * (qd_des + alpha.component_mul(&e1) - e2) + gravity;
        [tau[0], tau[1]]
    }
}

impl System for Manipulator {
    fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    fn name(&self) -> &str {
        "manipulator"
    }

    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let (mass, coriolis, gravity) = manipulator_matrices(&self.params, [x[0], x[1]], [x[2], x[3]]);
        let qd = Vector2::new(x[2], x[3]);
        let rhs = Vector2::new(u[0], u[1]) - coriolis * qd - gravity;
        // 2x2 SPD solve by explicit inverse
        let det = mass[(0, 0)] * mass[(1, 1)] - mass[(0, 1)] * mass[(1, 0)];
        let qdd0 = (mass[(1, 1)] * rhs[0] - mass[(0, 1)] * rhs[1]) / det;
        let qdd1 = (-mass[(1, 0)] * rhs[0] + mass[(0, 0)] * rhs[1]) / det;
        dx[0] = x[2];
        dx[1] = x[3];
        dx[2] = qdd0;
        dx[3] = qdd1;
    }

    fn control(&self, x: &[f64], t: f64, u: &mut [f64]) {
        let tau = self.computed_torque(x, t);
        u[0] = tau[0];
        u[1] = tau[1];
        self.spec.saturate(u);
    }

    fn reference(&self, t: f64, out: &mut [f64]) {
        let (q, qd, _) = desired_trajectory(&self.params, t);
        out[..2].copy_from_slice(&q);
        out[2..4].copy_from_slice(&qd);
    }

    fn nominal_state(&self) -> Vec<f64> {
        let mid = self.params.joint_offset();
        vec![mid[0], mid[1], 0.0, 0.0]
    }

    fn perturbed_channels(&self) -> usize {
        2
    }
}
