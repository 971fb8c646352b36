use nalgebra::DMatrix;

use super::{DynamicsError, System, SystemSpec};

/// `ẋ = A x + B u` regulated by `κ(x) = -K x`.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    gain: DMatrix<f64>,
    x0: Vec<f64>,
    spec: SystemSpec,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, gain: DMatrix<f64>, delay: f64) -> Result<Self, DynamicsError> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n {
            return Err(DynamicsError::DimensionMismatch { expected: n, got: a.ncols() });
        }
        if b.nrows() != n {
            return Err(DynamicsError::DimensionMismatch { expected: n, got: b.nrows() });
        }
        if gain.nrows() != m || gain.ncols() != n {
            return Err(DynamicsError::InvalidParameter(format!(
                "gain must be {m}x{n}, got {}x{}",
                gain.nrows(),
                gain.ncols()
            )));
        }
        if a.iter().chain(b.iter()).chain(gain.iter()).any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite("linear plant matrices"));
        }
        // |A dx + B du| <= ||A|| |dx| + ||B|| |du|
        let cf = spectral_norm(&a).max(spectral_norm(&b));
        let spec = SystemSpec { n, m, delay, saturation: None, lipschitz_cf: Some(cf) };
        spec.validate()?;
        Ok(Self { a, b, gain, x0: vec![1.0; n], spec })
    }

    /// Scalar plant `ẋ = a x + b u`, `κ(x) = -k x`.
    pub fn scalar(a: f64, b: f64, k: f64, delay: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, k),
            delay,
        )
        .expect("scalar plant parameters are valid")
    }

    pub fn with_delay(mut self, delay: f64) -> Result<Self, DynamicsError> {
        self.spec.delay = delay;
        self.spec.validate()?;
        Ok(self)
    }

    pub fn with_saturation(mut self, limits: Vec<(f64, f64)>) -> Result<Self, DynamicsError> {
        self.spec.saturation = Some(limits);
        self.spec.validate()?;
        Ok(self)
    }

    pub fn with_nominal_state(mut self, x0: Vec<f64>) -> Result<Self, DynamicsError> {
        if x0.len() != self.spec.n {
            return Err(DynamicsError::DimensionMismatch { expected: self.spec.n, got: x0.len() });
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

impl System for LinearPlant {
    fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    fn name(&self) -> &str {
        "linear"
    }

    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let n = self.spec.n;
        for i in 0..n {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += self.a[(i, j)] * xj;
            }
            for (j, uj) in u.iter().enumerate() {
                acc += self.b[(i, j)] * uj;
            }
            dx[i] = acc;
        }
    }

    fn control(&self, x: &[f64], _t: f64, u: &mut [f64]) {
        for (i, ui) in u.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc -= self.gain[(i, j)] * xj;
            }
            *ui = acc;
        }
        self.spec.saturate(u);
    }

    fn reference(&self, _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }

    fn nominal_state(&self) -> Vec<f64> {
        self.x0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn supplied_lipschitz_constant_is_max_of_norms() {
        let p = LinearPlant::scalar(1.0, -3.0, 2.0, 0.5);
        assert!((p.spec().lipschitz_cf.unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_clamps_control() {
        let p = LinearPlant::scalar(1.0, 1.0, 10.0, 0.5).with_saturation(vec![(-1.0, 1.0)]).unwrap();
        let mut u = [0.0];
        p.control(&[3.0], 0.0, &mut u);
        assert_eq!(u, [-1.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let r = LinearPlant::new(DMatrix::zeros(2, 2), DMatrix::zeros(1, 1), DMatrix::zeros(1, 2), 0.5);
        assert!(r.is_err());
    }
}
