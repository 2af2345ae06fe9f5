//! Continuous-discrete stochastic models and the Euler-Maruyama step.
//!
//! The scalar control input is the feed flow in L/s for the reactor models.
//! The output `z` and the measurement `y = z + v` are temperatures in K.

use crate::error::{Error, Result};
use crate::reactor::{drift1_raw, drift3_raw, ReactorParameters, ReactorState3};

pub trait SdeModel: Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    /// Writes `f(t, x, u)` into `out`.
    fn drift(&self, t: f64, x: &[f64], u: f64, out: &mut [f64]);
    /// Adds `sigma(t, x, u) dw` to `out`.
    fn add_diffusion(&self, t: f64, x: &[f64], u: f64, dw: &[f64], out: &mut [f64]);
    /// Noise-free output `z = h(x)`.
    fn output(&self, x: &[f64]) -> f64;
    /// Variance of the additive measurement noise on `y`.
    fn measurement_variance(&self) -> f64;
}

/// `x_next = x + f dt + sigma dw`, written into `out`.
pub fn em_step<M: SdeModel + ?Sized>(model: &M, t: f64, x: &[f64], u: f64, dt: f64, dw: &[f64], out: &mut [f64]) -> Result<()> {
    model.drift(t, x, u, out);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi + *o * dt;
    }
    model.add_diffusion(t, x, u, dw, out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { sample: 0, t, state: x.to_vec(), input: u });
    }
    Ok(())
}

/// Three-state reactor, noise on the energy state only: `sigma = F diag(0, 0, sigma_T)`.
#[derive(Debug, Clone)]
pub struct Cstr3Sde {
    pub params: ReactorParameters,
}

impl Cstr3Sde {
    pub fn new(params: ReactorParameters) -> Result<Self> {
        params.validate()?;
        Ok(Cstr3Sde { params })
    }

    /// Initial state on the one-state manifold at temperature `c_t` (K).
    pub fn state_at(&self, c_t: f64) -> Vec<f64> {
        ReactorState3::on_manifold(c_t, &self.params).n.to_vec()
    }
}

impl SdeModel for Cstr3Sde {
    fn state_dim(&self) -> usize {
        3
    }

    fn noise_dim(&self) -> usize {
        1
    }

    #[inline]
    fn drift(&self, _t: f64, x: &[f64], u: f64, out: &mut [f64]) {
        drift3_raw(x, u, &self.params, out);
    }

    #[inline]
    fn add_diffusion(&self, _t: f64, _x: &[f64], u: f64, dw: &[f64], out: &mut [f64]) {
        out[2] += u * self.params.sigma_t * dw[0];
    }

    #[inline]
    fn output(&self, x: &[f64]) -> f64 {
        x[2] / self.params.volume
    }

    fn measurement_variance(&self) -> f64 {
        self.params.rv
    }
}

/// One-state reactor: `sigma = F sigma_T`.
#[derive(Debug, Clone)]
pub struct Cstr1Sde {
    pub params: ReactorParameters,
}

impl Cstr1Sde {
    pub fn new(params: ReactorParameters) -> Result<Self> {
        params.validate()?;
        Ok(Cstr1Sde { params })
    }

    pub fn state_at(&self, c_t: f64) -> Vec<f64> {
        vec![c_t * self.params.volume]
    }
}

impl SdeModel for Cstr1Sde {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    #[inline]
    fn drift(&self, _t: f64, x: &[f64], u: f64, out: &mut [f64]) {
        out[0] = drift1_raw(x[0], u, &self.params);
    }

    #[inline]
    fn add_diffusion(&self, _t: f64, _x: &[f64], u: f64, dw: &[f64], out: &mut [f64]) {
        out[0] += u * self.params.sigma_t * dw[0];
    }

    #[inline]
    fn output(&self, x: &[f64]) -> f64 {
        x[0] / self.params.volume
    }

    fn measurement_variance(&self) -> f64 {
        self.params.rv
    }
}

/// `dx = (a x + b u) dt + s dw`, `z = x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLinearSde {
    pub a: f64,
    pub b: f64,
    pub s: f64,
    pub rv: f64,
}

impl ScalarLinearSde {
    /// Mean and variance of `x(t)` from `x(0) = x0` with `u = 0`.
    pub fn moments(&self, x0: f64, t: f64) -> (f64, f64) {
        let mean = (self.a * t).exp() * x0;
        let var = if self.a == 0.0 { self.s * self.s * t } else { self.s * self.s * ((2.0 * self.a * t).exp() - 1.0) / (2.0 * self.a) };
        (mean, var)
    }

    /// Mean and variance of the Euler-Maruyama chain after `steps` steps of
    /// size `dt`, `u = 0`.
    pub fn em_moments(&self, x0: f64, dt: f64, steps: u32) -> (f64, f64) {
        let g = 1.0 + self.a * dt;
        let g2 = g * g;
        let n = i32::try_from(steps).unwrap_or(i32::MAX);
        let mean = g.powi(n) * x0;
        let var = if (g2 - 1.0).abs() < 1e-300 {
            self.s * self.s * dt * f64::from(steps)
        } else {
            self.s * self.s * dt * (g2.powi(n) - 1.0) / (g2 - 1.0)
        };
        (mean, var)
    }
}

impl SdeModel for ScalarLinearSde {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &[f64], u: f64, out: &mut [f64]) {
        out[0] = self.a * x[0] + self.b * u;
    }

    fn add_diffusion(&self, _t: f64, _x: &[f64], _u: f64, dw: &[f64], out: &mut [f64]) {
        out[0] += self.s * dw[0];
    }

    fn output(&self, x: &[f64]) -> f64 {
        x[0]
    }

    fn measurement_variance(&self) -> f64 {
        self.rv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_drift_zero_noise_is_identity() {
        let m = ScalarLinearSde { a: 0.0, b: 0.0, s: 0.0, rv: 0.0 };
        let mut out = [0.0];
        em_step(&m, 0.0, &[3.25], 1.0, 0.1, &[0.7], &mut out).unwrap();
        assert_eq!(out[0], 3.25);
    }

    #[test]
    fn noiseless_step_is_explicit_euler() {
        let p = ReactorParameters::default();
        let m = Cstr3Sde::new(ReactorParameters { sigma_t: 0.0, ..p.clone() }).unwrap();
        let x = m.state_at(330.0);
        let mut f = [0.0; 3];
        m.drift(0.0, &x, 0.01, &mut f);
        let mut out = [0.0; 3];
        em_step(&m, 0.0, &x, 0.01, 0.1, &[1.3], &mut out).unwrap();
        for i in 0..3 {
            assert_eq!(out[i], x[i] + f[i] * 0.1);
        }
    }

    #[test]
    fn diffusion_enters_energy_state_only() {
        let m = Cstr3Sde::new(ReactorParameters::default()).unwrap();
        let x = m.state_at(330.0);
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        em_step(&m, 0.0, &x, 0.01, 0.1, &[0.0], &mut a).unwrap();
        em_step(&m, 0.0, &x, 0.01, 0.1, &[0.5], &mut b).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert!((b[2] - a[2] - 0.01 * m.params.sigma_t * 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_and_three_state_agree_on_manifold() {
        let p = ReactorParameters::default();
        let m3 = Cstr3Sde::new(p.clone()).unwrap();
        let m1 = Cstr1Sde::new(p).unwrap();
        for t in [300.0, 320.0, 332.45, 340.0] {
            let mut f3 = [0.0; 3];
            let mut f1 = [0.0];
            m3.drift(0.0, &m3.state_at(t), 0.0105, &mut f3);
            m1.drift(0.0, &m1.state_at(t), 0.0105, &mut f1);
            assert!((f3[2] - f1[0]).abs() <= 1e-12 * f1[0].abs().max(1.0));
            assert_eq!(m3.output(&m3.state_at(t)), m1.output(&m1.state_at(t)));
        }
    }

    #[test]
    fn divergence_is_reported() {
        let m = ScalarLinearSde { a: 0.0, b: 1.0, s: 0.0, rv: 0.0 };
        let mut out = [0.0];
        let err = em_step(&m, 2.0, &[1.0], f64::INFINITY, 0.1, &[0.0], &mut out).unwrap_err();
        assert!(matches!(err, Error::Diverged { t, .. } if t == 2.0));
    }

    #[test]
    fn em_moments_approach_exact() {
        let m = ScalarLinearSde { a: -0.5, b: 0.0, s: 0.3, rv: 0.0 };
        let (me, ve) = m.moments(1.0, 2.0);
        let (mn, vn) = m.em_moments(1.0, 1e-5, 200_000);
        assert!((me - mn).abs() < 1e-5);
        assert!((ve - vn).abs() < 1e-5);
    }
}
