//! Offline fit of `(k0, beta)` with `Ea/R` fixed so that the one-state model
//! has its upper-branch steady state at the target temperature for the target
//! flow, and the exactly discretized pole there equals the target value.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{drift1_dn, drift1_raw, linear::one_state_model, steady_state, ReactorParameters};
use crate::error::{Error, Result};
use crate::units::{celsius_to_kelvin, Flow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    /// mL/min
    pub flow: f64,
    /// K
    pub temperature: f64,
    pub a: f64,
    /// Checked, not fitted: it follows from the other two targets.
    pub b: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets { flow: 630.0, temperature: celsius_to_kelvin(59.30), a: 0.9572, b: -57.5381 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: ReactorParameters,
    pub iterations: usize,
    /// K
    pub steady_temperature: f64,
    pub a: f64,
    pub b: f64,
}

const MAX_ITER: usize = 60;

fn residuals(ln_k0: f64, beta: f64, base: &ReactorParameters, t: &CalibrationTargets) -> Vector2<f64> {
    let p = ReactorParameters { k0: ln_k0.exp(), beta, ..base.clone() };
    let q = Flow::from_ml_per_min(t.flow).l_per_s();
    let n = t.temperature * p.volume;
    let r1 = drift1_raw(n, q, &p) / (p.ctin * q);
    let r2 = (drift1_dn(n, q, &p) * p.ts).exp() - t.a;
    Vector2::new(r1, r2)
}

pub fn calibrate(start: &ReactorParameters, targets: &CalibrationTargets) -> Result<Calibration> {
    start.validate()?;
    let mut x = Vector2::new(start.k0.ln(), start.beta);
    let mut r = residuals(x[0], x[1], start, targets);
    let mut iterations = 0;
    while r.amax() > 1e-14 {
        if iterations == MAX_ITER {
            return Err(Error::NoConvergence { what: "reactor calibration", iterations, residual: r.amax() });
        }
        iterations += 1;
        let mut jac = Matrix2::zeros();
        for k in 0..2 {
            let h = 1e-7 * x[k].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let d = (residuals(xp[0], xp[1], start, targets) - residuals(xm[0], xm[1], start, targets)) / (2.0 * h);
            jac.set_column(k, &d);
        }
        let step = jac.lu().solve(&(-r)).ok_or_else(|| Error::Domain("calibration Jacobian singular".into()))?;
        let mut alpha = 1.0;
        loop {
            let trial = x + step * alpha;
            let rt = residuals(trial[0], trial[1], start, targets);
            if trial[1] > 0.0 && rt.iter().all(|v| v.is_finite()) && rt.amax() < r.amax() {
                x = trial;
                r = rt;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                // no further decrease available at double precision
                if r.amax() < 1e-11 {
                    break;
                }
                return Err(Error::NoConvergence { what: "reactor calibration line search", iterations, residual: r.amax() });
            }
        }
        if alpha < 1e-10 {
            break;
        }
    }

    let params = if iterations == 0 { start.clone() } else { ReactorParameters { k0: x[0].exp(), beta: x[1], ..start.clone() } };
    let flow = Flow::from_ml_per_min(targets.flow);
    let xs = steady_state(flow, &params, targets.temperature)?;
    let ss = one_state_model(&params, flow, targets.temperature)?;
    Ok(Calibration { steady_temperature: xs.temperature(&params), a: ss.a[(0, 0)], b: ss.b[(0, 0)], params, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hits_targets_from_laboratory_start() {
        let c = calibrate(&ReactorParameters::calibration_start(), &CalibrationTargets::default()).unwrap();
        assert!((c.steady_temperature - celsius_to_kelvin(59.30)).abs() < 1e-6);
        assert!((c.a - 0.9572).abs() < 1e-10);
        assert!((c.b + 57.5381).abs() < 0.05, "B = {}", c.b);
    }

    #[test]
    fn default_parameters_are_calibrated() {
        let c = calibrate(&ReactorParameters::default(), &CalibrationTargets::default()).unwrap();
        let d = ReactorParameters::default();
        assert!(((c.params.k0 - d.k0) / d.k0).abs() < 1e-6);
        assert!(((c.params.beta - d.beta) / d.beta).abs() < 1e-6);
    }

    #[test]
    fn idempotent() {
        let once = calibrate(&ReactorParameters::calibration_start(), &CalibrationTargets::default()).unwrap();
        let twice = calibrate(&once.params, &CalibrationTargets::default()).unwrap();
        assert_eq!(once.params, twice.params);
        assert_eq!(twice.iterations, 0);
    }
}
