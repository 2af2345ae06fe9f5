use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::noise::{NoiseStream, MEASUREMENT_STREAM, PROCESS_STREAM};
use super::sde::{em_step, SdeModel};
use crate::error::{Error, Result};

/// What a controller returns at one sample. `integrator`, `slack_lo` and
/// `slack_hi` are recorded for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlAction {
    pub u: f64,
    pub integrator: f64,
    pub slack_lo: f64,
    pub slack_hi: f64,
}

pub trait Controller {
    /// Computes the input to hold over `[t, t + ts)` from measurement `y`.
    fn step(&mut self, t: f64, y: f64) -> Result<ControlAction>;
    fn reset(&mut self);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub t0: f64,
    pub tf: f64,
    pub ts: f64,
    pub substeps: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
}

impl SimConfig {
    /// Number of sampling intervals `(tf - t0) / ts`.
    pub fn n_intervals(&self) -> Result<usize> {
        self.validate()?;
        Ok(((self.tf - self.t0) / self.ts).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.tf.is_finite() && self.tf > self.t0) {
            return Err(Error::invalid("tf", format!("need finite tf > t0, got t0 = {}, tf = {}", self.t0, self.tf)));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::invalid("ts", format!("must be positive, got {}", self.ts)));
        }
        let n = (self.tf - self.t0) / self.ts;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::invalid("tf", format!("(tf - t0) / ts = {n} is not an integer")));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps", "must be at least 1"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        Ok(())
    }
}

/// One closed-loop trajectory. Row `k` holds the state at `t_k`, the
/// measurement and output there, and the input held over `[t_k, t_k + ts)`.
/// There are `n_intervals + 1` rows; the input in the last row is computed
/// but never applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub seed: u64,
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub integrator: Vec<f64>,
    pub slack_lo: Vec<f64>,
    pub slack_hi: Vec<f64>,
    #[serde(default)]
    pub objectives: BTreeMap<String, f64>,
}

impl SimRecord {
    fn with_capacity(seed: u64, n: usize) -> Self {
        SimRecord {
            seed,
            t: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            integrator: Vec::with_capacity(n),
            slack_lo: Vec::with_capacity(n),
            slack_hi: Vec::with_capacity(n),
            objectives: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Checks that every column has one entry per sample.
    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        let cols = [
            ("x", self.x.len()),
            ("y", self.y.len()),
            ("z", self.z.len()),
            ("u", self.u.len()),
            ("integrator", self.integrator.len()),
            ("slack_lo", self.slack_lo.len()),
            ("slack_hi", self.slack_hi.len()),
        ];
        for (what, len) in cols {
            if len != n {
                return Err(Error::dims("SimRecord column", n, format!("{len} ({what})")));
            }
        }
        let d = self.state_dim();
        if self.x.iter().any(|r| r.len() != d) {
            return Err(Error::dims("SimRecord state rows", d, "ragged"));
        }
        Ok(())
    }

    /// Fraction of samples with `z < threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        if self.z.is_empty() {
            return 0.0;
        }
        self.z.iter().filter(|&&z| z < threshold).count() as f64 / self.z.len() as f64
    }
}

/// Simulates the sampled closed loop. At each `t_k` the measurement
/// `y_k = z(t_k) + v_k` is formed, the controller returns `u_k`, and the
/// plant is integrated over `[t_k, t_k + ts)` by `substeps` Euler-Maruyama
/// steps with `u_k` held.
pub fn simulate_closed_loop<M, C>(model: &M, controller: &mut C, config: &SimConfig) -> Result<SimRecord>
where
    M: SdeModel + ?Sized,
    C: Controller + ?Sized,
{
    let n = config.n_intervals()?;
    let nx = model.state_dim();
    if config.x0.len() != nx {
        return Err(Error::dims("initial state", nx, config.x0.len()));
    }
    let mut process = NoiseStream::new(config.seed, PROCESS_STREAM);
    let mut measurement = NoiseStream::new(config.seed, MEASUREMENT_STREAM);
    let v_std = model.measurement_variance().max(0.0).sqrt();
    let dt = config.ts / config.substeps as f64;
    let sqrt_dt = dt.sqrt();

    let mut rec = SimRecord::with_capacity(config.seed, n + 1);
    let mut x = config.x0.clone();
    let mut next = vec![0.0; nx];
    let mut dw = vec![0.0; model.noise_dim()];

    for k in 0..=n {
        let t = config.t0 + k as f64 * config.ts;
        let z = model.output(&x);
        let y = z + v_std * measurement.standard_normal();
        let action = controller.step(t, y).map_err(|e| Error::Controller { sample: k, source: Box::new(e) })?;
        if !action.u.is_finite() {
            return Err(Error::Controller { sample: k, source: Box::new(Error::NonFinite("controller output")) });
        }
        rec.t.push(t);
        rec.x.push(x.clone());
        rec.y.push(y);
        rec.z.push(z);
        rec.u.push(action.u);
        rec.integrator.push(action.integrator);
        rec.slack_lo.push(action.slack_lo);
        rec.slack_hi.push(action.slack_hi);
        if k == n {
            break;
        }
        for j in 0..config.substeps {
            process.fill(&mut dw, sqrt_dt);
            let tj = t + j as f64 * dt;
            em_step(model, tj, &x, action.u, dt, &dw, &mut next).map_err(|e| match e {
                Error::Diverged { t, state, input, .. } => Error::Diverged { sample: k, t, state, input },
                other => other,
            })?;
            std::mem::swap(&mut x, &mut next);
        }
    }
    Ok(rec)
}

/// Open-loop controller returning a fixed input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantInput(pub f64);

impl Controller for ConstantInput {
    fn step(&mut self, _t: f64, _y: f64) -> Result<ControlAction> {
        Ok(ControlAction { u: self.0, ..ControlAction::default() })
    }

    fn reset(&mut self) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pi::{PiController, PiGains};
    use crate::reactor::{steady_state, ReactorParameters};
    use crate::sim::{Cstr3Sde, ScalarLinearSde};
    use crate::units::Flow;

    fn config(x0: Vec<f64>, seed: u64) -> SimConfig {
        SimConfig { t0: 0.0, tf: 300.0, ts: 1.0, substeps: 10, seed, x0 }
    }

    fn pi_gains(p: &ReactorParameters, t_bar: f64) -> PiGains {
        PiGains {
            kp: -5e-4,
            ki: -5e-4,
            kaw: 0.1,
            u_min: Flow::from_ml_per_min(p.f_min).l_per_s(),
            u_max: Flow::from_ml_per_min(p.f_max).l_per_s(),
            u_bar: Flow::from_ml_per_min(630.0).l_per_s(),
            y_bar: t_bar,
            ts: 1.0,
        }
    }

    #[test]
    fn noiseless_operating_point_is_fixed() {
        let p = ReactorParameters { sigma_t: 0.0, rv: 0.0, ..ReactorParameters::default() };
        let t_bar = steady_state(Flow::from_ml_per_min(630.0), &p, 335.0).unwrap().temperature(&p);
        let m = Cstr3Sde::new(p.clone()).unwrap();
        let mut c = PiController::new(pi_gains(&p, t_bar)).unwrap();
        let rec = simulate_closed_loop(&m, &mut c, &config(m.state_at(t_bar), 3)).unwrap();
        assert_eq!(rec.len(), 301);
        rec.validate().unwrap();
        let u_bar = Flow::from_ml_per_min(630.0).l_per_s();
        for k in 0..rec.len() {
            assert!((rec.u[k] - u_bar).abs() < 1e-12, "u[{k}] = {}", rec.u[k]);
            assert!((rec.z[k] - t_bar).abs() < 1e-8, "z[{k}] = {}", rec.z[k]);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let p = ReactorParameters::default();
        let t_bar = 332.45;
        let m = Cstr3Sde::new(p.clone()).unwrap();
        let run = |seed| {
            let mut c = PiController::new(pi_gains(&p, t_bar)).unwrap();
            simulate_closed_loop(&m, &mut c, &config(m.state_at(t_bar), seed)).unwrap()
        };
        let a = run(11);
        assert_eq!(a, run(11));
        assert_ne!(a.z, run(12).z);
    }

    #[test]
    fn controller_errors_carry_sample_index() {
        struct FailsAt(usize, usize);
        impl Controller for FailsAt {
            fn step(&mut self, _t: f64, _y: f64) -> Result<ControlAction> {
                self.1 += 1;
                if self.1 > self.0 {
                    return Err(Error::Domain("boom".into()));
                }
                Ok(ControlAction::default())
            }
            fn reset(&mut self) {}
        }
        let m = ScalarLinearSde { a: -1.0, b: 0.0, s: 0.1, rv: 0.0 };
        let err = simulate_closed_loop(&m, &mut FailsAt(5, 0), &config(vec![0.0], 1)).unwrap_err();
        assert!(matches!(err, Error::Controller { sample: 5, .. }), "{err}");
    }

    #[test]
    fn divergence_carries_sample_index() {
        let m = ScalarLinearSde { a: 50.0, b: 0.0, s: 0.0, rv: 0.0 };
        let err = simulate_closed_loop(&m, &mut ConstantInput(0.0), &config(vec![1.0], 1)).unwrap_err();
        assert!(matches!(err, Error::Diverged { sample, .. } if sample > 0), "{err}");
    }

    #[test]
    fn invalid_configs() {
        let m = ScalarLinearSde { a: -1.0, b: 0.0, s: 0.1, rv: 0.0 };
        let mut c = config(vec![0.0], 1);
        c.tf = 10.5;
        c.ts = 1.0;
        assert!(simulate_closed_loop(&m, &mut ConstantInput(0.0), &c).is_err());
        let mut c = config(vec![0.0], 1);
        c.substeps = 0;
        assert!(c.validate().is_err());
        let c = config(vec![0.0, 1.0], 1);
        assert!(simulate_closed_loop(&m, &mut ConstantInput(0.0), &c).is_err());
    }

    #[test]
    fn halving_dt_halves_the_error() {
        // noiseless linear plant: the exact solution is known, EM error is O(dt)
        let m = ScalarLinearSde { a: -0.3, b: 1.0, s: 0.0, rv: 0.0 };
        let run = |substeps| {
            let cfg = SimConfig { t0: 0.0, tf: 20.0, ts: 1.0, substeps, seed: 0, x0: vec![1.0] };
            simulate_closed_loop(&m, &mut ConstantInput(0.5), &cfg).unwrap()
        };
        let exact = |t: f64| (1.0 - 0.5 / 0.3) * (-0.3 * t).exp() + 0.5 / 0.3;
        let err = |r: &SimRecord| r.t.iter().zip(&r.z).map(|(t, z)| (z - exact(*t)).abs()).fold(0.0, f64::max);
        let e1 = err(&run(5));
        let e2 = err(&run(10));
        let ratio = e1 / e2;
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }
}
