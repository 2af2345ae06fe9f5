//! Adiabatic CSTR with the exothermic reaction `A + 2B -> C`.
//!
//! Temperature is carried as a third "component": the state is
//! `n = [n_A, n_B, n_T]` with `c = n / V` and `c_T = T`. At steady state the
//! three-state model collapses onto the one-state manifold
//!
//! ```text
//!     c_A(T) = c_A,in + (c_T,in - T) / beta
//!     c_B(T) = c_B,in + 2 (c_T,in - T) / beta
//! ```
//!
//! so the one-state model keeps only `n_T`.

mod calibrate;
mod linear;
mod params;

pub use calibrate::{calibrate, Calibration, CalibrationTargets};
pub use linear::{discretize, linearize, one_state_model, StateSpace};
pub use params::ReactorParameters;

use crate::error::{Error, Result};
use crate::units::Flow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactorState3 {
    /// `[n_A (mol), n_B (mol), n_T (K·L)]`
    pub n: [f64; 3],
}

impl ReactorState3 {
    pub fn concentrations(&self, p: &ReactorParameters) -> [f64; 3] {
        self.n.map(|v| v / p.volume)
    }

    /// The point of the one-state manifold at temperature `c_t`.
    pub fn on_manifold(c_t: f64, p: &ReactorParameters) -> Self {
        let (c_a, c_b) = manifold_concentrations(c_t, p);
        ReactorState3 { n: [c_a * p.volume, c_b * p.volume, c_t * p.volume] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactorState1 {
    /// K·L
    pub n_t: f64,
}

impl ReactorState1 {
    pub fn from_temperature(c_t: f64, p: &ReactorParameters) -> Self {
        ReactorState1 { n_t: c_t * p.volume }
    }

    pub fn temperature(&self, p: &ReactorParameters) -> f64 {
        self.n_t / p.volume
    }
}

pub fn manifold_concentrations(c_t: f64, p: &ReactorParameters) -> (f64, f64) {
    let dt = p.ctin - c_t;
    (p.cain + dt / p.beta, p.cbin + 2.0 * dt / p.beta)
}

/// Arrhenius rate constant `k0 exp(-(Ea/R) / c_T)`.
pub fn arrhenius(c_t: f64, p: &ReactorParameters) -> Result<f64> {
    if !(c_t > 0.0) {
        return Err(Error::Domain(format!("Arrhenius temperature must be positive, got {c_t}")));
    }
    Ok(rate_constant(c_t, p))
}

#[inline]
pub(crate) fn rate_constant(c_t: f64, p: &ReactorParameters) -> f64 {
    p.k0 * (-p.ea_over_r / c_t).exp()
}

/// Reaction rate with `c_A`, `c_B` clamped at zero. Non-positive
/// temperatures yield NaN so that integrators flag the path.
#[inline]
pub(crate) fn reaction_rate(c_a: f64, c_b: f64, c_t: f64, p: &ReactorParameters) -> f64 {
    if !(c_t > 0.0) {
        return f64::NAN;
    }
    rate_constant(c_t, p) * c_a.max(0.0) * c_b.max(0.0)
}

/// Three-state drift with the flow already in L/s.
#[inline]
pub(crate) fn drift3_raw(n: &[f64], q: f64, p: &ReactorParameters, out: &mut [f64]) {
    let inv_v = 1.0 / p.volume;
    let (c_a, c_b, c_t) = (n[0] * inv_v, n[1] * inv_v, n[2] * inv_v);
    let rv = reaction_rate(c_a, c_b, c_t, p) * p.volume;
    out[0] = p.cain * q - c_a * q - rv;
    out[1] = p.cbin * q - c_b * q - 2.0 * rv;
    out[2] = p.ctin * q - c_t * q + p.beta * rv;
}

/// One-state drift with the flow in L/s.
#[inline]
pub(crate) fn drift1_raw(n_t: f64, q: f64, p: &ReactorParameters) -> f64 {
    let c_t = n_t / p.volume;
    let (c_a, c_b) = manifold_concentrations(c_t, p);
    p.ctin * q - c_t * q + p.beta * reaction_rate(c_a, c_b, c_t, p) * p.volume
}

fn check_flow(flow: Flow) -> Result<f64> {
    let q = flow.l_per_s();
    if !q.is_finite() || q < 0.0 {
        return Err(Error::Domain(format!("flow must be finite and nonnegative, got {q} L/s")));
    }
    Ok(q)
}

/// `dn/dt = C_in F - c F + S' r(c) V`.
pub fn drift3(state: &ReactorState3, flow: Flow, p: &ReactorParameters) -> Result<[f64; 3]> {
    let q = check_flow(flow)?;
    if state.n.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reactor state (diverged trajectory)"));
    }
    let mut out = [0.0; 3];
    drift3_raw(&state.n, q, p, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("three-state drift"));
    }
    Ok(out)
}

/// `dn_T/dt` of the one-state model.
pub fn drift1(state: ReactorState1, flow: Flow, p: &ReactorParameters) -> Result<f64> {
    let q = check_flow(flow)?;
    if !state.n_t.is_finite() {
        return Err(Error::NonFinite("reactor state (diverged trajectory)"));
    }
    let d = drift1_raw(state.n_t, q, p);
    if !d.is_finite() {
        return Err(Error::NonFinite("one-state drift"));
    }
    Ok(d)
}

/// `d(drift1)/dn_T`, analytic.
pub(crate) fn drift1_dn(n_t: f64, q: f64, p: &ReactorParameters) -> f64 {
    let c_t = n_t / p.volume;
    let (c_a, c_b) = manifold_concentrations(c_t, p);
    let k = rate_constant(c_t, p);
    let dk = k * p.ea_over_r / (c_t * c_t);
    // d/dc_T of [-c_T q + beta k c_A c_B V], then divided by V
    let d_dct = -q + p.beta * p.volume * (dk * c_a * c_b - k * c_b / p.beta - 2.0 * k * c_a / p.beta);
    d_dct / p.volume
}

/// Highest temperature with nonnegative `c_A`, `c_B` on the manifold.
pub fn max_manifold_temperature(p: &ReactorParameters) -> f64 {
    p.ctin + p.beta * p.cain.min(0.5 * p.cbin)
}

/// A steady state of the one-state model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyPoint {
    /// K
    pub temperature: f64,
    /// Sign of `d(drift1)/dn_T` is negative.
    pub stable: bool,
}

const SCAN_INTERVALS: usize = 4000;

/// Every steady state for `flow` on the physical temperature range, ascending.
pub fn steady_states(flow: Flow, p: &ReactorParameters) -> Result<Vec<SteadyPoint>> {
    let q = check_flow(flow)?;
    let lo = p.ctin;
    let hi = max_manifold_temperature(p);
    let f = |t: f64| drift1_raw(t * p.volume, q, p);
    let scale = (p.ctin.abs() * q.max(1e-6)).max(1e-12);
    let mut roots = Vec::new();
    let h = (hi - lo) / SCAN_INTERVALS as f64;
    let mut t_prev = lo;
    let mut f_prev = f(lo);
    if f_prev.abs() <= 1e-13 * scale {
        roots.push(lo);
    }
    for i in 1..=SCAN_INTERVALS {
        let t = if i == SCAN_INTERVALS { hi } else { lo + h * i as f64 };
        let ft = f(t);
        if ft.abs() <= 1e-13 * scale {
            if roots.last().is_none_or(|&r: &f64| (t - r).abs() > 0.5 * h) {
                roots.push(t);
            }
        } else if f_prev.abs() > 1e-13 * scale && f_prev.signum() != ft.signum() {
            roots.push(refine_root(&f, t_prev, t, q, p)?);
        }
        t_prev = t;
        f_prev = ft;
    }
    Ok(roots.into_iter().map(|t| SteadyPoint { temperature: t, stable: drift1_dn(t * p.volume, q, p) < 0.0 }).collect())
}

fn refine_root(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, q: f64, p: &ReactorParameters) -> Result<f64> {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
        if b - a < 1e-9 {
            break;
        }
    }
    // Newton polish inside the bracket
    let mut t = 0.5 * (a + b);
    for _ in 0..20 {
        let ft = f(t);
        let d = drift1_dn(t * p.volume, q, p) * p.volume;
        if d == 0.0 {
            break;
        }
        let next = t - ft / d;
        if !(next >= a - 1e-9 && next <= b + 1e-9) {
            break;
        }
        if (next - t).abs() < 1e-14 * t {
            t = next;
            break;
        }
        t = next;
    }
    let r = f(t);
    if !r.is_finite() {
        return Err(Error::NoConvergence { what: "steady-state root", iterations: 220, residual: r });
    }
    Ok(t)
}

/// Steady state nearest `branch_hint` (K). The steady-state map is
/// multivalued, so the hint selects the ignition or extinction branch.
pub fn steady_state(flow: Flow, p: &ReactorParameters, branch_hint: f64) -> Result<ReactorState1> {
    let f_ml = flow.ml_per_min();
    if f_ml < p.f_min - 1e-9 || f_ml > p.f_max + 1e-9 {
        return Err(Error::Domain(format!("flow {f_ml} mL/min outside [{}, {}]", p.f_min, p.f_max)));
    }
    let roots = steady_states(flow, p)?;
    let best = roots
        .iter()
        .min_by(|a, b| (a.temperature - branch_hint).abs().total_cmp(&(b.temperature - branch_hint).abs()))
        .ok_or(Error::NoConvergence { what: "steady-state search", iterations: SCAN_INTERVALS, residual: f64::NAN })?;
    let state = ReactorState1::from_temperature(best.temperature, p);
    let resid = drift1_raw(state.n_t, flow.l_per_s(), p);
    if !(resid.abs() <= 1e-9) {
        return Err(Error::NoConvergence { what: "steady-state root", iterations: SCAN_INTERVALS, residual: resid });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::celsius_to_kelvin;

    fn params() -> ReactorParameters {
        ReactorParameters::default()
    }

    #[test]
    fn no_reactant_is_pure_mixing() {
        let p = params();
        let q = Flow::from_ml_per_min(500.0);
        let s = ReactorState3 { n: [0.0, 0.05, 30.0] };
        let d = drift3(&s, q, &p).unwrap();
        let c = s.concentrations(&p);
        let f = q.l_per_s();
        assert_eq!(d[0], p.cain * f - c[0] * f);
        assert_eq!(d[1], p.cbin * f - c[1] * f);
        assert_eq!(d[2], p.ctin * f - c[2] * f);
    }

    #[test]
    fn zero_flow_is_batch() {
        let p = params();
        let s = ReactorState3::on_manifold(330.0, &p);
        let d = drift3(&s, Flow::from_l_per_s(0.0), &p).unwrap();
        let c = s.concentrations(&p);
        let rv = arrhenius(c[2], &p).unwrap() * c[0] * c[1] * p.volume;
        assert!((d[0] + rv).abs() < 1e-15);
        assert!((d[1] + 2.0 * rv).abs() < 1e-15);
        assert!((d[2] - p.beta * rv).abs() < 1e-13);
    }

    #[test]
    fn arrhenius_identities() {
        let mut p = params();
        let e = p.ea_over_r;
        let ratio = arrhenius(2.0 * e, &p).unwrap() / arrhenius(e, &p).unwrap();
        assert!((ratio - 0.5f64.exp()).abs() < 1e-14);
        let grid: Vec<f64> = (0..100).map(|i| 250.0 + 150.0 * i as f64 / 99.0).collect();
        let ks: Vec<f64> = grid.iter().map(|&t| arrhenius(t, &p).unwrap()).collect();
        assert!(ks.windows(2).all(|w| w[1] > w[0]));
        assert!(arrhenius(0.0, &p).is_err());
        assert!(arrhenius(-3.0, &p).is_err());
        p.ea_over_r = 0.0;
        assert_eq!(arrhenius(300.0, &p).unwrap(), p.k0);
    }

    #[test]
    fn one_state_zero_kinetics_fixed_point() {
        let mut p = params();
        p.k0 = 0.0;
        let s = ReactorState1::from_temperature(p.ctin, &p);
        assert_eq!(drift1(s, Flow::from_ml_per_min(630.0), &p).unwrap(), 0.0);
    }

    #[test]
    fn nonfinite_state_rejected() {
        let p = params();
        let s = ReactorState3 { n: [f64::NAN, 0.0, 30.0] };
        assert!(drift3(&s, Flow::from_ml_per_min(100.0), &p).is_err());
        assert!(drift1(ReactorState1 { n_t: f64::INFINITY }, Flow::from_ml_per_min(100.0), &p).is_err());
    }

    #[test]
    fn one_state_matches_three_state_on_manifold() {
        let p = params();
        let q = Flow::from_ml_per_min(630.0);
        for i in 0..50 {
            let t = 280.0 + i as f64 * 1.4;
            let s3 = ReactorState3::on_manifold(t, &p);
            let d3 = drift3(&s3, q, &p).unwrap();
            let d1 = drift1(ReactorState1::from_temperature(t, &p), q, &p).unwrap();
            assert!((d3[2] - d1).abs() <= 1e-12 * (1.0 + d1.abs()), "T = {t}");
        }
    }

    #[test]
    fn operating_point_steady_state() {
        let p = params();
        let q = Flow::from_ml_per_min(630.0);
        let s = steady_state(q, &p, celsius_to_kelvin(65.0)).unwrap();
        let t = s.temperature(&p);
        assert!((t - celsius_to_kelvin(59.30)).abs() < 0.05, "T = {t}");
        assert!(drift1(s, q, &p).unwrap().abs() <= 1e-9);
        // same point is a root of the full model
        let d3 = drift3(&ReactorState3::on_manifold(t, &p), q, &p).unwrap();
        assert!(d3.iter().all(|v| v.abs() <= 1e-9), "{d3:?}");
    }

    #[test]
    fn stability_matches_finite_difference_sign() {
        let p = params();
        for f_ml in [100.0, 300.0, 630.0, 900.0] {
            let q = Flow::from_ml_per_min(f_ml);
            for root in steady_states(q, &p).unwrap() {
                let n = root.temperature * p.volume;
                let h = 1e-4 * n;
                let fd = (drift1_raw(n + h, q.l_per_s(), &p) - drift1_raw(n - h, q.l_per_s(), &p)) / (2.0 * h);
                assert_eq!(fd < 0.0, root.stable, "F = {f_ml}, T = {}", root.temperature);
            }
        }
    }

    #[test]
    fn fixed_point_under_integration() {
        let p = params();
        let q = Flow::from_ml_per_min(630.0);
        let s = steady_state(q, &p, 335.0).unwrap();
        // RK4 for 100 s
        let f = |n: f64| drift1_raw(n, q.l_per_s(), &p);
        let mut n = s.n_t;
        let dt = 0.01;
        for _ in 0..10_000 {
            let k1 = f(n);
            let k2 = f(n + 0.5 * dt * k1);
            let k3 = f(n + 0.5 * dt * k2);
            let k4 = f(n + dt * k3);
            n += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((n - s.n_t).abs() <= 1e-6);
    }

    #[test]
    fn flow_outside_limits_rejected() {
        let p = params();
        assert!(steady_state(Flow::from_ml_per_min(1200.0), &p, 330.0).is_err());
    }

    #[test]
    fn batch_steady_state_is_complete_conversion() {
        let p = params();
        let s = steady_state(Flow::from_l_per_s(0.0), &p, 340.0).unwrap();
        assert!((s.temperature(&p) - max_manifold_temperature(&p)).abs() < 1e-9);
    }
}
