use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{drift1_dn, drift1_raw, steady_state, ReactorParameters, ReactorState1};
use crate::error::{Error, Result};
use crate::numerics::expm;
use crate::units::Flow;

/// Discrete linear model in deviation variables around `(x_s, u_s, y_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub cz: DMatrix<f64>,
    pub ts: f64,
    pub x_s: DVector<f64>,
    pub u_s: DVector<f64>,
    pub y_s: DVector<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, cz: DMatrix<f64>, ts: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dims("StateSpace A", "square", format!("{}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dims("StateSpace B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dims("StateSpace C cols", n, c.ncols()));
        }
        if cz.ncols() != n {
            return Err(Error::dims("StateSpace Cz cols", n, cz.ncols()));
        }
        if !(ts > 0.0) {
            return Err(Error::invalid("ts", format!("must be positive, got {ts}")));
        }
        let (m, p) = (b.ncols(), c.nrows());
        Ok(StateSpace { a, b, c, cz, ts, x_s: DVector::zeros(n), u_s: DVector::zeros(m), y_s: DVector::zeros(p) })
    }

    pub fn with_operating_point(mut self, x_s: DVector<f64>, u_s: DVector<f64>, y_s: DVector<f64>) -> Result<Self> {
        if x_s.len() != self.n_states() || u_s.len() != self.n_inputs() || y_s.len() != self.n_outputs() {
            return Err(Error::dims(
                "operating point",
                format!("{}/{}/{}", self.n_states(), self.n_inputs(), self.n_outputs()),
                format!("{}/{}/{}", x_s.len(), u_s.len(), y_s.len()),
            ));
        }
        self.x_s = x_s;
        self.u_s = u_s;
        self.y_s = y_s;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn to_deviation(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.x_s
    }

    pub fn from_deviation(&self, dx: &DVector<f64>) -> DVector<f64> {
        dx + &self.x_s
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Continuous Jacobians `(A_c, B_c)` of the one-state model at a steady
/// state. `B_c` is per L/s of feed.
pub fn linearize(x_s: ReactorState1, u_s: Flow, p: &ReactorParameters) -> Result<(f64, f64)> {
    let q = u_s.l_per_s();
    let resid = drift1_raw(x_s.n_t, q, p);
    if !(resid.abs() <= 1e-6) {
        return Err(Error::Domain(format!("linearization point is not a steady state (|drift| = {resid:e})")));
    }
    let a_c = drift1_dn(x_s.n_t, q, p);
    let b_c = p.ctin - x_s.temperature(p);
    Ok((a_c, b_c))
}

/// Exact zero-order-hold discretization:
/// `[A B; 0 I] = exp([A_c B_c; 0 0] ts)`.
pub fn discretize(a_c: &DMatrix<f64>, b_c: &DMatrix<f64>, ts: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(ts > 0.0) {
        return Err(Error::invalid("ts", format!("must be positive, got {ts}")));
    }
    let n = a_c.nrows();
    if a_c.ncols() != n || b_c.nrows() != n {
        return Err(Error::dims(
            "discretize",
            format!("{n}x{n} / {n}xm"),
            format!("{}x{} / {}x{}", a_c.nrows(), a_c.ncols(), b_c.nrows(), b_c.ncols()),
        ));
    }
    let m = b_c.ncols();
    let mut block = DMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(&(a_c * ts));
    block.view_mut((0, n), (n, m)).copy_from(&(b_c * ts));
    let e = expm(&block)?;
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

/// Linear discrete one-state model at the steady state for `flow` nearest
/// `branch_hint`, with `C = C_z = [1/V]`.
pub fn one_state_model(p: &ReactorParameters, flow: Flow, branch_hint: f64) -> Result<StateSpace> {
    let xs = steady_state(flow, p, branch_hint)?;
    let (a_c, b_c) = linearize(xs, flow, p)?;
    let (a, b) = discretize(&DMatrix::from_element(1, 1, a_c), &DMatrix::from_element(1, 1, b_c), p.ts)?;
    let c = DMatrix::from_element(1, 1, 1.0 / p.volume);
    StateSpace::new(a, b, c.clone(), c, p.ts)?.with_operating_point(
        DVector::from_element(1, xs.n_t),
        DVector::from_element(1, flow.l_per_s()),
        DVector::from_element(1, xs.temperature(p)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reactor::drift1;

    fn op() -> (ReactorParameters, ReactorState1, Flow) {
        let p = ReactorParameters::default();
        let f = Flow::from_ml_per_min(630.0);
        let xs = steady_state(f, &p, 335.0).unwrap();
        (p, xs, f)
    }

    #[test]
    fn analytic_matches_central_differences() {
        let (p, xs, f) = op();
        let (a_c, b_c) = linearize(xs, f, &p).unwrap();
        // step of 1e-4 K in temperature
        let hx = 1e-4 * p.volume;
        let fd_a = (drift1(ReactorState1 { n_t: xs.n_t + hx }, f, &p).unwrap()
            - drift1(ReactorState1 { n_t: xs.n_t - hx }, f, &p).unwrap())
            / (2.0 * hx);
        let hu = 1e-4 * f.l_per_s();
        let fd_b = (drift1(xs, Flow::from_l_per_s(f.l_per_s() + hu), &p).unwrap()
            - drift1(xs, Flow::from_l_per_s(f.l_per_s() - hu), &p).unwrap())
            / (2.0 * hu);
        assert!(((a_c - fd_a) / a_c).abs() < 1e-6, "{a_c} vs {fd_a}");
        assert!(((b_c - fd_b) / b_c).abs() < 1e-6, "{b_c} vs {fd_b}");
    }

    #[test]
    fn zero_kinetics_is_mixing_pole() {
        let p = ReactorParameters { k0: 0.0, ..Default::default() };
        let f = Flow::from_ml_per_min(630.0);
        let xs = ReactorState1::from_temperature(p.ctin, &p);
        let (a_c, b_c) = linearize(xs, f, &p).unwrap();
        assert!((a_c + f.l_per_s() / p.volume).abs() < 1e-15);
        assert_eq!(b_c, 0.0);
    }

    #[test]
    fn off_steady_state_rejected() {
        let (p, xs, f) = op();
        assert!(linearize(ReactorState1 { n_t: xs.n_t + 1.0 }, f, &p).is_err());
    }

    #[test]
    fn integrator_discretizes_to_euler() {
        let (a, b) = discretize(&DMatrix::zeros(2, 2), &DMatrix::from_row_slice(2, 1, &[1.5, -2.0]), 0.3).unwrap();
        assert_eq!(a, DMatrix::identity(2, 2));
        assert!((b - DMatrix::from_row_slice(2, 1, &[0.45, -0.6])).amax() < 1e-15);
    }

    #[test]
    fn semigroup() {
        let ac = DMatrix::from_row_slice(2, 2, &[-0.3, 0.1, 0.05, -0.04]);
        let bc = DMatrix::from_row_slice(2, 1, &[1.0, -0.5]);
        let (a1, b1) = discretize(&ac, &bc, 0.7).unwrap();
        let (a2, b2) = discretize(&ac, &bc, 1.4).unwrap();
        assert!((&a1 * &a1 - a2).amax() < 1e-12);
        assert!((&a1 * &b1 + &b1 - b2).amax() < 1e-12);
    }

    #[test]
    fn discrete_model_is_exact_for_linear_dynamics() {
        let (p, xs, f) = op();
        let (a_c, b_c) = linearize(xs, f, &p).unwrap();
        let ss = one_state_model(&p, f, 335.0).unwrap();
        // RK4 with fine steps on the linear ODE, piecewise-constant input
        let inputs = [1e-3, -2e-3, 0.0, 5e-4, 1e-3, -1e-3, 2e-3, 0.0, 0.0, -5e-4];
        let mut x_rk = 0.3;
        let mut x_d = DVector::from_element(1, 0.3);
        for &u in &inputs {
            let f = |x: f64| a_c * x + b_c * u;
            let h = 1e-3;
            for _ in 0..1000 {
                let k1 = f(x_rk);
                let k2 = f(x_rk + 0.5 * h * k1);
                let k3 = f(x_rk + 0.5 * h * k2);
                let k4 = f(x_rk + h * k3);
                x_rk += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            x_d = ss.step(&x_d, &DVector::from_element(1, u));
        }
        assert!((x_d[0] - x_rk).abs() < 1e-9, "{} vs {}", x_d[0], x_rk);
    }

    #[test]
    fn deviation_round_trip() {
        let (p, _, f) = op();
        let ss = one_state_model(&p, f, 335.0).unwrap();
        // exact up to the rounding of one add/subtract against x_s
        let ulp = f64::EPSILON * ss.x_s[0].abs();
        for v in [0.1234567, -3.2, 0.0, 1e-7] {
            let x = DVector::from_element(1, v);
            assert!((ss.to_deviation(&ss.from_deviation(&x))[0] - v).abs() <= ulp);
            let full = DVector::from_element(1, ss.x_s[0] + v);
            assert!((ss.from_deviation(&ss.to_deviation(&full))[0] - full[0]).abs() <= ulp);
        }
    }
}
