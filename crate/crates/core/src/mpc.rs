//! Linear MPC with hard input bounds and soft output bounds, condensed to a
//! dense QP over the inputs and the slacks:
//!
//! ```text
//!     min  sum_{k<N} [x_k; u_k]'[Q S'; S R][x_k; u_k] + x_N' P x_N
//!          + sum_{k<=N} Q_el e_lk^2 + q_el e_lk + Q_eu e_uk^2 + q_eu e_uk
//!     s.t. x_{k+1} = A x_k + B u_k,   z_k = C_z x_k
//!          u_lo_k <= u_k <= u_hi_k
//!          z_k >= z_lo_k - e_lk,   z_k <= z_hi_k + e_uk,   e >= 0
//! ```
//!
//! A slack exists only for a bound that is present. Everything except the
//! gradient and the row bounds is independent of the initial state, so the
//! Hessian is factored once per controller.
//!
//! With a prestabilizing gain `F` the decision variables are the offsets
//! `v_k = u_k + F x_k` and the predictions run on `A - B F`. The optimum is
//! unchanged, but the Hessian no longer contains powers of an unstable `A`,
//! which keeps long horizons well conditioned.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{AugmentedPlant, StageCost};
use crate::numerics::{solve_qp_warm, ActiveSetStart, DenseQp, HessianFactor, QpStatus};
use crate::reactor::StateSpace;
use crate::sim::{ControlAction, Controller};

/// KKT tolerance of the per-step QP.
pub const QP_TOL: f64 = 1e-9;

/// Optimal control problem over deviation variables. Single input and
/// single output.
#[derive(Debug, Clone)]
pub struct OcpSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub cz: DMatrix<f64>,
    pub cost: StageCost,
    pub horizon: usize,
    /// Input bounds per stage, length `N`.
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    /// Output bounds per stage, length `N + 1`; `None` means absent.
    pub z_lo: Vec<Option<f64>>,
    pub z_hi: Vec<Option<f64>>,
    /// Gain `F` (1 x n) of the condensing `u_k = -F x_k + v_k`; none means
    /// `F = 0`.
    pub prestabilize: Option<DMatrix<f64>>,
}

impl OcpSpec {
    /// Stage-invariant bounds.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        cz: DMatrix<f64>,
        cost: StageCost,
        horizon: usize,
        u_bounds: (f64, f64),
        z_lo: Option<f64>,
        z_hi: Option<f64>,
    ) -> Result<Self> {
        let spec = OcpSpec {
            a,
            b,
            cz,
            cost,
            horizon,
            u_lo: vec![u_bounds.0; horizon],
            u_hi: vec![u_bounds.1; horizon],
            z_lo: vec![z_lo; horizon + 1],
            z_hi: vec![z_hi; horizon + 1],
            prestabilize: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Condenses around `u = -F x + v`.
    pub fn with_prestabilization(mut self, f: DMatrix<f64>) -> Result<Self> {
        self.prestabilize = Some(f);
        self.validate()?;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        let nn = self.horizon;
        if nn == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.a.ncols() != n || self.b.shape() != (n, 1) || self.cz.shape() != (1, n) {
            return Err(Error::dims(
                "OCP model (A, B, C_z)",
                format!("{n}x{n}, {n}x1, 1x{n}"),
                format!("{:?}, {:?}, {:?}", self.a.shape(), self.b.shape(), self.cz.shape()),
            ));
        }
        self.cost.validate()?;
        if self.cost.n_states() != n || self.cost.n_inputs() != 1 {
            return Err(Error::dims(
                "OCP stage cost",
                format!("{n} states, 1 input"),
                format!("{} states, {} inputs", self.cost.n_states(), self.cost.n_inputs()),
            ));
        }
        if self.u_lo.len() != nn || self.u_hi.len() != nn {
            return Err(Error::dims("OCP input bounds", nn, format!("{}/{}", self.u_lo.len(), self.u_hi.len())));
        }
        if self.z_lo.len() != nn + 1 || self.z_hi.len() != nn + 1 {
            return Err(Error::dims("OCP output bounds", nn + 1, format!("{}/{}", self.z_lo.len(), self.z_hi.len())));
        }
        for k in 0..nn {
            if self.u_lo[k].is_nan() || self.u_hi[k].is_nan() || self.u_lo[k] > self.u_hi[k] {
                return Err(Error::invalid("u bounds", format!("stage {k}: [{}, {}]", self.u_lo[k], self.u_hi[k])));
            }
        }
        if let Some(f) = &self.prestabilize {
            if f.shape() != (1, n) {
                return Err(Error::dims("prestabilizing gain", format!("1x{n}"), format!("{:?}", f.shape())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("prestabilizing gain"));
            }
        }
        let soft = &self.cost.soft;
        if self.z_lo.iter().any(Option::is_some) && !(soft.q_lo > 0.0) {
            return Err(Error::invalid("q_lo", "quadratic slack weight must be positive when a lower output bound is set"));
        }
        if self.z_hi.iter().any(Option::is_some) && !(soft.q_hi > 0.0) {
            return Err(Error::invalid("q_hi", "quadratic slack weight must be positive when an upper output bound is set"));
        }
        if self.z_lo.iter().chain(&self.z_hi).flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("output bounds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlackSide {
    Lower,
    Upper,
}

/// The x0-independent part of the condensed QP.
#[derive(Debug, Clone)]
pub struct Condensed {
    spec: OcpSpec,
    h: DMatrix<f64>,
    factor: HessianFactor,
    /// Every slack at its bound `e = 0`.
    start: ActiveSetStart,
    /// `g = g_x x0 + g_const`.
    g_x: DMatrix<f64>,
    g_const: DVector<f64>,
    /// `c0 = x0' c_x x0`.
    c_x: DMatrix<f64>,
    rows: DMatrix<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Both bounds of row `r` shift by `-row_shift[r] x0`.
    row_shift: DMatrix<f64>,
    /// Inputs `u = u_x x0 + u_v v`.
    u_x: DMatrix<f64>,
    u_v: DMatrix<f64>,
    /// Slack variables: (stage, side), in decision-vector order after the inputs.
    slacks: Vec<(usize, SlackSide)>,
}

impl Condensed {
    pub fn new(spec: OcpSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_states();
        let nn = spec.horizon;
        let (a, b) = (&spec.a, &spec.b);
        let f = spec.prestabilize.clone().unwrap_or_else(|| DMatrix::zeros(1, n));
        let a_f = a - b * &f;

        // x_k = A_F^k x0 + sum_{j<k} A_F^{k-1-j} B v_j
        let mut a_pow = Vec::with_capacity(nn + 1);
        a_pow.push(DMatrix::<f64>::identity(n, n));
        for k in 0..nn {
            let next = &a_f * &a_pow[k];
            a_pow.push(next);
        }
        let omega = DMatrix::from_fn(n * (nn + 1), n, |r, c| a_pow[r / n][(r % n, c)]);
        let mut psi = DMatrix::zeros(n * (nn + 1), nn);
        for k in 1..=nn {
            for j in 0..k {
                let col = &a_pow[k - 1 - j] * b;
                psi.view_mut((k * n, j), (n, 1)).copy_from(&col);
            }
        }
        // u_k = -F x_k + v_k
        let mut fbar = DMatrix::zeros(nn, n * (nn + 1));
        for k in 0..nn {
            fbar.view_mut((k, k * n), (1, n)).copy_from(&f);
        }
        let u_x = -(&fbar * &omega);
        let u_v = DMatrix::identity(nn, nn) - &fbar * &psi;

        let c = &spec.cost;
        let mut qbar = DMatrix::zeros(n * (nn + 1), n * (nn + 1));
        for k in 0..nn {
            qbar.view_mut((k * n, k * n), (n, n)).copy_from(&c.q);
        }
        qbar.view_mut((nn * n, nn * n), (n, n)).copy_from(&c.p);
        let mut sbar = DMatrix::zeros(nn, n * (nn + 1));
        for k in 0..nn {
            sbar.view_mut((k, k * n), (1, n)).copy_from(&c.s);
        }
        let rbar = DMatrix::from_diagonal_element(nn, nn, c.r[(0, 0)]);

        // J = X'Q X + 2 U'S X + U'R U with X = omega x0 + psi v, U = u_x x0 + u_v v
        let sv = u_v.transpose() * &sbar * &psi;
        let h_uu = (psi.transpose() * &qbar * &psi + &sv + sv.transpose() + u_v.transpose() * &rbar * &u_v) * 2.0;
        let g_ux = (psi.transpose() * &qbar * &omega
            + u_v.transpose() * &sbar * &omega
            + psi.transpose() * sbar.transpose() * &u_x
            + u_v.transpose() * &rbar * &u_x)
            * 2.0;
        let sx = u_x.transpose() * &sbar * &omega;
        let c_x = omega.transpose() * &qbar * &omega + &sx + sx.transpose() + u_x.transpose() * &rbar * &u_x;

        let mut slacks = Vec::new();
        for k in 0..=nn {
            if spec.z_lo[k].is_some() {
                slacks.push((k, SlackSide::Lower));
            }
        }
        for k in 0..=nn {
            if spec.z_hi[k].is_some() {
                slacks.push((k, SlackSide::Upper));
            }
        }
        let nv = nn + slacks.len();
        let soft = c.soft;

        let mut h = DMatrix::zeros(nv, nv);
        h.view_mut((0, 0), (nn, nn)).copy_from(&crate::numerics::symmetrize(&h_uu));
        let mut g_x = DMatrix::zeros(nv, n);
        g_x.view_mut((0, 0), (nn, n)).copy_from(&g_ux);
        let mut g_const = DVector::zeros(nv);
        for (i, (_, side)) in slacks.iter().enumerate() {
            let (q, l) = match side {
                SlackSide::Lower => (soft.q_lo, soft.l_lo),
                SlackSide::Upper => (soft.q_hi, soft.l_hi),
            };
            h[(nn + i, nn + i)] = 2.0 * q;
            g_const[nn + i] = l;
        }

        let n_rows = nn + 2 * slacks.len();
        let mut rows = DMatrix::zeros(n_rows, nv);
        let mut row_shift = DMatrix::zeros(n_rows, n);
        let mut lo = Vec::with_capacity(n_rows);
        let mut hi = Vec::with_capacity(n_rows);
        for k in 0..nn {
            rows.view_mut((k, 0), (1, nn)).copy_from(&u_v.row(k));
            row_shift.row_mut(k).copy_from(&u_x.row(k));
            lo.push(spec.u_lo[k]);
            hi.push(spec.u_hi[k]);
        }
        for (i, &(k, side)) in slacks.iter().enumerate() {
            let r = nn + 2 * i;
            // e >= 0
            rows[(r, nn + i)] = 1.0;
            lo.push(0.0);
            hi.push(f64::INFINITY);
            // output row: C_z psi_k v +/- e against the shifted bound
            let czpsi = &spec.cz * psi.view((k * n, 0), (n, nn));
            rows.view_mut((r + 1, 0), (1, nn)).copy_from(&czpsi);
            row_shift.row_mut(r + 1).copy_from(&(&spec.cz * &a_pow[k]));
            match side {
                SlackSide::Lower => {
                    rows[(r + 1, nn + i)] = 1.0;
                    lo.push(spec.z_lo[k].unwrap_or(f64::NEG_INFINITY));
                    hi.push(f64::INFINITY);
                }
                SlackSide::Upper => {
                    rows[(r + 1, nn + i)] = -1.0;
                    lo.push(f64::NEG_INFINITY);
                    hi.push(spec.z_hi[k].unwrap_or(f64::INFINITY));
                }
            }
        }

        let factor = HessianFactor::new(&h)?;
        let slack_rows: Vec<(usize, bool)> = (0..slacks.len()).map(|i| (nn + 2 * i, true)).collect();
        let start = ActiveSetStart::new(&factor, &rows, &slack_rows)?;
        Ok(Condensed { spec, h, factor, start, g_x, g_const, c_x, rows, lo, hi, row_shift, u_x, u_v, slacks })
    }

    pub fn spec(&self) -> &OcpSpec {
        &self.spec
    }

    pub fn n_vars(&self) -> usize {
        self.h.nrows()
    }

    /// The QP for initial state `x0`, including the constant term.
    pub fn qp_at(&self, x0: &DVector<f64>) -> Result<DenseQp> {
        if x0.len() != self.spec.n_states() {
            return Err(Error::dims("MPC initial state", self.spec.n_states(), x0.len()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MPC initial state"));
        }
        let g = &self.g_x * x0 + &self.g_const;
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        let shift = &self.row_shift * x0;
        for (r, d) in shift.iter().enumerate() {
            lo[r] -= d;
            hi[r] -= d;
        }
        let c0 = x0.dot(&(&self.c_x * x0));
        Ok(DenseQp::new(self.h.clone(), g, self.rows.clone(), lo, hi)?.with_constant(c0))
    }

    /// Solves the QP at `x0` reusing the Hessian factorization.
    pub fn solve(&self, x0: &DVector<f64>) -> Result<MpcSolution> {
        let qp = self.qp_at(x0)?;
        let sol = solve_qp_warm(&qp, &self.factor, &self.start, QP_TOL)?;
        let nn = self.spec.horizon;
        let mut slack_lo = vec![0.0; nn + 1];
        let mut slack_hi = vec![0.0; nn + 1];
        for (i, &(k, side)) in self.slacks.iter().enumerate() {
            let v = sol.x[nn + i];
            match side {
                SlackSide::Lower => slack_lo[k] = v,
                SlackSide::Upper => slack_hi[k] = v,
            }
        }
        let u = &self.u_x * x0 + &self.u_v * sol.x.rows(0, nn);
        let inputs: Vec<f64> = u.iter().copied().collect();
        let outputs = self.predict_outputs(x0, &inputs);
        Ok(MpcSolution {
            inputs,
            slack_lo,
            slack_hi,
            outputs,
            objective: sol.objective,
            status: sol.status,
            iterations: sol.iterations,
            active_rows: sol.active_rows,
            kkt_max: sol.kkt.max(),
        })
    }

    fn predict_outputs(&self, x0: &DVector<f64>, inputs: &[f64]) -> Vec<f64> {
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(inputs.len() + 1);
        out.push((&self.spec.cz * &x)[0]);
        for &u in inputs {
            x = &self.spec.a * &x + &self.spec.b * u;
            out.push((&self.spec.cz * &x)[0]);
        }
        out
    }

    /// Objective of a candidate `(u, e_lo, e_hi)` by simulating the model
    /// and summing the stage, terminal and slack costs term by term.
    pub fn direct_cost(&self, x0: &DVector<f64>, inputs: &[f64], slack_lo: &[f64], slack_hi: &[f64]) -> f64 {
        let c = &self.spec.cost;
        let mut x = x0.clone();
        let mut j = 0.0;
        for &u in inputs {
            j += x.dot(&(&c.q * &x)) + 2.0 * u * (&c.s * &x)[0] + u * u * c.r[(0, 0)];
            x = &self.spec.a * &x + &self.spec.b * u;
        }
        j += x.dot(&(&c.p * &x));
        for &e in slack_lo {
            j += c.soft.q_lo * e * e + c.soft.l_lo * e;
        }
        for &e in slack_hi {
            j += c.soft.q_hi * e * e + c.soft.l_hi * e;
        }
        j
    }

    /// Packs `(u, e_lo, e_hi)` from `x0` into the decision-vector layout.
    /// Slacks of absent bounds are dropped.
    pub fn pack(&self, x0: &DVector<f64>, inputs: &[f64], slack_lo: &[f64], slack_hi: &[f64]) -> DVector<f64> {
        let nn = self.spec.horizon;
        let mut w = DVector::zeros(self.n_vars());
        let mut x = x0.clone();
        for (k, &u) in inputs.iter().enumerate().take(nn) {
            w[k] = match &self.spec.prestabilize {
                Some(f) => u + (f * &x)[0],
                None => u,
            };
            x = &self.spec.a * &x + &self.spec.b * u;
        }
        for (i, &(k, side)) in self.slacks.iter().enumerate() {
            w[nn + i] = match side {
                SlackSide::Lower => slack_lo[k],
                SlackSide::Upper => slack_hi[k],
            };
        }
        w
    }
}

/// Dense QP of the OCP at `x0`.
pub fn condense(spec: &OcpSpec, x0: &DVector<f64>) -> Result<DenseQp> {
    Condensed::new(spec.clone())?.qp_at(x0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// Optimal deviation inputs `u_0..u_{N-1}`.
    pub inputs: Vec<f64>,
    /// Slacks per stage `0..=N`, zero where the bound is absent.
    pub slack_lo: Vec<f64>,
    pub slack_hi: Vec<f64>,
    /// Predicted outputs `z_0..z_N` in deviation variables.
    pub outputs: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub active_rows: Vec<usize>,
    pub kkt_max: f64,
}

/// Settings of the closed-loop MPC, in internal units (K, L/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSettings {
    pub horizon: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub z_min: Option<f64>,
    pub z_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MpcState {
    /// Integrator value carried into the next step.
    pub integrator: f64,
    /// Last applied input (absolute).
    pub last_u: f64,
}

/// Per-step diagnostics of [`MpcController`].
#[derive(Debug, Clone, PartialEq)]
pub struct MpcDiagnostics {
    pub x_tilde: DVector<f64>,
    pub solution: MpcSolution,
    /// `u_0 + K x~_0`; zero up to QP tolerance when no row is active.
    pub law_residual: f64,
}

/// Matched MPC with static state inversion and internally propagated
/// integrator. Instances are cheap to clone; the condensed QP is shared.
#[derive(Debug, Clone)]
pub struct MpcController {
    condensed: Arc<Condensed>,
    /// Augmented anti-windup model used for integrator bookkeeping.
    a_tilde: DMatrix<f64>,
    b_tilde: DMatrix<f64>,
    k_hat: DMatrix<f64>,
    /// Pseudo-inverse of the plant output map.
    c_pinv: DVector<f64>,
    u_bar: f64,
    y_bar: f64,
    u_min: f64,
    u_max: f64,
    state: MpcState,
    last: Option<MpcDiagnostics>,
}

impl MpcController {
    /// Builds the controller from the plant model, the augmented PI system
    /// and its matched cost. Bounds in `settings` are absolute.
    pub fn new(plant: &StateSpace, aug: &AugmentedPlant, cost: StageCost, settings: &MpcSettings) -> Result<Self> {
        let u_bar = plant.u_s[0];
        let y_bar = plant.y_s[0];
        if !(settings.u_min < settings.u_max) {
            return Err(Error::invalid("u_max", "must exceed u_min"));
        }
        let (a, b) = aug.model(cost.pair);
        let spec = OcpSpec::constant(
            a.clone(),
            b.clone(),
            aug.cz.clone(),
            cost,
            settings.horizon,
            (settings.u_min - u_bar, settings.u_max - u_bar),
            settings.z_min.map(|z| z - y_bar),
            settings.z_max.map(|z| z - y_bar),
        )?
        .with_prestabilization(aug.k_hat.clone())?;
        let c = &plant.c;
        let cct = (c * c.transpose())[0];
        if !(cct > 0.0) {
            return Err(Error::Domain("plant output map is zero; cannot invert the measurement".into()));
        }
        let c_pinv = DVector::from_iterator(c.ncols(), c.iter().map(|v| v / cct));
        Ok(MpcController {
            condensed: Arc::new(Condensed::new(spec)?),
            a_tilde: aug.a_tilde.clone(),
            b_tilde: aug.b_tilde.clone(),
            k_hat: aug.k_hat.clone(),
            c_pinv,
            u_bar,
            y_bar,
            u_min: settings.u_min,
            u_max: settings.u_max,
            state: MpcState { integrator: 0.0, last_u: u_bar },
            last: None,
        })
    }

    pub fn condensed(&self) -> &Condensed {
        &self.condensed
    }

    pub fn state(&self) -> MpcState {
        self.state
    }

    pub fn last_diagnostics(&self) -> Option<&MpcDiagnostics> {
        self.last.as_ref()
    }

    /// Augmented initial state `[x_hat; I]` for measurement `y`.
    pub fn x_tilde(&self, y: f64) -> DVector<f64> {
        let n = self.c_pinv.len();
        let mut x = DVector::zeros(n + 1);
        x.rows_mut(0, n).copy_from(&(&self.c_pinv * (y - self.y_bar)));
        x[n] = self.state.integrator;
        x
    }
}

/// One MPC step: returns the absolute input, the next state and diagnostics.
pub fn mpc_step(ctrl: &MpcController, y: f64) -> Result<(f64, MpcState, MpcDiagnostics)> {
    if !y.is_finite() {
        return Err(Error::NonFinite("MPC measurement"));
    }
    let x0 = ctrl.x_tilde(y);
    let sol = ctrl.condensed.solve(&x0)?;
    if sol.status == QpStatus::MaxIterations {
        return Err(Error::NoConvergence { what: "MPC QP", iterations: sol.iterations, residual: sol.kkt_max });
    }
    let du = sol.inputs[0];
    let u = (ctrl.u_bar + du).clamp(ctrl.u_min, ctrl.u_max);
    let applied = u - ctrl.u_bar;
    let next = &ctrl.a_tilde * &x0 + &ctrl.b_tilde * applied;
    let n = x0.len();
    let law_residual = du + (&ctrl.k_hat * &x0)[0];
    Ok((u, MpcState { integrator: next[n - 1], last_u: u }, MpcDiagnostics { x_tilde: x0, solution: sol, law_residual }))
}

impl Controller for MpcController {
    fn step(&mut self, _t: f64, y: f64) -> Result<ControlAction> {
        let (u, state, diag) = mpc_step(self, y)?;
        let action =
            ControlAction { u, integrator: state.integrator, slack_lo: diag.solution.slack_lo[0], slack_hi: diag.solution.slack_hi[0] };
        self.state = state;
        self.last = Some(diag);
        Ok(action)
    }

    fn reset(&mut self) {
        self.state = MpcState { integrator: 0.0, last_u: self.u_bar };
        self.last = None;
    }
}
