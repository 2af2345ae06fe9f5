//! PI-to-MPC controller matching.
//!
//! The PI law with anti-windup is a static feedback `u = -K x~` on the
//! augmented state `x~ = [x; I_hat_{k-1}]` (plant state in deviation
//! variables plus the corrected integral). For any stabilizing `K` the
//! matching LMI yields `(Gamma, P)`, and the stage cost
//!
//! ```text
//!     Q = K'Gamma K + P - A'PA,   R = Gamma - B'PB,   S = Gamma K - B'PA
//! ```
//!
//! with terminal cost `P` makes `P` a fixed point of the Riccati recursion
//! whose gain is `K`. Unconstrained MPC with this cost therefore applies
//! `u = -K x~` for every horizon.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::serde_rows;
use crate::numerics::{solve_lmi, spectral_radius, sym_eig, LmiCertificate, LmiOptions, LmiProblem, SymMatrix};
use crate::pi::PiGains;
use crate::reactor::StateSpace;

/// PI controller and plant as one linear system with state `[x; I_hat]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPlant {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub a_aw: DMatrix<f64>,
    pub b_aw: DMatrix<f64>,
    pub k_p: DMatrix<f64>,
    pub k_i: DMatrix<f64>,
    pub k_hat: DMatrix<f64>,
    /// `A_hat + A_aw`.
    pub a_tilde: DMatrix<f64>,
    /// `B_hat + B_aw`.
    pub b_tilde: DMatrix<f64>,
    /// Output map on the augmented state, `[C_z 0]`.
    pub cz: DMatrix<f64>,
    pub ts: f64,
}

impl AugmentedPlant {
    pub fn n_states(&self) -> usize {
        self.a_tilde.nrows()
    }

    /// `A~ - B~ K`, equal to `A_hat - B_hat K`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a_tilde - &self.b_tilde * &self.k_hat
    }

    /// The pair the matching LMI is posed on.
    pub fn model(&self, pair: ModelPair) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match pair {
            ModelPair::AntiWindup => (&self.a_tilde, &self.b_tilde),
            ModelPair::Plain => (&self.a_hat, &self.b_hat),
        }
    }
}

/// Which augmented model the matching and the MPC prediction use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPair {
    /// `(A~, B~)`, with the anti-windup blocks.
    #[default]
    AntiWindup,
    /// `(A_hat, B_hat)`.
    Plain,
}

/// Builds the augmented system for a single-input single-output plant:
///
/// ```text
///     A_hat = [A 0; -ts kI C 1]     B_hat = [B; 0]
///     K_P   = [kP C, 0]             K_I   = [ts kI C, -1]
///     A_aw  = [0; ts kaw K]         B_aw  = [0; ts kaw]
/// ```
pub fn build_augmented(plant: &StateSpace, gains: &PiGains) -> Result<AugmentedPlant> {
    gains.validate()?;
    let n = plant.n_states();
    if plant.n_inputs() != 1 || plant.n_outputs() != 1 {
        return Err(Error::dims("PI augmentation (inputs/outputs)", "1/1", format!("{}/{}", plant.n_inputs(), plant.n_outputs())));
    }
    if (plant.ts - gains.ts).abs() > 1e-12 * plant.ts {
        return Err(Error::invalid("ts", format!("plant ts {} differs from PI ts {}", plant.ts, gains.ts)));
    }
    let ts = gains.ts;
    let c = &plant.c;

    let mut a_hat = DMatrix::zeros(n + 1, n + 1);
    a_hat.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    a_hat.view_mut((n, 0), (1, n)).copy_from(&(c * (-ts * gains.ki)));
    a_hat[(n, n)] = 1.0;

    let mut b_hat = DMatrix::zeros(n + 1, 1);
    b_hat.view_mut((0, 0), (n, 1)).copy_from(&plant.b);

    let mut k_p = DMatrix::zeros(1, n + 1);
    k_p.view_mut((0, 0), (1, n)).copy_from(&(c * gains.kp));
    let mut k_i = DMatrix::zeros(1, n + 1);
    k_i.view_mut((0, 0), (1, n)).copy_from(&(c * (ts * gains.ki)));
    k_i[(0, n)] = -1.0;
    let k_hat = &k_p + &k_i;

    let mut a_aw = DMatrix::zeros(n + 1, n + 1);
    a_aw.view_mut((n, 0), (1, n + 1)).copy_from(&(&k_hat * (ts * gains.kaw)));
    let mut b_aw = DMatrix::zeros(n + 1, 1);
    b_aw[(n, 0)] = ts * gains.kaw;

    let mut cz = DMatrix::zeros(plant.cz.nrows(), n + 1);
    cz.view_mut((0, 0), (plant.cz.nrows(), n)).copy_from(&plant.cz);

    Ok(AugmentedPlant { a_tilde: &a_hat + &a_aw, b_tilde: &b_hat + &b_aw, a_hat, b_hat, a_aw, b_aw, k_p, k_i, k_hat, cz, ts })
}

/// States and inputs of `x~_{k+1} = A~ x~_k + B~ u_k`, `u_k = -K x~_k`.
/// Returns `steps + 1` states and `steps` inputs.
pub fn simulate_linear_law(aug: &AugmentedPlant, x0: &DVector<f64>, steps: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    let mut xs = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for _ in 0..steps {
        let u = -(&aug.k_hat * &x)[0];
        let next = &aug.a_tilde * &x + &aug.b_tilde * u;
        xs.push(x);
        us.push(u);
        x = next;
    }
    xs.push(x);
    (xs, us)
}

/// Weights of the soft output constraints: quadratic `Q_eps` and linear
/// `q_eps` on the lower and upper slacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftWeights {
    pub q_lo: f64,
    pub l_lo: f64,
    pub q_hi: f64,
    pub l_hi: f64,
}

impl Default for SoftWeights {
    fn default() -> Self {
        SoftWeights { q_lo: 1e6, l_lo: 1e6, q_hi: 1e6, l_hi: 1e6 }
    }
}

impl SoftWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("q_lo", self.q_lo), ("l_lo", self.l_lo), ("q_hi", self.q_hi), ("l_hi", self.l_hi)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Matched MPC weights over the augmented state. The stage cost is
/// `[x; u]' [Q S'; S R] [x; u]`, the terminal cost `x' P x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCost {
    #[serde(with = "serde_rows")]
    pub q: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub r: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub s: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub p: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub gamma: DMatrix<f64>,
    /// Condition bound of the LMI solution.
    pub beta: f64,
    pub pair: ModelPair,
    pub soft: SoftWeights,
}

impl StageCost {
    pub fn validate(&self) -> Result<()> {
        let n = self.q.nrows();
        let m = self.r.nrows();
        if self.q.ncols() != n || self.p.shape() != (n, n) {
            return Err(Error::dims("stage cost Q/P", format!("{n}x{n}"), format!("{:?}/{:?}", self.q.shape(), self.p.shape())));
        }
        if self.r.ncols() != m || self.s.shape() != (m, n) || self.gamma.shape() != (m, m) {
            return Err(Error::dims(
                "stage cost R/S/Gamma",
                format!("{m}x{m}/{m}x{n}"),
                format!("{:?}/{:?}", self.r.shape(), self.s.shape()),
            ));
        }
        if [&self.q, &self.r, &self.s, &self.p, &self.gamma].iter().any(|mat| mat.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("stage cost"));
        }
        let r_eig = sym_eig(&SymMatrix::symmetrized(&self.r))?;
        if !(r_eig.min() > 1e-10) {
            return Err(Error::NotPositiveDefinite("stage cost R"));
        }
        self.soft.validate()
    }

    pub fn n_states(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.r.nrows()
    }

    /// Parses and validates a stage-cost file.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: StageCost = toml::from_str(s).map_err(|e| Error::Parse { what: "stage cost", message: e.to_string() })?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse { what: "stage cost", message: e.to_string() })
    }

    /// `[Q S'; S R]`.
    pub fn joint(&self) -> DMatrix<f64> {
        let (n, m) = (self.n_states(), self.n_inputs());
        let mut h = DMatrix::zeros(n + m, n + m);
        h.view_mut((0, 0), (n, n)).copy_from(&self.q);
        h.view_mut((0, n), (n, m)).copy_from(&self.s.transpose());
        h.view_mut((n, 0), (m, n)).copy_from(&self.s);
        h.view_mut((n, n), (m, m)).copy_from(&self.r);
        h
    }
}

/// Matched cost together with the solver's certificate.
#[derive(Debug, Clone)]
pub struct Matching {
    pub cost: StageCost,
    pub certificate: LmiCertificate,
    pub beta_lower: f64,
}

/// Stage cost from a solved LMI point.
pub fn recover_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let q = k.transpose() * gamma * k + p - a.transpose() * p * a;
    let r = gamma - b.transpose() * p * b;
    let s = gamma * k - b.transpose() * p * a;
    (q, r, s)
}

/// Matches the MPC stage cost to `u = -K x` on the model `(a, b)`.
pub fn match_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, k: &DMatrix<f64>, pair: ModelPair, opts: &LmiOptions) -> Result<Matching> {
    let problem = LmiProblem::new(a.clone(), b.clone(), k.clone())?;
    let sol = solve_lmi(&problem, opts).map_err(|e| match e {
        Error::LmiInfeasible => Error::Domain("matching LMI infeasible: the gain does not stabilize the model".into()),
        other => other,
    })?;
    let (q, r, s) = recover_cost(a, b, k, &sol.gamma, &sol.p);
    let cost = StageCost {
        q: crate::numerics::symmetrize(&q),
        r: crate::numerics::symmetrize(&r),
        s,
        p: sol.p,
        gamma: sol.gamma,
        beta: sol.beta,
        pair,
        soft: SoftWeights::default(),
    };
    cost.validate()?;
    Ok(Matching { cost, certificate: sol.certificate, beta_lower: sol.beta_lower })
}

/// Matches the augmented PI law on the chosen model pair.
pub fn match_pi(aug: &AugmentedPlant, pair: ModelPair, opts: &LmiOptions) -> Result<Matching> {
    let (a, b) = aug.model(pair);
    match_gain(a, b, &aug.k_hat, pair, opts)
}

/// First-step gain of unconstrained finite-horizon LQ control with cross
/// term `S` and terminal cost `P`: the backward Riccati recursion
///
/// ```text
///     K_k = (R + B'P_{k+1}B)^{-1} (S + B'P_{k+1}A)
///     P_k = Q + A'P_{k+1}A - (S + B'P_{k+1}A)' K_k,     P_N = P
/// ```
pub fn mpc_feedback_of(cost: &StageCost, a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Result<DMatrix<f64>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let n = cost.n_states();
    if a.shape() != (n, n) || b.shape() != (n, cost.n_inputs()) {
        return Err(Error::dims("Riccati model", format!("{n}x{n}, {n}x{}", cost.n_inputs()), format!("{:?}, {:?}", a.shape(), b.shape())));
    }
    let mut p = cost.p.clone();
    let mut k = DMatrix::zeros(cost.n_inputs(), n);
    for _ in 0..horizon {
        let bp = b.transpose() * &p;
        let lhs = &cost.r + &bp * b;
        let rhs = &cost.s + &bp * a;
        k = lhs.clone().cholesky().ok_or(Error::NotPositiveDefinite("Riccati R + B'PB"))?.solve(&rhs);
        p = crate::numerics::symmetrize(&(&cost.q + a.transpose() * &p * a - rhs.transpose() * &k));
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Riccati recursion"));
        }
    }
    Ok(k)
}

/// True if `u = -K x` stabilizes `(a, b)`.
pub fn stabilizes(a: &DMatrix<f64>, b: &DMatrix<f64>, k: &DMatrix<f64>) -> bool {
    spectral_radius(&(a - b * k)) < 1.0
}
