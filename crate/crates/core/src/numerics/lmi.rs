//! Conditioning-minimal matching LMI:
//!
//! ```text
//!     minimize    beta
//!     over        Gamma (m x m, sym), P (n x n, sym), beta
//!     subject to  beta I >= H(Gamma, P) >= I
//!
//!     H(Gamma, P) = [ K'Gamma K + P - A'PA    K'Gamma - A'PB ]
//!                   [ Gamma K - B'PA          Gamma - B'PB   ]
//! ```
//!
//! `beta` is found by geometric bisection. For each trial `beta` the
//! feasibility question is answered by maximizing a common margin `t` in
//! `H - (1 + t) I > 0`, `(beta - t) I - H > 0` with a log-det barrier and
//! damped Newton steps; a positive `t` certifies strict feasibility and a
//! barrier duality bound below zero certifies infeasibility.
//!
//! The starting point comes from the closed-loop discrete Lyapunov equation,
//! which also serves as the stabilization check for `K`.
//!
//! Physical models mix state and input units whose scales differ by many
//! orders of magnitude, which puts the seed `H` beyond double precision. The
//! problem is therefore solved in diagonally balanced coordinates
//! `x = T xi`, `u = s v` (unit diagonal of the seed `P` and `Gamma`), where
//! `H` becomes `D H D` with `D = diag(T, s)`. The bounds `I <= D H D <= beta I`
//! hold for the returned `(Gamma, P)`, which are mapped back to the original
//! coordinates. The matched feedback is coordinate independent.

use nalgebra::{DMatrix, DVector};

use super::lyap::{discrete_lyapunov, spectral_radius};
use super::sym::{sym_eig, SymMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Feedback to be matched, `u = -K x`.
    pub k: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LmiOptions {
    /// Certificate tolerance on the recomputed eigenvalues.
    pub tol: f64,
    /// Relative width of the final `beta` bracket.
    pub bisection_rel: f64,
    pub max_newton: usize,
}

impl Default for LmiOptions {
    fn default() -> Self {
        LmiOptions { tol: 1e-7, bisection_rel: 1e-6, max_newton: 400 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiCertificate {
    /// `lambda_min(H - I)`, nonnegative up to tolerance.
    pub min_eig_lower: f64,
    /// `lambda_max(H - beta I)`, nonpositive up to tolerance.
    pub max_eig_upper: f64,
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub gamma: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub beta: f64,
    /// Largest `beta` proven infeasible by the bisection.
    pub beta_lower: f64,
    /// `H(Gamma, P)` in the original coordinates.
    pub h: DMatrix<f64>,
    /// Diagonal of the balancing `D`; the certificate refers to `D H D`.
    pub balance: DVector<f64>,
    pub certificate: LmiCertificate,
}

impl LmiProblem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, k: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dims("LMI A", "square", format!("{}x{}", n, a.ncols())));
        }
        let m = b.ncols();
        if b.nrows() != n {
            return Err(Error::dims("LMI B rows", n, b.nrows()));
        }
        if k.nrows() != m || k.ncols() != n {
            return Err(Error::dims("LMI K", format!("{m}x{n}"), format!("{}x{}", k.nrows(), k.ncols())));
        }
        if a.iter().chain(b.iter()).chain(k.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LMI data"));
        }
        Ok(LmiProblem { a, b, k })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// `H_Gamma + H_P`.
    pub fn h_of(&self, gamma: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (self.n_states(), self.n_inputs());
        let (a, b, k) = (&self.a, &self.b, &self.k);
        let mut h = DMatrix::zeros(n + m, n + m);
        let q = k.transpose() * gamma * k + p - a.transpose() * p * a;
        let s = gamma * k - b.transpose() * p * a;
        let r = gamma - b.transpose() * p * b;
        h.view_mut((0, 0), (n, n)).copy_from(&q);
        h.view_mut((n, 0), (m, n)).copy_from(&s);
        h.view_mut((0, n), (n, m)).copy_from(&s.transpose());
        h.view_mut((n, n), (m, m)).copy_from(&r);
        super::symmetrize(&h)
    }

    fn n_vars(&self) -> usize {
        let (n, m) = (self.n_states(), self.n_inputs());
        m * (m + 1) / 2 + n * (n + 1) / 2
    }

    fn unpack(&self, y: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.n_states(), self.n_inputs());
        let mut gamma = DMatrix::zeros(m, m);
        let mut p = DMatrix::zeros(n, n);
        let mut it = y.iter();
        for i in 0..m {
            for j in i..m {
                let v = *it.next().unwrap();
                gamma[(i, j)] = v;
                gamma[(j, i)] = v;
            }
        }
        for i in 0..n {
            for j in i..n {
                let v = *it.next().unwrap();
                p[(i, j)] = v;
                p[(j, i)] = v;
            }
        }
        (gamma, p)
    }

    fn pack(&self, gamma: &DMatrix<f64>, p: &DMatrix<f64>) -> Vec<f64> {
        let (n, m) = (self.n_states(), self.n_inputs());
        let mut y = Vec::with_capacity(self.n_vars());
        for i in 0..m {
            for j in i..m {
                y.push(gamma[(i, j)]);
            }
        }
        for i in 0..n {
            for j in i..n {
                y.push(p[(i, j)]);
            }
        }
        y
    }

    /// `dH/dy_v` for every packed variable.
    fn basis(&self) -> Vec<DMatrix<f64>> {
        let nv = self.n_vars();
        (0..nv)
            .map(|v| {
                let mut y = vec![0.0; nv];
                y[v] = 1.0;
                let (g, p) = self.unpack(&y);
                self.h_of(&g, &p)
            })
            .collect()
    }
}

/// `D H D` for a balancing diagonal `d`.
pub fn balanced(h: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| d[i] * h[(i, j)] * d[j])
}

/// Diagonal scaling that gives the Lyapunov seed unit diagonal.
fn balancing(problem: &LmiProblem) -> Result<DVector<f64>> {
    let (n, m) = (problem.n_states(), problem.n_inputs());
    let a_cl = &problem.a - &problem.b * &problem.k;
    if n > 0 && spectral_radius(&a_cl) >= 1.0 {
        return Err(Error::LmiInfeasible);
    }
    let mut d = DVector::from_element(n + m, 1.0);
    if n == 0 {
        return Ok(d);
    }
    let p0 = discrete_lyapunov(&a_cl, &DMatrix::identity(n, n))?;
    let c = a_cl.transpose() * &p0 * &problem.b;
    let gamma0 = problem.b.transpose() * &p0 * &problem.b + c.transpose() * &c + DMatrix::identity(m, m);
    for i in 0..n {
        d[i] = 1.0 / p0[(i, i)].sqrt();
    }
    for j in 0..m {
        d[n + j] = 1.0 / gamma0[(j, j)].sqrt();
    }
    if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonFinite("LMI balancing"));
    }
    Ok(d)
}

pub fn solve_lmi(problem: &LmiProblem, opts: &LmiOptions) -> Result<LmiSolution> {
    let (n, m) = (problem.n_states(), problem.n_inputs());
    let d = balancing(problem)?;
    let t = d.rows(0, n);
    let s = d.rows(n, m);
    // xi = T^-1 x, v = s^-1 u
    let scaled = LmiProblem::new(
        DMatrix::from_fn(n, n, |i, j| problem.a[(i, j)] * t[j] / t[i]),
        DMatrix::from_fn(n, m, |i, j| problem.b[(i, j)] * s[j] / t[i]),
        DMatrix::from_fn(m, n, |i, j| problem.k[(i, j)] * t[j] / s[i]),
    )?;
    let inner = solve_lmi_core(&scaled, opts)?;
    let gamma = DMatrix::from_fn(m, m, |i, j| inner.gamma[(i, j)] / (s[i] * s[j]));
    let p = DMatrix::from_fn(n, n, |i, j| inner.p[(i, j)] / (t[i] * t[j]));
    let h = problem.h_of(&gamma, &p);
    let certificate = certify(&balanced(&h, &d), inner.beta)?;
    if certificate.min_eig_lower < -opts.tol || certificate.max_eig_upper > opts.tol * inner.beta.max(1.0) {
        return Err(Error::NoConvergence {
            what: "matching LMI certificate",
            iterations: 0,
            residual: certificate.min_eig_lower.min(-certificate.max_eig_upper),
        });
    }
    Ok(LmiSolution { gamma, p, beta: inner.beta, beta_lower: inner.beta_lower, h, balance: d, certificate })
}

fn solve_lmi_core(problem: &LmiProblem, opts: &LmiOptions) -> Result<LmiSolution> {
    let (n, m) = (problem.n_states(), problem.n_inputs());
    let dim = n + m;

    // Lyapunov seed; doubles as the stabilization check.
    let a_cl = &problem.a - &problem.b * &problem.k;
    if n > 0 && spectral_radius(&a_cl) >= 1.0 {
        return Err(Error::LmiInfeasible);
    }
    let p0 = if n > 0 { discrete_lyapunov(&a_cl, &DMatrix::identity(n, n))? } else { DMatrix::zeros(0, 0) };
    let c = a_cl.transpose() * &p0 * &problem.b;
    let gamma0 = problem.b.transpose() * &p0 * &problem.b + c.transpose() * &c + DMatrix::identity(m, m);
    let h0 = problem.h_of(&gamma0, &p0);
    let e0 = sym_eig(&SymMatrix::symmetrized(&h0))?;
    if !(e0.min() > 0.0) {
        return Err(Error::LmiInfeasible);
    }
    let scale = 1.0 / e0.min();
    let mut best = problem.pack(&(gamma0 * scale), &(p0 * scale));
    let mut hi = (e0.max() / e0.min()).max(1.0);
    let mut lo = 1.0;

    let basis = problem.basis();
    let mut ctx = Barrier { basis: &basis, dim, max_newton: opts.max_newton };

    while (hi - lo) > opts.bisection_rel * hi {
        let mid = (lo * hi).sqrt().max(lo + 0.25 * (hi - lo)).min(hi - 0.25 * (hi - lo));
        match ctx.feasible(&best, mid)? {
            Some(point) => {
                best = point;
                hi = mid;
            }
            None => lo = mid,
        }
    }

    let (gamma, p) = problem.unpack(&best);
    let h = problem.h_of(&gamma, &p);
    // tighten: scale so that lambda_min(H) = 1
    let e = sym_eig(&SymMatrix::symmetrized(&h))?;
    let s = 1.0 / e.min();
    let (gamma, p) = (gamma * s, p * s);
    let h = problem.h_of(&gamma, &p);
    let certificate = certify(&h, hi)?;
    if certificate.min_eig_lower < -opts.tol || certificate.max_eig_upper > opts.tol * hi.max(1.0) {
        return Err(Error::NoConvergence {
            what: "matching LMI certificate",
            iterations: 0,
            residual: certificate.min_eig_lower.min(-certificate.max_eig_upper),
        });
    }
    Ok(LmiSolution { gamma, p, beta: hi, beta_lower: lo, h, balance: DVector::from_element(dim, 1.0), certificate })
}

/// Recomputes the certificate eigenvalues from scratch.
pub(crate) fn certify(h: &DMatrix<f64>, beta: f64) -> Result<LmiCertificate> {
    let e = sym_eig(&SymMatrix::symmetrized(h))?;
    Ok(LmiCertificate { min_eig_lower: e.min() - 1.0, max_eig_upper: e.max() - beta })
}

struct Barrier<'a> {
    basis: &'a [DMatrix<f64>],
    dim: usize,
    max_newton: usize,
}

impl Barrier<'_> {
    fn h(&self, y: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (g, &v) in self.basis.iter().zip(y) {
            h += g * v;
        }
        h
    }

    /// Slack matrices for `(y, t)` at `beta`; `None` when not strictly inside.
    fn slacks(&self, y: &[f64], t: f64, beta: f64) -> Option<(DMatrix<f64>, DMatrix<f64>, f64)> {
        let h = self.h(y);
        let id = DMatrix::<f64>::identity(self.dim, self.dim);
        let f1 = &h - &id * (1.0 + t);
        let f2 = &id * (beta - t) - &h;
        let c1 = f1.clone().cholesky()?;
        let c2 = f2.clone().cholesky()?;
        let logdet = 2.0 * (c1.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() + c2.l().diagonal().iter().map(|v| v.ln()).sum::<f64>());
        Some((c1.inverse(), c2.inverse(), logdet))
    }

    /// Strictly feasible point at `beta`, or `None` if none exists.
    fn feasible(&mut self, start: &[f64], beta: f64) -> Result<Option<Vec<f64>>> {
        let nv = self.basis.len();
        let mut y = start.to_vec();
        let e = sym_eig(&SymMatrix::symmetrized(&self.h(&y)))?;
        let mut t = (e.min() - 1.0).min(beta - e.max());
        if t > 0.0 {
            return Ok(Some(y));
        }
        let width = (beta - 1.0).max(1e-12);
        t -= 1e-3 * width + 1e-12;
        let barrier_degree = 2.0 * self.dim as f64;
        let mut weight = barrier_degree / width;
        let mut newton_steps = 0;

        loop {
            // centering at the current weight
            loop {
                let (f1i, f2i, logdet) = match self.slacks(&y, t, beta) {
                    Some(v) => v,
                    None => return Err(Error::Domain("barrier iterate left the feasible region".into())),
                };
                let psi = -weight * t - logdet;
                let nz = nv + 1;
                let mut w1 = Vec::with_capacity(nz);
                let mut w2 = Vec::with_capacity(nz);
                for g in self.basis {
                    w1.push(&f1i * g);
                    w2.push(-(&f2i * g));
                }
                w1.push(-f1i.clone());
                w2.push(-f2i.clone());
                let mut grad = DVector::zeros(nz);
                let mut hess = DMatrix::zeros(nz, nz);
                for i in 0..nz {
                    grad[i] = -w1[i].trace() - w2[i].trace();
                    for j in 0..=i {
                        let v = trace_prod(&w1[i], &w1[j]) + trace_prod(&w2[i], &w2[j]);
                        hess[(i, j)] = v;
                        hess[(j, i)] = v;
                    }
                }
                grad[nv] -= weight;

                let step = newton_direction(&hess, &grad);
                let decrement = -grad.dot(&step);
                if decrement <= 2e-10 {
                    break;
                }
                let mut alpha = 1.0;
                let mut accepted = false;
                while alpha > 1e-14 {
                    let y_new: Vec<f64> = y.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect();
                    let t_new = t + alpha * step[nv];
                    if let Some((_, _, ld)) = self.slacks(&y_new, t_new, beta) {
                        let psi_new = -weight * t_new - ld;
                        if psi_new <= psi - 0.25 * alpha * decrement {
                            y = y_new;
                            t = t_new;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                newton_steps += 1;
                if t > 0.0 {
                    return Ok(Some(y));
                }
                if !accepted || newton_steps > self.max_newton {
                    break;
                }
            }
            if t + barrier_degree / weight < 0.0 {
                return Ok(None);
            }
            if weight > 1e14 / width || newton_steps > self.max_newton {
                // cannot separate from the boundary at this precision
                return Ok(None);
            }
            weight *= 8.0;
        }
    }
}

fn trace_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let scale = hess.diagonal().amax().max(1e-300);
    let mut ridge = 0.0;
    loop {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(c) = h.cholesky() {
            return -c.solve(grad);
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
    }
}
