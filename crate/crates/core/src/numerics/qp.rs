//! Dense strictly convex QP:
//!
//! ```text
//!     minimize    1/2 x' H x + g' x + c0
//!     subject to  lo <= G x <= hi      (row-wise, infinite bounds allowed)
//! ```
//!
//! Solved with the Goldfarb–Idnani dual active-set method. The starting point
//! is the unconstrained minimizer; violated constraints are added one at a
//! time and the factorization `H^-1 = J J'` is kept orthogonally updated with
//! Givens rotations as constraints enter and leave the active set.

use nalgebra::{DMatrix, DVector};

use super::sym::{sym_eig, SymMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c0: f64,
    pub rows: DMatrix<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DenseQp {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, rows: DMatrix<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n {
            return Err(Error::dims("QP hessian", "square", format!("{}x{}", n, h.ncols())));
        }
        if g.len() != n {
            return Err(Error::dims("QP gradient", n, g.len()));
        }
        let m = rows.nrows();
        if m > 0 && rows.ncols() != n {
            return Err(Error::dims("QP constraint rows", n, rows.ncols()));
        }
        if lo.len() != m || hi.len() != m {
            return Err(Error::dims("QP bounds", m, format!("{}/{}", lo.len(), hi.len())));
        }
        if h.iter().chain(g.iter()).chain(rows.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP data"));
        }
        for (i, (l, u)) in lo.iter().zip(&hi).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::Domain(format!("QP row {i}: bounds [{l}, {u}] are inconsistent")));
            }
        }
        let scale = super::max_abs(&h).max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (h[(i, j)] - h[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::Domain(format!("QP hessian not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DenseQp { h, g, c0: 0.0, rows: if m == 0 { DMatrix::zeros(0, n) } else { rows }, lo, hi })
    }

    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Result<Self> {
        let n = h.nrows();
        Self::new(h, g, DMatrix::zeros(0, n), vec![], vec![])
    }

    pub fn with_constant(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x) + self.c0
    }

    /// Positive semidefiniteness: min eigenvalue >= -1e-8 ||H||.
    pub fn check_psd(&self) -> Result<()> {
        let eig = sym_eig(&SymMatrix::symmetrized(&self.h))?;
        let scale = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if eig.min() < -1e-8 * scale {
            return Err(Error::NotPositiveDefinite("QP hessian has a negative eigenvalue"));
        }
        Ok(())
    }

    /// Residuals of the KKT system for `(x, lambda)`, with `lambda[i] > 0`
    /// meaning the lower bound of row `i` pushes and `< 0` the upper bound.
    pub fn kkt_residuals(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
        let gx = &self.rows * x;
        let stat = &self.h * x + &self.g - self.rows.transpose() * lambda;
        let mut primal = 0.0_f64;
        let mut dual = 0.0_f64;
        let mut comp = 0.0_f64;
        for i in 0..self.n_rows() {
            let (l, u, v, lam) = (self.lo[i], self.hi[i], gx[i], lambda[i]);
            if l.is_finite() {
                primal = primal.max(l - v);
            }
            if u.is_finite() {
                primal = primal.max(v - u);
            }
            if l == u {
                continue;
            }
            if lam > 0.0 {
                if l.is_finite() {
                    comp = comp.max(lam * (v - l).abs());
                } else {
                    dual = dual.max(lam);
                }
            } else if lam < 0.0 {
                if u.is_finite() {
                    comp = comp.max(-lam * (u - v).abs());
                } else {
                    dual = dual.max(-lam);
                }
            }
        }
        KktResiduals { stationarity: stat.amax(), primal: primal.max(0.0), dual, complementarity: comp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// Terminated normally but KKT residuals exceed `tol` relative to the
    /// problem scale.
    Inaccurate,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One signed multiplier per row, see [`DenseQp::kkt_residuals`].
    pub multipliers: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Rows active at the solution, in the order they entered.
    pub active_rows: Vec<usize>,
    pub objective: f64,
    pub kkt: KktResiduals,
}

/// `H^-1 = J J'` with `J = L^-T`, reusable across QPs sharing a Hessian.
#[derive(Debug, Clone)]
pub struct HessianFactor {
    j: DMatrix<f64>,
}

impl HessianFactor {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        let chol = h.clone().cholesky().ok_or(Error::NotPositiveDefinite("QP hessian (Cholesky failed)"))?;
        let l = chol.l();
        let l_inv = l.solve_lower_triangular(&DMatrix::identity(n, n)).ok_or(Error::NotPositiveDefinite("QP hessian (singular factor)"))?;
        Ok(HessianFactor { j: l_inv.transpose() })
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }
}

pub fn solve_qp(p: &DenseQp, tol: f64) -> Result<QpSolution> {
    let factor = HessianFactor::new(&p.h)?;
    solve_qp_factored(p, &factor, tol)
}

#[derive(Debug, Clone)]
struct Constraint {
    normal: DVector<f64>,
    rhs: f64,
    row: usize,
    /// +1 lower bound, -1 upper bound (normal is the negated row).
    side: f64,
    equality: bool,
}

fn constraints_of(p: &DenseQp) -> Vec<Constraint> {
    let mut cons: Vec<Constraint> = Vec::new();
    for i in 0..p.n_rows() {
        let row: DVector<f64> = p.rows.row(i).transpose();
        let (l, u) = (p.lo[i], p.hi[i]);
        if l == u {
            cons.push(Constraint { normal: row, rhs: l, row: i, side: 1.0, equality: true });
            continue;
        }
        if l.is_finite() {
            cons.push(Constraint { normal: row.clone(), rhs: l, row: i, side: 1.0, equality: false });
        }
        if u.is_finite() {
            cons.push(Constraint { normal: -row, rhs: -u, row: i, side: -1.0, equality: false });
        }
    }
    cons
}

/// Iterate of the dual active-set method.
struct DualState {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    x: DVector<f64>,
    /// Indices into the constraint list.
    active: Vec<usize>,
    /// Orientation of each active constraint's normal (+1 / -1, equalities may flip).
    orient: Vec<f64>,
    mult: Vec<f64>,
}

pub fn solve_qp_factored(p: &DenseQp, factor: &HessianFactor, tol: f64) -> Result<QpSolution> {
    let n = p.dim();
    if factor.dim() != n {
        return Err(Error::dims("QP factor", n, factor.dim()));
    }
    let cons = constraints_of(p);
    let state = DualState {
        j: factor.j.clone(),
        r: DMatrix::zeros(n, n),
        x: -(&factor.j * (factor.j.transpose() * &p.g)),
        active: Vec::new(),
        orient: Vec::new(),
        mult: Vec::new(),
    };
    dual_active_set(p, &cons, state, tol)
}

/// A fixed set of inequality sides, factored once, from which the dual
/// active-set method can start instead of the unconstrained minimizer.
///
/// Valid as a start whenever the multipliers of the equality-constrained
/// minimizer over this set are nonnegative; otherwise [`solve_qp_warm`]
/// falls back to the cold start. Only the constraint normals must match the
/// QPs it is used with; gradients and bounds may change.
#[derive(Debug, Clone)]
pub struct ActiveSetStart {
    /// `(row, lower side?)` in the order they were added.
    sides: Vec<(usize, bool)>,
    j: DMatrix<f64>,
    /// Upper-triangular `q x q` block.
    r: DMatrix<f64>,
    /// Oriented normals as columns.
    normals: DMatrix<f64>,
}

impl ActiveSetStart {
    pub fn new(factor: &HessianFactor, rows: &DMatrix<f64>, sides: &[(usize, bool)]) -> Result<Self> {
        let n = factor.dim();
        if rows.ncols() != n && rows.nrows() > 0 {
            return Err(Error::dims("active-set start rows", n, rows.ncols()));
        }
        let q = sides.len();
        if q > n {
            return Err(Error::Domain(format!("active-set start: {q} constraints for {n} variables")));
        }
        let mut j = factor.j.clone();
        let mut r = DMatrix::zeros(q, q);
        let mut normals = DMatrix::zeros(n, q);
        for (k, &(row, lower)) in sides.iter().enumerate() {
            if row >= rows.nrows() {
                return Err(Error::dims("active-set start row index", rows.nrows(), row));
            }
            let sign = if lower { 1.0 } else { -1.0 };
            let np: DVector<f64> = rows.row(row).transpose() * sign;
            let mut d = j.transpose() * &np;
            if d.rows(k, n - k).norm() <= 1e-12 * d.norm() {
                return Err(Error::Domain(format!("active-set start: row {row} is linearly dependent")));
            }
            for i in (k + 1..n).rev() {
                let (a, b) = (d[i - 1], d[i]);
                if b == 0.0 {
                    continue;
                }
                let (c, s) = givens(a, b);
                d[i - 1] = c * a + s * b;
                d[i] = 0.0;
                rotate_columns(&mut j, i - 1, i, c, s);
            }
            for i in 0..=k {
                r[(i, k)] = d[i];
            }
            normals.set_column(k, &np);
        }
        Ok(ActiveSetStart { sides: sides.to_vec(), j, r, normals })
    }

    pub fn len(&self) -> usize {
        self.sides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sides.is_empty()
    }
}

/// Like [`solve_qp_factored`], starting from the minimizer over `start`'s
/// constraints held with equality when that point is dual feasible.
pub fn solve_qp_warm(p: &DenseQp, factor: &HessianFactor, start: &ActiveSetStart, tol: f64) -> Result<QpSolution> {
    let n = p.dim();
    if factor.dim() != n || start.j.nrows() != n {
        return Err(Error::dims("QP factor", n, factor.dim()));
    }
    let cons = constraints_of(p);
    let q = start.len();
    let mut indices = Vec::with_capacity(q);
    for &(row, lower) in &start.sides {
        let side = if lower { 1.0 } else { -1.0 };
        match cons.iter().position(|c| c.row == row && c.side == side && !c.equality) {
            Some(k) => indices.push(k),
            None => return solve_qp_factored(p, factor, tol),
        }
    }
    if q == 0 {
        return solve_qp_factored(p, factor, tol);
    }
    // x = x_unc + J1 R^-T (b - N' x_unc), multipliers R^-1 R^-T (b - N' x_unc)
    let x_unc = -(&factor.j * (factor.j.transpose() * &p.g));
    let b = DVector::from_iterator(q, indices.iter().map(|&k| cons[k].rhs));
    let resid = b - start.normals.transpose() * &x_unc;
    let r = &start.r;
    let v = r.tr_solve_upper_triangular(&resid).ok_or(Error::Domain("QP warm start factor is singular".into()))?;
    let mult = r.solve_upper_triangular(&v).ok_or(Error::Domain("QP warm start factor is singular".into()))?;
    if mult.iter().any(|m| *m < 0.0) {
        return solve_qp_factored(p, factor, tol);
    }
    let x = x_unc + start.j.columns(0, q) * v;
    let mut r_full = DMatrix::zeros(n, n);
    r_full.view_mut((0, 0), (q, q)).copy_from(r);
    let state = DualState { j: start.j.clone(), r: r_full, x, active: indices, orient: vec![1.0; q], mult: mult.iter().copied().collect() };
    dual_active_set(p, &cons, state, tol)
}

fn dual_active_set(p: &DenseQp, cons: &[Constraint], state: DualState, tol: f64) -> Result<QpSolution> {
    let n = p.dim();
    let DualState { mut j, mut r, mut x, mut active, mut orient, mut mult } = state;
    let mut is_active = vec![false; cons.len()];
    for &k in &active {
        is_active[k] = true;
    }

    let max_iter = 50 * (n + cons.len()) + 100;
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // Pick the next constraint: pending equalities first, then the most
        // violated inequality.
        let mut pick: Option<(usize, f64)> = None;
        for (k, c) in cons.iter().enumerate() {
            if c.equality && !is_active[k] {
                let s = c.normal.dot(&x) - c.rhs;
                pick = Some((k, if s > 0.0 { -1.0 } else { 1.0 }));
                break;
            }
        }
        if pick.is_none() {
            let xnorm = x.amax();
            let mut worst = 0.0;
            for (k, c) in cons.iter().enumerate() {
                if is_active[k] || c.equality {
                    continue;
                }
                let s = c.normal.dot(&x) - c.rhs;
                let slack_tol = 1e-13 * (1.0 + c.rhs.abs() + c.normal.amax() * xnorm);
                if s < -slack_tol && s < worst {
                    worst = s;
                    pick = Some((k, 1.0));
                }
            }
        }
        let Some((p_idx, p_orient)) = pick else {
            break;
        };
        let np = &cons[p_idx].normal * p_orient;
        let bp = cons[p_idx].rhs * p_orient;
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                status = QpStatus::MaxIterations;
                break 'outer;
            }
            let q = active.len();
            let mut d = j.transpose() * &np;
            let tail = d.rows(q, n - q);
            let z = j.columns(q, n - q) * tail;
            let rvec = if q > 0 {
                r.view((0, 0), (q, q))
                    .solve_upper_triangular(&d.rows(0, q).into_owned())
                    .ok_or(Error::Domain("QP active set became degenerate".into()))?
            } else {
                DVector::zeros(0)
            };

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in 0..q {
                if cons[active[k]].equality {
                    continue;
                }
                if rvec[k] > 0.0 {
                    let ratio = mult[k] / rvec[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }

            let tail_sq = tail.norm_squared();
            let dependent = tail_sq.sqrt() <= 1e-12 * d.norm();
            let t2 = if dependent {
                f64::INFINITY
            } else {
                let s = np.dot(&x) - bp;
                (-s / tail_sq).max(0.0)
            };

            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible { rows: vec![cons[p_idx].row] });
            }

            for k in 0..q {
                mult[k] -= t * rvec[k];
            }
            u_plus += t;

            if t2.is_finite() {
                x += &z * t;
            }

            if t2 <= t1 {
                // add p
                for i in (q + 1..n).rev() {
                    let (a, b) = (d[i - 1], d[i]);
                    if b == 0.0 {
                        continue;
                    }
                    let (c, s) = givens(a, b);
                    d[i - 1] = c * a + s * b;
                    d[i] = 0.0;
                    rotate_columns(&mut j, i - 1, i, c, s);
                }
                for i in 0..=q {
                    r[(i, q)] = d[i];
                }
                active.push(p_idx);
                orient.push(p_orient);
                mult.push(u_plus);
                is_active[p_idx] = true;
                continue 'outer;
            }

            // drop the blocking constraint and retry p
            let l = drop_at.expect("finite partial step has an index");
            drop_constraint(&mut j, &mut r, q, l);
            is_active[active[l]] = false;
            active.remove(l);
            orient.remove(l);
            mult.remove(l);
        }
    }

    let mut lambda = DVector::zeros(p.n_rows());
    for (k, &ci) in active.iter().enumerate() {
        let c = &cons[ci];
        lambda[c.row] += c.side * orient[k] * mult[k];
    }
    let mut active_rows: Vec<usize> = active.iter().map(|&ci| cons[ci].row).collect();
    active_rows.dedup();
    let kkt = p.kkt_residuals(&x, &lambda);
    if status == QpStatus::Optimal && kkt.max() > tol * kkt_scale(p, &x) {
        status = QpStatus::Inaccurate;
    }
    let objective = p.objective(&x);
    Ok(QpSolution { x, multipliers: lambda, status, iterations, active_rows, objective, kkt })
}

fn kkt_scale(p: &DenseQp, x: &DVector<f64>) -> f64 {
    1.0 + p.g.amax() + super::max_abs(&p.h) * x.amax()
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    let h = a.hypot(b);
    (a / h, b / h)
}

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, k: usize, c: f64, s: f64) {
    for row in 0..m.nrows() {
        let (a, b) = (m[(row, i)], m[(row, k)]);
        m[(row, i)] = c * a + s * b;
        m[(row, k)] = -s * a + c * b;
    }
}

/// Removes active column `l` of the `q`-column upper-triangular `r`,
/// restoring triangularity and keeping `J` consistent.
fn drop_constraint(j: &mut DMatrix<f64>, r: &mut DMatrix<f64>, q: usize, l: usize) {
    for col in l..q - 1 {
        for row in 0..q {
            r[(row, col)] = r[(row, col + 1)];
        }
    }
    for row in 0..q {
        r[(row, q - 1)] = 0.0;
    }
    for i in l..q - 1 {
        let (a, b) = (r[(i, i)], r[(i + 1, i)]);
        if b == 0.0 {
            continue;
        }
        let (c, s) = givens(a, b);
        for col in i..q - 1 {
            let (x, y) = (r[(i, col)], r[(i + 1, col)]);
            r[(i, col)] = c * x + s * y;
            r[(i + 1, col)] = -s * x + c * y;
        }
        r[(i + 1, i)] = 0.0;
        rotate_columns(j, i, i + 1, c, s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn unconstrained_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_spd(&mut rng, 5);
        let g = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
        let sol = solve_qp(&DenseQp::unconstrained(h.clone(), g.clone()).unwrap(), 1e-9).unwrap();
        let want = -h.lu().solve(&g).unwrap();
        assert!((sol.x - want).amax() < 1e-12);
        assert_eq!(sol.status, QpStatus::Optimal);
    }

    #[test]
    fn one_dimensional_bound() {
        let p = DenseQp::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
            vec![1.0],
            vec![f64::INFINITY],
        )
        .unwrap();
        let sol = solve_qp(&p, 1e-9).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-15);
        assert!((sol.multipliers[0] - 2.0).abs() < 1e-14);
        assert_eq!(sol.active_rows, vec![0]);
    }

    #[test]
    fn upper_bound_gives_negative_multiplier() {
        // min (x-3)^2 s.t. x <= 1
        let p = DenseQp::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -6.0),
            DMatrix::from_element(1, 1, 1.0),
            vec![f64::NEG_INFINITY],
            vec![1.0],
        )
        .unwrap();
        let sol = solve_qp(&p, 1e-9).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-15);
        assert!((sol.multipliers[0] + 4.0).abs() < 1e-13);
    }

    #[test]
    fn equality_row() {
        // min x^2 + y^2 s.t. x + y = 2
        let p = DenseQp::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            vec![2.0],
            vec![2.0],
        )
        .unwrap();
        let sol = solve_qp(&p, 1e-9).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-14 && (sol.x[1] - 1.0).abs() < 1e-14);
        assert!(sol.kkt.max() < 1e-12);
    }

    #[test]
    fn infeasible_rows_reported() {
        let p = DenseQp::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            vec![2.0, f64::NEG_INFINITY],
            vec![f64::INFINITY, 1.0],
        )
        .unwrap();
        match solve_qp(&p, 1e-9) {
            Err(Error::Infeasible { rows }) => assert!(!rows.is_empty()),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn rejects_indefinite() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = DenseQp::unconstrained(h, DVector::zeros(2)).unwrap();
        assert!(p.check_psd().is_err());
        assert!(matches!(solve_qp(&p, 1e-9), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn rejects_crossed_bounds() {
        let r = DenseQp::new(DMatrix::identity(1, 1), DVector::zeros(1), DMatrix::identity(1, 1), vec![1.0], vec![0.0]);
        assert!(r.is_err());
    }

    #[test]
    fn box_constrained_random_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = 12;
            let h = random_spd(&mut rng, n);
            let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let rows = DMatrix::identity(n, n);
            let lo = vec![-0.3; n];
            let hi = vec![0.4; n];
            let p = DenseQp::new(h, g, rows, lo, hi).unwrap();
            let sol = solve_qp(&p, 1e-9).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal);
            assert!(sol.kkt.max() < 1e-9, "{:?}", sol.kkt);
        }
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut warm_used = 0;
        for _ in 0..300 {
            let n = rng.random_range(2..8);
            let m = rng.random_range(1..7);
            let h = random_spd(&mut rng, n);
            let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let rows = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let lo: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..0.5)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..2.0)).collect();
            let qp = DenseQp::new(h.clone(), g, rows.clone(), lo, hi).unwrap();
            let factor = HessianFactor::new(&h).unwrap();
            let q = rng.random_range(0..=m.min(n));
            let sides: Vec<(usize, bool)> = (0..q).map(|i| (i, rng.random_bool(0.5))).collect();
            let start = ActiveSetStart::new(&factor, &rows, &sides).unwrap();
            let cold = match solve_qp_factored(&qp, &factor, 1e-9) {
                Ok(c) => c,
                Err(Error::Infeasible { .. }) => {
                    assert!(matches!(solve_qp_warm(&qp, &factor, &start, 1e-9), Err(Error::Infeasible { .. })));
                    continue;
                }
                Err(e) => panic!("{e}"),
            };
            let warm = solve_qp_warm(&qp, &factor, &start, 1e-9).unwrap();
            assert_eq!(warm.status, QpStatus::Optimal);
            assert!((&warm.x - &cold.x).amax() < 1e-9, "{} vs {}", warm.x, cold.x);
            if warm.iterations < cold.iterations {
                warm_used += 1;
            }
        }
        assert!(warm_used > 0);
    }

    #[test]
    fn dependent_warm_start_rows_are_rejected() {
        let h = DMatrix::identity(2, 2);
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let factor = HessianFactor::new(&h).unwrap();
        assert!(ActiveSetStart::new(&factor, &rows, &[(0, true), (1, false)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, Strategy};

        /// Strictly convex QP with a known feasible point and one-sided rows.
        fn qp_strategy() -> impl Strategy<Value = DenseQp> {
            (1usize..=6, 0usize..=6, any::<u64>()).prop_map(|(n, m, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let h = random_spd(&mut rng, n);
                let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
                let rows = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
                let x_feas = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
                let mut lo = vec![f64::NEG_INFINITY; m];
                let mut hi = vec![f64::INFINITY; m];
                for i in 0..m {
                    let v = (rows.row(i) * &x_feas)[0];
                    if rng.random_bool(0.5) {
                        hi[i] = v + rng.random_range(0.0..0.5);
                    } else {
                        lo[i] = v - rng.random_range(0.0..0.5);
                    }
                }
                DenseQp::new(h, g, rows, lo, hi).unwrap()
            })
        }

        proptest! {
            #[test]
            fn row_order_does_not_change_the_solution(qp in qp_strategy(), shuffle in any::<u64>()) {
                let m = qp.n_rows();
                let mut perm: Vec<usize> = (0..m).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
                for i in (1..m).rev() {
                    perm.swap(i, rng.random_range(0..=i));
                }
                let rows = DMatrix::from_fn(m, qp.dim(), |r, c| qp.rows[(perm[r], c)]);
                let lo = perm.iter().map(|&r| qp.lo[r]).collect();
                let hi = perm.iter().map(|&r| qp.hi[r]).collect();
                let shuffled = DenseQp::new(qp.h.clone(), qp.g.clone(), rows, lo, hi).unwrap();
                let a = solve_qp(&qp, 1e-10).unwrap();
                let b = solve_qp(&shuffled, 1e-10).unwrap();
                prop_assert!((&a.x - &b.x).amax() <= 1e-9 * a.x.amax().max(1.0));
                for (k, &r) in perm.iter().enumerate() {
                    prop_assert!((a.multipliers[r] - b.multipliers[k]).abs() <= 1e-8 * a.multipliers.amax().max(1.0));
                }
            }

            #[test]
            fn solutions_satisfy_kkt(qp in qp_strategy()) {
                let sol = solve_qp(&qp, 1e-10).unwrap();
                prop_assert_eq!(sol.status, QpStatus::Optimal);
                prop_assert!(qp.kkt_residuals(&sol.x, &sol.multipliers).max() <= 1e-9);
                prop_assert!((qp.objective(&sol.x) - sol.objective).abs() <= 1e-9 * sol.objective.abs().max(1.0));
            }
        }
    }
}
