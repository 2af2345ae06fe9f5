//! Small dense numerical kernels.

mod expm;
mod lmi;
mod lyap;
mod qp;
mod sym;

pub use expm::expm;
pub use lmi::{balanced, solve_lmi, LmiCertificate, LmiOptions, LmiProblem, LmiSolution};
pub use lyap::{discrete_lyapunov, spectral_radius};
pub use qp::{solve_qp, solve_qp_factored, solve_qp_warm, ActiveSetStart, DenseQp, HessianFactor, KktResiduals, QpSolution, QpStatus};
pub use sym::{sym_eig, SymEig, SymMatrix};

use nalgebra::DMatrix;

/// Max-abs entry.
pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
