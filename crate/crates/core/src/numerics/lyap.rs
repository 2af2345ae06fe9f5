use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Solves `P - A^T P A = Q` for symmetric `P` by vectorization. Intended for
/// the handful of states this crate works with.
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::dims("discrete_lyapunov", format!("{n}x{n}"), format!("{}x{}", q.nrows(), q.ncols())));
    }
    let at = a.transpose();
    let nn = n * n;
    // vec(A^T P A) = (A^T ⊗ A^T) vec(P), column-major vec
    let mut lhs = DMatrix::<f64>::identity(nn, nn);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    lhs[(i * n + k, j * n + l)] -= at[(i, j)] * at[(k, l)];
                }
            }
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(q.as_slice());
    let sol = lhs.lu().solve(&rhs).ok_or_else(|| Error::Domain("Lyapunov operator singular (eigenvalue pair on unit circle)".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(super::symmetrize(&p))
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}
