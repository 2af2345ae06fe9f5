use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PADE_ORDER: usize = 6;

/// Matrix exponential by scaling and squaring with a diagonal Padé(6)
/// approximant. The scaled matrix has infinity norm at most 1/2.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::dims("expm", "square", format!("{}x{}", n, m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expm input"));
    }
    let norm = (0..n).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut squarings = 0_i32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as i32;
    }
    let x = m / 2f64.powi(squarings);

    let mut c = 1.0;
    let mut num = DMatrix::<f64>::identity(n, n);
    let mut den = DMatrix::<f64>::identity(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    let q = PADE_ORDER as f64;
    for k in 1..=PADE_ORDER {
        let kf = k as f64;
        c *= (q - kf + 1.0) / (kf * (2.0 * q - kf + 1.0));
        power = &power * &x;
        num += &power * c;
        if k % 2 == 0 {
            den += &power * c;
        } else {
            den -= &power * c;
        }
    }
    let mut r = den.lu().solve(&num).ok_or(Error::Domain("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_identity() {
        let e = expm(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
    }

    #[test]
    fn scalar_matches_exp() {
        for a in [-40.0, -0.0437, 0.3, 2.5, 17.0] {
            let e = expm(&DMatrix::from_element(1, 1, a)).unwrap();
            assert!(((e[(0, 0)] - a.exp()) / a.exp()).abs() < 1e-13, "a = {a}");
        }
    }

    #[test]
    fn rotation_generator() {
        let w = 1.7;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let e = expm(&m).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[w.cos(), -w.sin(), w.sin(), w.cos()]);
        assert!((e - want).norm() < 1e-13);
    }

    #[test]
    fn nilpotent_truncates() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 0.0]);
        let e = expm(&m).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 1.0]);
        assert!((e - want).norm() < 1e-14);
    }
}
