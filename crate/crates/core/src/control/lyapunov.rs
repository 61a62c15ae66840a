use crate::error::{Error, Result};
use crate::linalg::{kron, symmetrize, Mat};

use super::spectral_radius;

/// Solves `A P Aᵀ − P + Q = 0` for Schur-stable `A`.
///
/// Direct Kronecker solve with one step of iterative refinement. The state
/// dimensions handled here are small (error systems of a few participants'
/// states), so the `n² × n²` system is cheap.
pub fn solve_discrete_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov needs square A and matching Q, got A {:?}, Q {:?}",
            a.shape(),
            q.shape()
        )));
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    if spectral_radius(a)? >= 1.0 {
        return Err(Error::Domain("Lyapunov requires Schur stability".into()));
    }
    let q = symmetrize(q);
    // vec(A P Aᵀ) = (A ⊗ A) vec(P) for column-major vec.
    let lhs = Mat::identity(n * n, n * n) - kron(a, a);
    let lu = lhs.lu();
    let solve = |rhs: &Mat| -> Result<Mat> {
        let v = nalgebra::DVector::from_column_slice(rhs.as_slice());
        let x = lu
            .solve(&v)
            .ok_or_else(|| Error::Numerical("Lyapunov operator singular".into()))?;
        Ok(Mat::from_column_slice(n, n, x.as_slice()))
    };
    let mut p = solve(&q)?;
    let residual = a * &p * a.transpose() - &p + &q;
    p += solve(&residual)?;
    Ok(symmetrize(&p))
}

pub fn lyapunov_residual(a: &Mat, p: &Mat, q: &Mat) -> f64 {
    (a * p * a.transpose() - p + q).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: partial sums of Σ Aᵏ Q (Aᵀ)ᵏ.
    fn series(a: &Mat, q: &Mat, terms: usize) -> Mat {
        let mut p = Mat::zeros(a.nrows(), a.nrows());
        let mut ak = Mat::identity(a.nrows(), a.nrows());
        for _ in 0..terms {
            p += &ak * q * ak.transpose();
            ak = a * ak;
        }
        p
    }

    #[test]
    fn zero_dynamics_returns_q() {
        let q = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = solve_discrete_lyapunov(&Mat::zeros(2, 2), &q).unwrap();
        assert!((p - q).norm() < 1e-14);
    }

    #[test]
    fn scalar_geometric_series() {
        let a = Mat::from_element(1, 1, 0.5);
        let q = Mat::from_element(1, 1, 1.0);
        let oracle = series(&a, &q, 200)[(0, 0)];
        assert!((oracle - 4.0 / 3.0).abs() < 1e-14);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        assert!((p[(0, 0)] - oracle).abs() < 1e-13);
    }

    #[test]
    fn diagonal_per_coordinate_series() {
        let a = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.9]));
        let q = Mat::identity(2, 2);
        let oracle = series(&a, &q, 2000);
        assert!((oracle[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        assert!((oracle[(1, 1)] - 100.0 / 19.0).abs() < 1e-12);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        assert!((&p - &oracle).norm() < 1e-11);
        assert!(lyapunov_residual(&a, &p, &q) <= 1e-10 * q.norm());
    }

    #[test]
    fn unstable_rejected() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let err = solve_discrete_lyapunov(&a, &Mat::identity(2, 2)).unwrap_err();
        assert_eq!(err, Error::Domain("Lyapunov requires Schur stability".into()));
    }
}
