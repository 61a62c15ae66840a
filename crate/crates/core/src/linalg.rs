//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex<f64>>;

/// Eigenvalues of a square matrix via the real Schur form. The QR iteration
/// can stall on exactly structured matrices (shift registers, nilpotent
/// blocks); such inputs are retried after an orthogonal similarity by a fixed
/// Householder reflector, which leaves the spectrum unchanged.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if !all_finite(a) {
        return Err(Error::Invalid("matrix contains non-finite entries".into()));
    }
    let max_iter = 1000 * n.max(10);
    let schur = |m: Mat| nalgebra::linalg::Schur::try_new(m, f64::EPSILON, max_iter);
    if let Some(s) = schur(a.clone()) {
        return Ok(s.complex_eigenvalues().iter().copied().collect());
    }
    let v = DVector::from_fn(n, |i, _| ((i as f64 + 1.0) * 0.754_877_666_246_692_8).fract() + 0.1);
    let h = Mat::identity(n, n) - (&v * v.transpose()) * (2.0 / v.norm_squared());
    match schur(&h * a * &h) {
        Some(s) => Ok(s.complex_eigenvalues().iter().copied().collect()),
        None => Err(Error::Numerical(format!(
            "eigenvalue iteration did not converge for a {n}x{n} matrix"
        ))),
    }
}

/// Builds a matrix from row slices. All rows must have the same length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Frobenius-norm relative difference `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    let scale = a.norm().max(b.norm()).max(f64::MIN_POSITIVE);
    (a - b).norm() / scale
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Smallest eigenvalue of the symmetric part of `m` (`+∞` for an empty matrix).
pub fn min_sym_eig(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_sym_eig(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest singular value (spectral norm). Zero for empty matrices.
pub fn max_singular(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn max_singular_complex(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    m.clone()
        .lu()
        .try_inverse()
        .filter(all_finite)
        .ok_or_else(|| Error::Numerical(format!("{what} is singular")))
}

/// Inverse of a symmetric positive definite matrix through Cholesky.
pub fn spd_inverse(m: &Mat, what: &str) -> Result<Mat> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    symmetrize(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

/// Numerical rank from singular values with a relative threshold.
pub fn rank_complex(m: &CMat, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn rank(m: &Mat, rel_tol: f64) -> usize {
    rank_complex(&to_complex(m), rel_tol)
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|v| Complex::new(v, 0.0))
}

/// Diagonal 0/1 selection matrix with ones at `indices`.
pub fn selection_matrix(dim: usize, indices: &[usize]) -> Result<Mat> {
    let mut t = Mat::zeros(dim, dim);
    for &i in indices {
        if i >= dim {
            return Err(Error::Dimension(format!(
                "selection index {i} outside state dimension {dim}"
            )));
        }
        t[(i, i)] = 1.0;
    }
    Ok(t)
}

/// Stacks matrices vertically; all must share the column count.
pub fn vstack(parts: &[&Mat]) -> Mat {
    let cols = parts.first().map_or(0, |m| m.ncols());
    let rows: usize = parts.iter().map(|m| m.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for m in parts {
        out.view_mut((r, 0), (m.nrows(), cols)).copy_from(*m);
        r += m.nrows();
    }
    out
}

pub fn hstack(parts: &[&Mat]) -> Mat {
    let rows = parts.first().map_or(0, |m| m.nrows());
    let cols: usize = parts.iter().map(|m| m.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for m in parts {
        out.view_mut((0, c), (rows, m.ncols())).copy_from(*m);
        c += m.ncols();
    }
    out
}

pub fn vec_from(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_shift_register() {
        // the unreflected QR iteration stalls on this matrix
        let mut a = Mat::zeros(9, 9);
        for i in 1..9 {
            a[(i, i - 1)] = 1.0;
        }
        let ev = eigenvalues(&a).unwrap();
        assert_eq!(ev.len(), 9);
        // a 9x9 Jordan block: eigenvalues are only determined to ~eps^(1/9)
        assert!(ev.iter().all(|e| e.norm() < 0.05), "{ev:?}");
        let rot = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = eigenvalues(&rot).unwrap();
        assert!(ev.iter().all(|e| (e.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn kron_shape_and_entries() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Mat::identity(2, 2);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (4, 4));
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(3, 1)], 3.0);
        assert_eq!(k[(1, 0)], 0.0);
    }

    #[test]
    fn selection_out_of_range() {
        assert!(selection_matrix(2, &[2]).is_err());
        let t = selection_matrix(3, &[0, 2]).unwrap();
        assert_eq!(&t * &t, t);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert_eq!(from_rows(&[]).unwrap().shape(), (0, 0));
    }
}
