use crate::control::FilterRealization;
use crate::error::{Error, Result};
use crate::linalg::{inverse, spd_inverse, Mat};

/// Filter from the change-of-variables certificate with the deterministic
/// factorization `U = Z`, `V = (I − Y Z⁻¹) Z⁻¹`, so that `V Uᵀ = I − Y Z⁻¹`.
pub fn recover_filter(
    z: &Mat,
    y: &Mat,
    f_hat: &Mat,
    g_hat: &Mat,
    h_hat: &Mat,
    k_hat: &Mat,
) -> Result<FilterRealization> {
    let n = z.nrows();
    let z_inv = spd_inverse(z, "Z")?;
    let m = Mat::identity(n, n) - y * &z_inv;
    check_nonsingular(&m)?;
    let v = &m * &z_inv;
    recover_filter_with(z, y, f_hat, g_hat, h_hat, k_hat, z, &v)
}

fn check_nonsingular(m: &Mat) -> Result<()> {
    let sv = m.singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    // NaN singular values fail the test as well
    if smin.is_nan() || smin <= 1e-13 * smax.max(1.0) {
        return Err(Error::Numerical("degenerate certificate; perturb and re-solve".into()));
    }
    Ok(())
}

/// Filter recovery for an explicit factorization `V Uᵀ = I − Y Z⁻¹`:
/// `F = V⁻¹ F̂ Z⁻¹ U⁻ᵀ`, `G = V⁻¹ Ĝ`, `H = Ĥ Z⁻¹ U⁻ᵀ`, `K = K̂`.
#[allow(clippy::too_many_arguments)]
pub fn recover_filter_with(
    z: &Mat,
    y: &Mat,
    f_hat: &Mat,
    g_hat: &Mat,
    h_hat: &Mat,
    k_hat: &Mat,
    u: &Mat,
    v: &Mat,
) -> Result<FilterRealization> {
    let n = z.nrows();
    if [y, f_hat, u, v].iter().any(|m| m.shape() != (n, n)) || g_hat.nrows() != n || h_hat.ncols() != n {
        return Err(Error::Dimension("certificate shapes are inconsistent".into()));
    }
    let z_inv = spd_inverse(z, "Z")?;
    let target = Mat::identity(n, n) - y * &z_inv;
    check_nonsingular(&target)?;
    let residual = (v * u.transpose() - &target).norm();
    if residual > 1e-8 * target.norm().max(1.0) {
        return Err(Error::Invalid("factorization does not satisfy V Uᵀ = I − Y Z⁻¹".into()));
    }
    let v_inv = inverse(v, "V")?;
    let u_inv_t = inverse(&u.transpose(), "U")?;
    FilterRealization::new(
        &v_inv * f_hat * &z_inv * &u_inv_t,
        &v_inv * g_hat,
        h_hat * &z_inv * &u_inv_t,
        k_hat.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::max_response_gap;

    #[test]
    fn sign_flip_factorization() {
        let z = Mat::identity(2, 2);
        let y = Mat::identity(2, 2) * 2.0;
        let fh = Mat::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4]);
        let gh = Mat::from_row_slice(2, 1, &[1.0, -1.0]);
        let hh = Mat::from_row_slice(1, 2, &[0.5, 0.7]);
        let kh = Mat::from_element(1, 1, 0.3);
        let u = Mat::identity(2, 2);
        let v = -Mat::identity(2, 2);
        let f = recover_filter_with(&z, &y, &fh, &gh, &hh, &kh, &u, &v).unwrap();
        assert_eq!(f.f, -&fh);
        assert_eq!(f.g, -&gh);
        assert_eq!(f.h, hh);
        assert_eq!(f.k, kh);
    }

    #[test]
    fn transfer_function_independent_of_factorization() {
        let z = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let y = Mat::from_row_slice(2, 2, &[3.0, 0.1, 0.1, 2.5]);
        let fh = Mat::from_row_slice(2, 2, &[0.2, -0.1, 0.05, 0.3]);
        let gh = Mat::from_row_slice(2, 1, &[0.4, 0.2]);
        let hh = Mat::from_row_slice(1, 2, &[0.3, -0.6]);
        let kh = Mat::from_element(1, 1, 0.1);
        let a = recover_filter(&z, &y, &fh, &gh, &hh, &kh).unwrap();
        // second factorization: U = I, V = I − Y Z⁻¹
        let target = Mat::identity(2, 2) - &y * spd_inverse(&z, "Z").unwrap();
        let b = recover_filter_with(&z, &y, &fh, &gh, &hh, &kh, &Mat::identity(2, 2), &target).unwrap();
        let gap = max_response_gap(&a.as_system().unwrap(), &b.as_system().unwrap(), 512).unwrap();
        assert!(gap < 1e-8, "{gap}");
    }

    #[test]
    fn degenerate_certificate_reported() {
        let z = Mat::identity(2, 2);
        let e = recover_filter(&z, &z, &z, &Mat::zeros(2, 1), &Mat::zeros(1, 2), &Mat::zeros(1, 1)).unwrap_err();
        assert_eq!(
            e,
            Error::Numerical("degenerate certificate; perturb and re-solve".into())
        );
    }
}
