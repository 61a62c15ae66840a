//! Linear-systems mathematics: stability, Lyapunov and Riccati equations,
//! H₂/H∞ norms, and the composite error and sensitivity systems used by the
//! filter design routines.

mod compose;
mod lyapunov;
mod norms;
mod riccati;
mod system;

pub use compose::{
    build_error_system, build_restricted_error_system, build_sensitivity_system, error_h2_squared, is_restricted_form,
    FilterRealization,
};
pub use lyapunov::{lyapunov_residual, solve_discrete_lyapunov};
pub use norms::{
    brl_feasible, h2_norm, h2_norm_quadrature, h2_norm_squared, hinf_norm, hinf_norm_brl, hinf_peak, HinfOptions,
    HinfPeak,
};
pub use riccati::{predictor_dynamics, riccati_step, solve_dare, RiccatiSolution};
pub use system::StateSpaceSystem;

use crate::error::{Error, Result};
use crate::linalg::{to_complex, CMat, Mat};

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(crate::linalg::eigenvalues(a)?
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max))
}

pub fn is_schur_stable(a: &Mat) -> Result<bool> {
    Ok(spectral_radius(a)? < 1.0)
}

/// PBH test: `rank [λI − A; C] = n` for every eigenvalue with `|λ| ≥ 1`.
pub fn is_detectable(a: &Mat, c: &Mat) -> Result<bool> {
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n {
        return Err(Error::Dimension("detectability needs A n×n and C p×n".into()));
    }
    if n == 0 {
        return Ok(true);
    }
    let cc = to_complex(c);
    let ac = to_complex(a);
    for lambda in crate::linalg::eigenvalues(a)?.iter() {
        if lambda.norm() < 1.0 - 1e-12 {
            continue;
        }
        let shifted: CMat = CMat::identity(n, n) * *lambda - &ac;
        let mut stacked = CMat::zeros(n + c.nrows(), n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&shifted);
        stacked.view_mut((n, 0), (c.nrows(), n)).copy_from(&cc);
        // eigenvalues of defective blocks carry O(√eps) errors, so the rank
        // threshold is loose and scale aware
        let scale = 1.0 + a.norm() + c.norm();
        let sv = stacked.singular_values();
        let tol = 1e-7 * scale;
        if sv.iter().filter(|&&s| s > tol).count() < n {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Dual of [`is_detectable`]: `(A, B)` stabilizable iff `(Aᵀ, Bᵀ)` detectable.
pub fn is_stabilizable(a: &Mat, b: &Mat) -> Result<bool> {
    is_detectable(&a.transpose(), &b.transpose())
}

/// Transfer-function agreement of two systems on `points` frequencies in `[0, π]`.
pub fn max_response_gap(s1: &StateSpaceSystem, s2: &StateSpaceSystem, points: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..points {
        let w = std::f64::consts::PI * (k as f64 + 0.5) / points as f64;
        let g1 = s1.freq_response(w)?;
        let g2 = s2.freq_response(w)?;
        if g1.shape() != g2.shape() {
            return Err(Error::Dimension("transfer functions have different shapes".into()));
        }
        let diff = (&g1 - &g2).iter().map(|v| v.norm()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&Mat::identity(2, 2)).unwrap() - 1.0).abs() < 1e-12);
        let traffic = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!((spectral_radius(&traffic).unwrap() - 1.0).abs() < 1e-9);
        let d = Mat::from_row_slice(2, 2, &[0.3, 0.0, 0.0, -0.8]);
        assert!((spectral_radius(&d).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(spectral_radius(&Mat::zeros(2, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn detectability_pbh() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        // position measured: detectable
        assert!(is_detectable(&a, &Mat::from_row_slice(1, 2, &[1.0, 0.0])).unwrap());
        // velocity only: position never observed
        assert!(!is_detectable(&a, &Mat::from_row_slice(1, 2, &[0.0, 1.0])).unwrap());
        // stable unobservable modes are fine
        let s = Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.2]);
        assert!(is_detectable(&s, &Mat::from_row_slice(1, 2, &[0.0, 1.0])).unwrap());
        assert!(!is_detectable(&s, &Mat::from_row_slice(1, 2, &[1.0, 0.0])).unwrap());
        assert!(is_stabilizable(&a, &Mat::from_row_slice(2, 1, &[0.5, 1.0])).unwrap());
    }
}
