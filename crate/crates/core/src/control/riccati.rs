//! Filtering-form discrete algebraic Riccati equation
//!
//! ```text
//! P = A P Aᵀ + Q − (A P Cᵀ + S)(C P Cᵀ + R)⁻¹(A P Cᵀ + S)ᵀ
//! ```
//!
//! with `Q = B Bᵀ`, `R = D Dᵀ`, `S = B Dᵀ`. The cross term is removed by
//! `Ā = A − S R⁻¹ C`, `Q̄ = Q − S R⁻¹ Sᵀ`; the resulting equation is solved by
//! the structure-preserving doubling algorithm and the answer is polished by
//! the plain fixed-point recursion until successive iterates agree to 1e-12.

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, symmetrize, Mat};

use super::is_detectable;

const POLISH_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// Steady-state one-step prediction error covariance.
    pub p: Mat,
    /// Predictor gain `(A P Cᵀ + S)(C P Cᵀ + R)⁻¹`.
    pub gain: Mat,
    /// Current-estimate gain `P Cᵀ (C P Cᵀ + R)⁻¹`.
    pub filter_gain: Mat,
    /// Filtered error covariance `P − P Cᵀ (C P Cᵀ + R)⁻¹ C P`.
    pub filtered_p: Mat,
    pub iterations: usize,
    /// `‖Ric(P) − P‖ / ‖P‖`.
    pub residual: f64,
}

/// One step of the Riccati recursion `P ↦ Ric(P)`.
pub fn riccati_step(a: &Mat, c: &Mat, q: &Mat, r: &Mat, s: &Mat, p: &Mat) -> Result<Mat> {
    let innov = c * p * c.transpose() + r;
    let cross = a * p * c.transpose() + s;
    let k = &cross * spd_inverse(&innov, "innovation covariance")?;
    Ok(symmetrize(&(a * p * a.transpose() + q - k * cross.transpose())))
}

fn check_shapes(a: &Mat, c: &Mat, q: &Mat, r: &Mat, s: &Mat) -> Result<()> {
    let n = a.nrows();
    let p = c.nrows();
    let ok = a.ncols() == n && c.ncols() == n && q.shape() == (n, n) && r.shape() == (p, p) && s.shape() == (n, p);
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "DARE shapes: A {:?}, C {:?}, Q {:?}, R {:?}, S {:?}",
            a.shape(),
            c.shape(),
            q.shape(),
            r.shape(),
            s.shape()
        )))
    }
}

fn relative_step(next: &Mat, prev: &Mat) -> f64 {
    (next - prev).norm() / next.norm().max(1e-300)
}

/// Doubling iteration for `X = Ā X Āᵀ + Q̄ − Ā X Cᵀ(R + C X Cᵀ)⁻¹ C X Āᵀ`.
fn doubling(abar: &Mat, g0: &Mat, qbar: &Mat) -> Option<(Mat, usize)> {
    let n = abar.nrows();
    let eye = Mat::identity(n, n);
    let mut ak = abar.transpose();
    let mut gk = g0.clone();
    let mut hk = qbar.clone();
    for it in 1..=60 {
        let w = &eye + &gk * &hk;
        let winv = w.lu().try_inverse()?;
        let a_next = &ak * &winv * &ak;
        let g_next = symmetrize(&(&gk + &ak * &winv * &gk * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &winv * &ak));
        if !h_next.iter().all(|v| v.is_finite()) {
            return None;
        }
        let step = relative_step(&h_next, &hk);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if step <= 1e-15 || hk.norm() == 0.0 {
            return Some((hk, it));
        }
    }
    Some((hk, 60))
}

/// Steady-state Kalman solution. `s` is the process/measurement cross
/// covariance (`B Dᵀ`); pass a zero matrix when the noises are independent.
pub fn solve_dare(a: &Mat, c: &Mat, q: &Mat, r: &Mat, s: &Mat) -> Result<RiccatiSolution> {
    check_shapes(a, c, q, r, s)?;
    let n = a.nrows();
    let rinv = spd_inverse(r, "R").map_err(|_| Error::Domain("measurement noise must be full rank".into()))?;
    if min_eig_rel(r) <= 1e-14 {
        return Err(Error::Domain("measurement noise must be full rank".into()));
    }
    if !is_detectable(a, c)? {
        return Err(Error::Domain("(A, C) is not detectable".into()));
    }
    let abar = a - s * &rinv * c;
    let qbar = symmetrize(&(q - s * &rinv * s.transpose()));
    let g0 = symmetrize(&(c.transpose() * &rinv * c));

    let (mut p, mut iterations) = match doubling(&abar, &g0, &qbar) {
        Some((p, it)) if p.iter().all(|v| v.is_finite()) => (p, it),
        _ => (q.clone(), 0),
    };
    // fixed-point polish (also the fallback when doubling broke down)
    loop {
        let next = riccati_step(a, c, q, r, s, &p)?;
        iterations += 1;
        let step = relative_step(&next, &p);
        p = next;
        if step <= POLISH_TOL || p.norm() == 0.0 {
            break;
        }
        if iterations >= MAX_ITERATIONS {
            return Err(Error::NonConvergence {
                what: "Riccati iteration",
                iterations,
                residual: step,
            });
        }
    }
    let residual = relative_step(&riccati_step(a, c, q, r, s, &p)?, &p);
    let innov_inv = spd_inverse(&(c * &p * c.transpose() + r), "innovation covariance")?;
    let gain = (a * &p * c.transpose() + s) * &innov_inv;
    let filter_gain = &p * c.transpose() * &innov_inv;
    let filtered_p = symmetrize(&(&p - &filter_gain * c * &p));
    debug_assert_eq!(p.nrows(), n);
    Ok(RiccatiSolution {
        p,
        gain,
        filter_gain,
        filtered_p,
        iterations,
        residual,
    })
}

fn min_eig_rel(r: &Mat) -> f64 {
    if r.is_empty() {
        return 1.0;
    }
    let ev = symmetrize(r).symmetric_eigenvalues();
    let max = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ev.min() / max.max(f64::MIN_POSITIVE)
}

/// Closed-loop predictor matrix `A − G C`; kept here so stability of a
/// designed gain can be checked without building a full realization.
pub fn predictor_dynamics(a: &Mat, c: &Mat, gain: &Mat) -> Mat {
    a - gain * c
}
