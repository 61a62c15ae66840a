//! Independent re-verification of synthesized filters: the claimed bounds are
//! checked against norms recomputed from the recovered filter matrices alone.

use serde::Serialize;

use crate::control::{build_sensitivity_system, error_h2_squared, hinf_norm, StateSpaceSystem};
use crate::error::{Error, Result};
use crate::linalg::{min_sym_eig, spd_inverse, symmetrize, Mat};
use crate::privacy::Adjacency;

use super::SynthesisResult;

const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerificationReport {
    /// Recomputed `‖error system‖₂²` (`+∞` when the error is unbounded).
    pub h2_squared: f64,
    /// Recomputed `‖sensitivity system‖∞`.
    pub hinf: f64,
    pub mu: f64,
    pub lambda: f64,
    pub rho: f64,
    /// `(μ − h2²) / μ`; negative values are violations.
    pub h2_slack: f64,
    /// `(λ − ρ² hinf²) / λ`.
    pub hinf_slack: f64,
    pub h2_pass: bool,
    pub hinf_pass: bool,
    pub spectral_radius: f64,
    /// Whether the filter (or `A − G C`) is Schur stable, or stability is
    /// irrelevant because the released output is identically zero.
    pub stability_pass: bool,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.h2_pass && self.hinf_pass && self.stability_pass
    }
}

fn relative_slack(bound: f64, value: f64) -> f64 {
    if value.is_infinite() {
        return f64::NEG_INFINITY;
    }
    (bound - value) / bound.abs().max(ABS_TOL)
}

/// Recomputes both constraint values of a synthesized filter.
pub fn verify_synthesis(
    result: &SynthesisResult,
    plant: &StateSpaceSystem,
    l: &Mat,
    adjacency: &Adjacency,
) -> Result<VerificationReport> {
    let filter = &result.filter;
    let t = adjacency.selection_matrix(plant.n_states())?;
    let mut notes = Vec::new();
    let radius = filter.spectral_radius()?;
    let output_zero = filter.h.amax() == 0.0 && filter.k.amax() == 0.0;
    let filter_stable = radius < 1.0;

    let hinf = if output_zero {
        0.0
    } else if filter_stable {
        hinf_norm(&build_sensitivity_system(filter, plant.c(), &t)?)?
    } else {
        notes.push("filter is not Schur stable; sensitivity unbounded".into());
        f64::INFINITY
    };

    let h2_squared = error_h2_squared(plant, l, filter)?;
    if h2_squared.is_infinite() {
        notes.push("estimation error has unstable observable modes".into());
    }

    let stability_pass = filter_stable || (l.amax() == 0.0 && output_zero);
    if !filter_stable && stability_pass {
        notes.push("filter dynamics not Schur stable, but the released output is identically zero".into());
    }
    let rho = adjacency.rho;
    let sens = rho * rho * hinf * hinf;
    Ok(VerificationReport {
        h2_squared,
        hinf,
        mu: result.mu,
        lambda: result.lambda,
        rho,
        h2_slack: relative_slack(result.mu, h2_squared),
        hinf_slack: relative_slack(result.lambda, sens),
        h2_pass: h2_squared <= result.mu * (1.0 + REL_TOL) + ABS_TOL,
        hinf_pass: sens <= result.lambda * (1.0 + REL_TOL) + ABS_TOL,
        spectral_radius: radius,
        stability_pass,
        notes,
    })
}

/// Smallest eigenvalue of the Schur complement `M₁₁ − M₁₂ M₂₂⁻¹ M₂₁` of a
/// symmetric matrix split after its first `k` rows. Fails if `M₂₂` is not
/// positive definite.
pub fn schur_complement_min_eig(m: &Mat, k: usize) -> Result<f64> {
    let n = m.nrows();
    if m.ncols() != n || k > n {
        return Err(Error::Dimension("Schur complement split outside matrix".into()));
    }
    let m = symmetrize(m);
    let m11 = m.view((0, 0), (k, k)).into_owned();
    let m12 = m.view((0, k), (k, n - k)).into_owned();
    let m22 = m.view((k, k), (n - k, n - k)).into_owned();
    let inv = spd_inverse(&m22, "trailing block")?;
    Ok(min_sym_eig(&(m11 - &m12 * inv * m12.transpose())))
}
