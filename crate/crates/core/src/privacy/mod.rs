//! Gaussian-mechanism calibration.
//!
//! `κ(δ, ε) = (K + √(K² + 2ε)) / (2ε)` with `K = Q⁻¹(δ)` turns an ℓ₂
//! sensitivity into a noise standard deviation. For dynamic channels the
//! sensitivity of a linear system to an ℓ₂-bounded input deviation is its H∞
//! norm times the deviation bound, which gives the output-perturbation noise
//! level `σ = κ · maxᵢ ‖Gᵢ‖∞ bᵢ`.

mod adjacency;

pub use adjacency::{Adjacency, AdjacencyPolicy};

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// `erfc(x)` for `x ≥ 0`: positive-term series `erf(x) = 2/√π e^{−x²}
/// Σ 2ⁿ x^{2n+1} / (2n+1)!!` below 2.5, Lentz evaluation of the Laplace
/// continued fraction above. Absolute error is at the level of a few ulps of 1.
fn erfc_nonneg(x: f64) -> f64 {
    const SQRT_PI: f64 = 1.772_453_850_905_516;
    if x < 2.5 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term > 1e-17 * sum {
            term *= 2.0 * x2 / (2.0 * n + 3.0);
            sum += term;
            n += 1.0;
        }
        1.0 - 2.0 / SQRT_PI * (-x2).exp() * sum
    } else {
        // erfc(x) = e^{−x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for k in 1..500 {
            let a = 0.5 * k as f64;
            d = x + a * d;
            if d.abs() < tiny {
                d = tiny;
            }
            c = x + a / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x * x).exp() / (SQRT_PI * f)
    }
}

/// Gaussian upper tail `Q(x) = P(N(0,1) ≥ x)`.
pub fn q_function(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x >= 0.0 {
        0.5 * erfc_nonneg(x / SQRT_2)
    } else {
        1.0 - 0.5 * erfc_nonneg(-x / SQRT_2)
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `x` with `Q(x) = p`, polished by Newton steps on `Q`.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("Q⁻¹ needs p in (0, 1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..3 {
        let pdf = std_normal_pdf(x);
        if pdf <= 0.0 || !pdf.is_finite() {
            break;
        }
        let step = (q_function(x) - p) / pdf;
        if !step.is_finite() {
            break;
        }
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Privacy budget `(ε, δ)` with its cached noise multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
    kappa: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(Error::Domain(format!(
                "delta must lie in (0, 0.5], got {delta}; above 0.5 the threshold Q⁻¹(δ) turns negative and the calibration no longer applies"
            )));
        }
        let k = q_inverse(delta)?;
        let kappa = (k + (k * k + 2.0 * epsilon).sqrt()) / (2.0 * epsilon);
        Ok(Self { epsilon, delta, kappa })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

pub fn kappa(budget: &PrivacyBudget) -> f64 {
    budget.kappa()
}

/// Noise standard deviation `κ · Δ₂` for a query with ℓ₂ sensitivity `Δ₂`.
pub fn gaussian_sigma(sensitivity: f64, budget: &PrivacyBudget) -> Result<f64> {
    if !(sensitivity.is_finite() && sensitivity >= 0.0) {
        return Err(Error::Domain(format!(
            "sensitivity must be nonnegative, got {sensitivity}"
        )));
    }
    Ok(budget.kappa() * sensitivity)
}

/// Output-perturbation noise level `κ · maxᵢ gainᵢ bᵢ` for channels with
/// incremental (for linear channels: H∞) gains `gainᵢ` and input deviation
/// bounds `bᵢ`.
pub fn dynamic_mechanism_sigma(channels: &[(f64, f64)], budget: &PrivacyBudget) -> Result<f64> {
    if channels.is_empty() {
        return Err(Error::Invalid("dynamic mechanism needs at least one channel".into()));
    }
    let mut worst: f64 = 0.0;
    for (i, &(gain, bound)) in channels.iter().enumerate() {
        if !(gain.is_finite() && gain >= 0.0 && bound.is_finite() && bound >= 0.0) {
            return Err(Error::Domain(format!(
                "channel {i}: gain {gain} and bound {bound} must be nonnegative"
            )));
        }
        worst = worst.max(gain * bound);
    }
    Ok(budget.kappa() * worst)
}

/// Mean squared error of the two perturbation architectures for channels with
/// H₂ norms `h2` and H∞ norms `hinf` and input energy bound `E`:
/// input perturbation `κ² E Σ ‖Gᵢ‖₂²`, output perturbation `κ² E maxᵢ ‖Gᵢ‖∞²`.
pub fn perturbation_mse(h2: &[f64], hinf: &[f64], energy: f64, budget: &PrivacyBudget) -> Result<(f64, f64)> {
    if h2.len() != hinf.len() {
        return Err(Error::Dimension(format!(
            "{} H2 norms but {} H-infinity norms",
            h2.len(),
            hinf.len()
        )));
    }
    if !(energy.is_finite() && energy >= 0.0) || h2.iter().chain(hinf).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain("norms and energy bound must be nonnegative".into()));
    }
    let k2e = budget.kappa().powi(2) * energy;
    let input = k2e * h2.iter().map(|g| g * g).sum::<f64>();
    let output = k2e * hinf.iter().map(|g| g * g).fold(0.0, f64::max);
    Ok((input, output))
}

/// `sup_t [Q((t − d)/σ) − e^ε Q(t/σ)]` over upper half-lines, including the
/// empty event, for a mean shift `d`.
fn upper_half_line_excess(d: f64, sigma: f64, epsilon: f64) -> f64 {
    if d <= 0.0 {
        // the first distribution is stochastically smaller: the excess never
        // beats the empty event
        return 0.0;
    }
    let ee = epsilon.exp();
    let excess = |t: f64| q_function((t - d) / sigma) - ee * q_function(t / sigma);
    // the only stationary point: densities ratio equals e^ε
    let t_star = sigma * sigma * epsilon / d + d / 2.0;
    let mut best = excess(t_star).max(0.0);
    // refined grid guard around the stationary point and across the bulk
    let span = 10.0 * sigma + d;
    let n = 2000;
    for k in 0..=n {
        let t = -span + 2.0 * span * k as f64 / n as f64;
        best = best.max(excess(t));
    }
    for k in -50..=50 {
        best = best.max(excess(t_star + sigma * 1e-3 * k as f64));
    }
    best
}

/// DP margin over half-line events between `N(mean_a, σ²)` and
/// `N(mean_b, σ²)`, checked in both directions and for both upper and lower
/// half-lines.
pub fn gaussian_pair_margin(mean_a: f64, mean_b: f64, sigma: f64, budget: &PrivacyBudget) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let d = mean_a - mean_b;
    let eps = budget.epsilon();
    // upper half-lines for (a, b) and (b, a); lower half-lines are the mirror
    // image, i.e. upper half-lines with the shift negated
    let worst = [d, -d]
        .iter()
        .map(|&s| upper_half_line_excess(s, sigma, eps))
        .fold(0.0, f64::max);
    Ok(budget.delta() - worst)
}

/// Half-line DP margin `δ − sup_t [Q((t − Δ)/σ) − e^ε Q(t/σ)]` of the scalar
/// Gaussian mechanism with sensitivity `Δ`. A nonnegative margin certifies the
/// half-line event family; it is not a proof over all measurable events.
pub fn verify_dp_scalar(sigma: f64, sensitivity: f64, budget: &PrivacyBudget) -> Result<f64> {
    if !(sensitivity.is_finite() && sensitivity >= 0.0) {
        return Err(Error::Domain(format!(
            "sensitivity must be nonnegative, got {sensitivity}"
        )));
    }
    gaussian_pair_margin(sensitivity, 0.0, sigma, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    /// Composite Simpson integration of the standard normal density on [a, b].
    fn simpson_tail(a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = std_normal_pdf(a) + std_normal_pdf(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * std_normal_pdf(a + h * k as f64);
        }
        acc * h / 3.0
    }

    /// Brute-force dense grid oracle for the half-line supremum.
    fn grid_margin(sigma: f64, d: f64, b: &PrivacyBudget) -> f64 {
        let ee = b.epsilon().exp();
        let n = 200_000;
        let mut best: f64 = 0.0;
        for k in 0..=n {
            let t = -10.0 * sigma + 20.0 * sigma * k as f64 / n as f64;
            best = best.max(q_function((t - d) / sigma) - ee * q_function(t / sigma));
        }
        b.delta() - best
    }

    #[test]
    fn q_function_examples() {
        assert_eq!(q_function(0.0), 0.5);
        assert!(q_function(40.0) < 1e-300);
        let oracle = simpson_tail(1.6449, 40.0, 200_000);
        assert!(
            (q_function(1.6449) - oracle).abs() < 1e-12,
            "{} {}",
            q_function(1.6449),
            oracle
        );
        assert!((q_function(1.6449) - 0.05).abs() < 1e-5);
        // reference values from 30-digit arithmetic
        let reference = [
            (-2.0, 0.977_249_868_051_820_8),
            (0.5, 0.308_537_538_725_986_9),
            (1.6449, 0.049_995_217_468_346_3),
            (3.4, 3.369_292_656_768_809e-4),
            (3.6, 1.591_085_901_575_339e-4),
            (8.0, 6.220_960_574_271_784e-16),
        ];
        for (x, q) in reference {
            assert!((q_function(x) - q).abs() < 1e-15, "Q({x}) = {}", q_function(x));
            assert!((q_function(x) - q).abs() <= 1e-12 * q, "relative Q({x})");
        }
    }

    #[test]
    fn q_inverse_examples() {
        assert_eq!(q_inverse(0.5).unwrap(), 0.0);
        // bisection oracle
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q_function(mid) > 0.05 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((q_inverse(0.05).unwrap() - lo).abs() < 1e-10);
        for k in -30..=30 {
            let x = k as f64 / 10.0;
            assert!((q_inverse(q_function(x)).unwrap() - x).abs() < 1e-10, "{x}");
        }
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(q_inverse(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn kappa_examples() {
        let b = PrivacyBudget::new(LN_2, 0.05).unwrap();
        assert!((kappa(&b) - 2.645674).abs() < 1e-5, "{}", kappa(&b));
        let b3 = PrivacyBudget::new(3f64.ln(), 0.05).unwrap();
        let k = q_inverse(0.05).unwrap();
        let formula = (k + (k * k + 2.0 * 3f64.ln()).sqrt()) / (2.0 * 3f64.ln());
        assert!((kappa(&b3) - formula).abs() < 1e-12);
        assert!((kappa(&b3) - 1.756340).abs() < 1e-5);
        let half = PrivacyBudget::new(0.7, 0.5).unwrap();
        assert!((kappa(&half) - 1.0 / (1.4f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0, 0.1).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0).is_err());
        let err = PrivacyBudget::new(1.0, 0.6).unwrap_err();
        assert!(err.to_string().contains("0.5"));
    }

    #[test]
    fn sigma_examples() {
        let b = PrivacyBudget::new(LN_2, 0.05).unwrap();
        assert_eq!(gaussian_sigma(0.0, &b).unwrap(), 0.0);
        assert!((gaussian_sigma(1.0, &b).unwrap() - 2.6457).abs() < 1e-4);
        assert!((gaussian_sigma(3.0, &b).unwrap() - 3.0 * b.kappa()).abs() < 1e-12);
        assert!(gaussian_sigma(-1.0, &b).is_err());

        assert!((dynamic_mechanism_sigma(&[(1.0, 1.0)], &b).unwrap() - b.kappa()).abs() < 1e-15);
        let e: f64 = 7.0;
        let ma: Vec<(f64, f64)> = (0..5).map(|_| (1.0, e.sqrt())).collect();
        assert!((dynamic_mechanism_sigma(&ma, &b).unwrap() - b.kappa() * e.sqrt()).abs() < 1e-12);
        let s = dynamic_mechanism_sigma(&[(0.5, 3.0), (2.0, 1.0)], &b).unwrap();
        assert!((s - 2.0 * b.kappa()).abs() < 1e-12);
        assert!(dynamic_mechanism_sigma(&[], &b).is_err());
    }

    #[test]
    fn perturbation_mse_examples() {
        let b = PrivacyBudget::new(0.5, 0.05).unwrap();
        let k2 = b.kappa().powi(2);
        assert_eq!(perturbation_mse(&[1.0], &[1.0], 0.0, &b).unwrap(), (0.0, 0.0));
        let (i, o) = perturbation_mse(&[0.7], &[0.7], 2.0, &b).unwrap();
        assert!((i - o).abs() < 1e-15 && (i - k2 * 2.0 * 0.49).abs() < 1e-12);
        assert!(perturbation_mse(&[1.0, 2.0], &[1.0], 1.0, &b).is_err());
    }

    #[test]
    fn verifier_examples() {
        let b = PrivacyBudget::new(LN_2, 0.05).unwrap();
        assert_eq!(verify_dp_scalar(1.3, 0.0, &b).unwrap(), b.delta());
        let sigma = gaussian_sigma(1.0, &b).unwrap();
        let m = verify_dp_scalar(sigma, 1.0, &b).unwrap();
        let oracle = grid_margin(sigma, 1.0, &b);
        assert!(m >= 0.0);
        assert!((m - oracle).abs() < 1e-9, "{m} vs {oracle}");
        let m10 = verify_dp_scalar(10.0 * sigma, 1.0, &b).unwrap();
        assert!(m10 > m);
        assert!(verify_dp_scalar(0.0, 1.0, &b).is_err());
    }

    proptest! {
        #[test]
        fn kappa_decreases_in_each_argument(eps in 0.05f64..3.0, ld in (1e-6f64).ln()..(0.4f64).ln(), f in 1.01f64..2.0) {
            let delta = ld.exp();
            let base = PrivacyBudget::new(eps, delta).unwrap().kappa();
            prop_assert!(base > 0.0);
            prop_assert!(PrivacyBudget::new(eps * f, delta).unwrap().kappa() < base);
            prop_assert!(PrivacyBudget::new(eps, (delta * f).min(0.5)).unwrap().kappa() < base);
        }

        #[test]
        fn calibration_is_sound(eps in 0.05f64..3.0, ld in (1e-6f64).ln()..(0.4f64).ln(), d in 0.01f64..100.0) {
            let b = PrivacyBudget::new(eps, ld.exp()).unwrap();
            let sigma = gaussian_sigma(d, &b).unwrap();
            prop_assert!(verify_dp_scalar(sigma, d, &b).unwrap() >= 0.0);
        }

        #[test]
        fn affine_post_processing_preserves_margin(
            eps in 0.05f64..3.0, delta in 0.001f64..0.5, d in 0.1f64..10.0,
            sigma in 0.1f64..20.0, a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], c in -50.0f64..50.0,
        ) {
            let b = PrivacyBudget::new(eps, delta).unwrap();
            let original = verify_dp_scalar(sigma, d, &b).unwrap();
            let mapped = gaussian_pair_margin(a * d + c, c, a.abs() * sigma, &b).unwrap();
            prop_assert!((original - mapped).abs() < 1e-12, "{} vs {}", original, mapped);
        }

        #[test]
        fn dynamic_sigma_permutation_and_scaling(
            ch in proptest::collection::vec((0.0f64..5.0, 0.0f64..5.0), 1..8), s in 0.1f64..10.0,
        ) {
            let b = PrivacyBudget::new(1.0, 0.05).unwrap();
            let base = dynamic_mechanism_sigma(&ch, &b).unwrap();
            let mut rev = ch.clone();
            rev.reverse();
            prop_assert_eq!(dynamic_mechanism_sigma(&rev, &b).unwrap(), base);
            let scaled: Vec<(f64, f64)> = ch.iter().map(|&(g, x)| (g, x * s)).collect();
            let got = dynamic_mechanism_sigma(&scaled, &b).unwrap();
            prop_assert!((got - s * base).abs() <= 1e-12 * (1.0 + s * base));
        }
    }
}
