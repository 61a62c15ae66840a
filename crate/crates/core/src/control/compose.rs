//! Filter realizations and the composite systems built from them.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, hstack, vstack, Mat};

use super::{h2_norm_squared, spectral_radius, RiccatiSolution, StateSpaceSystem};

/// Filter `x̂⁺ = F x̂ + G y`, `ẑ = H x̂ + K y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRealization {
    pub f: Mat,
    pub g: Mat,
    pub h: Mat,
    pub k: Mat,
}

impl FilterRealization {
    pub fn new(f: Mat, g: Mat, h: Mat, k: Mat) -> Result<Self> {
        let nf = f.nrows();
        if f.ncols() != nf || g.nrows() != nf || h.ncols() != nf || k.nrows() != h.nrows() || k.ncols() != g.ncols() {
            return Err(Error::Dimension(format!(
                "filter shapes F {:?}, G {:?}, H {:?}, K {:?} are inconsistent",
                f.shape(),
                g.shape(),
                h.shape(),
                k.shape()
            )));
        }
        if ![&f, &g, &h, &k].iter().all(|m| all_finite(m)) {
            return Err(Error::Invalid("filter matrices contain non-finite entries".into()));
        }
        Ok(Self { f, g, h, k })
    }

    /// All-zero filter of the given dimensions.
    pub fn zero(n_f: usize, n_y: usize, n_z: usize) -> Self {
        Self {
            f: Mat::zeros(n_f, n_f),
            g: Mat::zeros(n_f, n_y),
            h: Mat::zeros(n_z, n_f),
            k: Mat::zeros(n_z, n_y),
        }
    }

    /// One-step Kalman predictor: `F = A − G C`, output `L x̂_{t|t−1}`, `K = 0`.
    pub fn kalman_predictor(a: &Mat, c: &Mat, l: &Mat, sol: &RiccatiSolution) -> Result<Self> {
        let k = Mat::zeros(l.nrows(), c.nrows());
        Self::new(a - &sol.gain * c, sol.gain.clone(), l.clone(), k)
    }

    /// Current-estimate Kalman filter on the same state recursion: output
    /// `L x̂_{t|t} = L (I − K_f C) x̂_{t|t−1} + L K_f y_t`.
    pub fn kalman_filter(a: &Mat, c: &Mat, l: &Mat, sol: &RiccatiSolution) -> Result<Self> {
        let n = a.nrows();
        let h = l * (Mat::identity(n, n) - &sol.filter_gain * c);
        Self::new(a - &sol.gain * c, sol.gain.clone(), h, l * &sol.filter_gain)
    }

    pub fn n_states(&self) -> usize {
        self.f.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.g.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.h.nrows()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.f)
    }

    pub fn is_stable(&self) -> Result<bool> {
        Ok(self.spectral_radius()? < 1.0)
    }

    /// The filter itself as a system from `y` to `ẑ`.
    pub fn as_system(&self) -> Result<StateSpaceSystem> {
        StateSpaceSystem::new(self.f.clone(), self.g.clone(), self.h.clone(), self.k.clone())
    }

    /// Same filter with its output premultiplied by `m`.
    pub fn with_output_map(&self, m: &Mat) -> Result<Self> {
        if m.ncols() != self.n_outputs() {
            return Err(Error::Dimension("output map does not match filter outputs".into()));
        }
        Self::new(self.f.clone(), self.g.clone(), m * &self.h, m * &self.k)
    }
}

/// Error system from process/measurement noise `w` to `e = L x − ẑ`:
/// `Ã = [A 0; G C F]`, `B̃ = [B; G D]`, `C̃ = [L − K C, −H]`, `D̃ = −K D`.
pub fn build_error_system(plant: &StateSpaceSystem, l: &Mat, filter: &FilterRealization) -> Result<StateSpaceSystem> {
    let (n, ny) = (plant.n_states(), plant.n_outputs());
    let nf = filter.n_states();
    if l.ncols() != n {
        return Err(Error::Dimension(format!(
            "L has {} columns, plant has {n} states",
            l.ncols()
        )));
    }
    if filter.n_inputs() != ny || filter.n_outputs() != l.nrows() {
        return Err(Error::Dimension(format!(
            "filter maps {} inputs to {} outputs, plant has {ny} outputs and L {} rows",
            filter.n_inputs(),
            filter.n_outputs(),
            l.nrows()
        )));
    }
    let (a, b, c, d) = (plant.a(), plant.b(), plant.c(), plant.d());
    let top = hstack(&[a, &Mat::zeros(n, nf)]);
    let bottom = hstack(&[&(&filter.g * c), &filter.f]);
    let at = vstack(&[&top, &bottom]);
    let bt = vstack(&[b, &(&filter.g * d)]);
    let ct = hstack(&[&(l - &filter.k * c), &(-&filter.h)]);
    let dt = -(&filter.k * d);
    StateSpaceSystem::new(at, bt, ct, dt)
}

/// Error dynamics of the restricted class `F = A − G C`, `H = L`, `K = 0`:
/// `(A − G C, B − G D, L, 0)`, independent of the plant state.
pub fn build_restricted_error_system(plant: &StateSpaceSystem, l: &Mat, gain: &Mat) -> Result<StateSpaceSystem> {
    let n = plant.n_states();
    if gain.shape() != (n, plant.n_outputs()) || l.ncols() != n {
        return Err(Error::Dimension("gain or L incompatible with plant".into()));
    }
    StateSpaceSystem::new(
        plant.a() - gain * plant.c(),
        plant.b() - gain * plant.d(),
        l.clone(),
        Mat::zeros(l.nrows(), plant.n_inputs()),
    )
}

/// Whether `filter` is the observer `(A − G C, G, L, 0)` for this plant.
pub fn is_restricted_form(plant: &StateSpaceSystem, l: &Mat, filter: &FilterRealization) -> bool {
    let a = plant.a();
    filter.n_states() == plant.n_states()
        && filter.n_inputs() == plant.n_outputs()
        && filter.h.shape() == l.shape()
        && (&filter.f - (a - &filter.g * plant.c())).amax() <= 1e-9 * (1.0 + a.norm() + filter.f.norm())
        && (&filter.h - l).amax() <= 1e-12 * (1.0 + l.amax())
        && filter.k.amax() == 0.0
}

/// Squared H₂ norm of the estimation error `L x − ẑ`, or `+∞` when the error
/// is unbounded. Handles plants that are not Schur stable: observer-form
/// filters use the restricted error dynamics, other filters the minimal
/// realization of the full error system (unstable plant modes are harmless
/// only when they are cancelled in `L x − ẑ`).
pub fn error_h2_squared(plant: &StateSpaceSystem, l: &Mat, filter: &FilterRealization) -> Result<f64> {
    if l.amax() == 0.0 && filter.h.amax() == 0.0 && filter.k.amax() == 0.0 {
        return Ok(0.0);
    }
    if !filter.is_stable()? {
        return Ok(f64::INFINITY);
    }
    if is_restricted_form(plant, l, filter) {
        return h2_norm_squared(&build_restricted_error_system(plant, l, &filter.g)?);
    }
    let err = build_error_system(plant, l, filter)?;
    if spectral_radius(plant.a())? < 1.0 {
        return h2_norm_squared(&err);
    }
    let err = err.minimal(1e-9)?;
    if err.n_states() == 0 || spectral_radius(err.a())? < 1.0 {
        h2_norm_squared(&err)
    } else {
        Ok(f64::INFINITY)
    }
}

/// Map from a deviation `δx` of the protected coordinates to the deviation of
/// the released estimate: `(F, G C T, H, K C T)`.
pub fn build_sensitivity_system(filter: &FilterRealization, c: &Mat, t: &Mat) -> Result<StateSpaceSystem> {
    if c.nrows() != filter.n_inputs() || t.nrows() != c.ncols() || t.ncols() != c.ncols() {
        return Err(Error::Dimension(format!(
            "sensitivity shapes: filter inputs {}, C {:?}, T {:?}",
            filter.n_inputs(),
            c.shape(),
            t.shape()
        )));
    }
    let ct = c * t;
    StateSpaceSystem::new(filter.f.clone(), &filter.g * &ct, filter.h.clone(), &filter.k * &ct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{h2_norm_squared, hinf_norm, max_response_gap, solve_dare};

    fn traffic() -> (StateSpaceSystem, Mat) {
        let sys = StateSpaceSystem::new(
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            Mat::from_row_slice(2, 2, &[0.5, 0.0, 1.0, 0.0]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        (sys, Mat::from_row_slice(1, 2, &[0.0, 1.0]))
    }

    fn dare(sys: &StateSpaceSystem) -> RiccatiSolution {
        let (b, d) = (sys.b(), sys.d());
        solve_dare(
            sys.a(),
            sys.c(),
            &(b * b.transpose()),
            &(d * d.transpose()),
            &(b * d.transpose()),
        )
        .unwrap()
    }

    #[test]
    fn zero_filter_error_is_plant_output() {
        let plant = StateSpaceSystem::new(
            Mat::from_element(1, 1, 0.5),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 0.0),
        )
        .unwrap();
        let l = Mat::from_element(1, 1, 2.0);
        let err = build_error_system(&plant, &l, &FilterRealization::zero(1, 1, 1)).unwrap();
        let reference = StateSpaceSystem::new(plant.a().clone(), plant.b().clone(), l, Mat::zeros(1, 1)).unwrap();
        assert!(max_response_gap(&err, &reference, 64).unwrap() < 1e-12);
    }

    #[test]
    fn kalman_error_h2_matches_riccati() {
        let (plant, l) = traffic();
        let sol = dare(&plant);
        let pred = FilterRealization::kalman_predictor(plant.a(), plant.c(), &l, &sol).unwrap();
        let e = build_error_system(&plant, &l, &pred).unwrap();
        assert_eq!(e.n_states(), 4);
        // the plant's marginally stable mode is unobservable from the error
        let minimal = e.minimal(1e-9).unwrap();
        assert_eq!(minimal.n_states(), 2);
        let mse = (&l * &sol.p * l.transpose())[(0, 0)];
        assert!((h2_norm_squared(&minimal).unwrap() - mse).abs() < 1e-9 * mse);
        let reduced = build_restricted_error_system(&plant, &l, &sol.gain).unwrap();
        assert!((h2_norm_squared(&reduced).unwrap() - mse).abs() < 1e-9 * mse);

        let filt = FilterRealization::kalman_filter(plant.a(), plant.c(), &l, &sol).unwrap();
        assert!((filt.k[(0, 0)] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn restricted_class_reduces_state_dimension() {
        // stable plant so both realizations can be evaluated on the circle
        let plant = StateSpaceSystem::new(
            Mat::from_row_slice(2, 2, &[0.6, 0.2, -0.1, 0.7]),
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.0]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        let l = Mat::from_row_slice(1, 2, &[0.0, 1.0]);
        let gain = Mat::from_row_slice(2, 1, &[0.4, 0.1]);
        let filter =
            FilterRealization::new(plant.a() - &gain * plant.c(), gain.clone(), l.clone(), Mat::zeros(1, 1)).unwrap();
        let full = build_error_system(&plant, &l, &filter).unwrap();
        let reduced = build_restricted_error_system(&plant, &l, &gain).unwrap();
        assert_eq!((full.n_states(), reduced.n_states()), (4, 2));
        assert!(max_response_gap(&full, &reduced, 256).unwrap() < 1e-10);
    }

    #[test]
    fn sensitivity_trivial_cases() {
        let (plant, l) = traffic();
        let zero = FilterRealization::zero(2, 1, 1);
        let t = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            hinf_norm(&build_sensitivity_system(&zero, plant.c(), &t).unwrap()).unwrap(),
            0.0
        );
        let sol = dare(&plant);
        let pred = FilterRealization::kalman_predictor(plant.a(), plant.c(), &l, &sol).unwrap();
        let s0 = build_sensitivity_system(&pred, plant.c(), &Mat::zeros(2, 2)).unwrap();
        assert_eq!(hinf_norm(&s0).unwrap(), 0.0);
        let s = build_sensitivity_system(&pred, plant.c(), &t).unwrap();
        let gamma = hinf_norm(&s).unwrap();
        assert!((gamma - (4.0f64 / 7.0).sqrt()).abs() < 1e-6, "{gamma}");
    }

    #[test]
    fn shape_errors() {
        let (plant, l) = traffic();
        let bad = FilterRealization::zero(2, 2, 1);
        assert!(matches!(build_error_system(&plant, &l, &bad), Err(Error::Dimension(_))));
        assert!(
            FilterRealization::new(Mat::zeros(2, 2), Mat::zeros(3, 1), Mat::zeros(1, 2), Mat::zeros(1, 1)).is_err()
        );
    }
}
