//! Average-velocity estimation for a fleet of vehicles: the double-integrator
//! vehicle model, configuration, Monte Carlo simulation of every private
//! estimation scheme, and the CSV/JSON artifacts.

mod config;
mod output;
mod rng;
mod sim;

pub use config::SimulationConfig;
pub use output::{summary_json, write_traces_csv, F17};
pub use rng::{stream_id, StreamKind};
pub use sim::{
    convergence_report, run_simulation, SchemeOutcome, SchemeSummary, Settling, SimulationOutput, Traces,
    SETTLE_FACTOR, SETTLE_RUN,
};

use nalgebra::DVector;

use crate::control::StateSpaceSystem;
use crate::dpkalman::ParticipantModel;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::privacy::AdjacencyPolicy;

pub fn kmh_to_ms(v: f64) -> f64 {
    v / 3.6
}

pub fn ms_to_kmh(v: f64) -> f64 {
    v * 3.6
}

/// Vehicle with state `(position, velocity)` driven by a random
/// acceleration, observing its position:
/// `x⁺ = [1 Tₛ; 0 1] x + σ₁ [Tₛ²/2 0; Tₛ 0] w`, `y = [1 0] x + σ₂ [0 1] w`.
/// The contribution to the aggregate is the velocity (`L = [0 1]`); scale
/// `L` by `1/n` to average over `n` vehicles.
pub fn build_traffic_model(ts: f64, sigma1: f64, sigma2: f64) -> Result<ParticipantModel> {
    for (name, v) in [("T_s", ts), ("sigma1", sigma1), ("sigma2", sigma2)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let sys = StateSpaceSystem::new(
        Mat::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]),
        Mat::from_row_slice(2, 2, &[sigma1 * ts * ts / 2.0, 0.0, sigma1 * ts, 0.0]),
        Mat::from_row_slice(1, 2, &[1.0, 0.0]),
        Mat::from_row_slice(1, 2, &[0.0, sigma2]),
    )?;
    ParticipantModel::new(sys, Mat::from_row_slice(1, 2, &[0.0, 1.0]), DVector::zeros(2))
}

/// Coordinate protected by the adjacency relation: the position.
pub const PROTECTED: [usize; 1] = [0];

/// The `n` identical participants of a configuration (velocity averaging,
/// initial mean `(0, v̄)`) and their adjacency policy.
pub fn fleet(config: &SimulationConfig) -> Result<(Vec<ParticipantModel>, AdjacencyPolicy)> {
    let base = build_traffic_model(config.t_s, config.sigma1, config.sigma2)?;
    let n = config.n_participants;
    let part = ParticipantModel {
        l: &base.l / n as f64,
        x0_mean: DVector::from_vec(vec![0.0, kmh_to_ms(config.mean_initial_velocity)]),
        system: base.system,
    };
    let policy = AdjacencyPolicy::uniform(n, config.rho, PROTECTED.to_vec())?;
    Ok((vec![part; n], policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::spectral_radius;
    use proptest::prelude::*;

    #[test]
    fn paper_matrices() {
        let m = build_traffic_model(1.0, 1.0, 1.0).unwrap();
        let s = &m.system;
        assert_eq!(s.a(), &Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert_eq!(s.b(), &Mat::from_row_slice(2, 2, &[0.5, 0.0, 1.0, 0.0]));
        assert_eq!(s.c(), &Mat::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(s.d(), &Mat::from_row_slice(1, 2, &[0.0, 1.0]));
        assert_eq!(s.b() * s.d().transpose(), Mat::zeros(2, 1));
        assert_eq!(spectral_radius(s.a()).unwrap(), 1.0);
    }

    #[test]
    fn nonpositive_parameters_rejected() {
        assert!(build_traffic_model(0.0, 1.0, 1.0).is_err());
        assert!(build_traffic_model(1.0, -1.0, 1.0).is_err());
        assert!(build_traffic_model(1.0, 1.0, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn unit_round_trip(v in -1e4f64..1e4) {
            let back = ms_to_kmh(kmh_to_ms(v));
            prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}
