//! Library-level invariants of the traffic experiment.

use privfilter::dpkalman::{kalman_output_plan, Scheme};
use privfilter::privacy::PrivacyBudget;
use privfilter::traffic::{fleet, run_simulation, SimulationConfig, SimulationOutput};

fn base() -> SimulationConfig {
    SimulationConfig {
        n_participants: 40,
        horizon: 200,
        trials: 50,
        sweep_steps: 4,
        ..SimulationConfig::default()
    }
}

fn ran(out: &SimulationOutput) -> impl Iterator<Item = &privfilter::traffic::SchemeSummary> {
    out.outcomes
        .iter()
        .map(|o| o.summary().unwrap_or_else(|| panic!("{} failed", o.scheme())))
}

#[test]
fn empirical_mse_matches_prediction() {
    let out = run_simulation(&base()).unwrap();
    for s in ran(&out) {
        let z = (s.mse - s.predicted_mse).abs() / s.mse_stderr;
        assert!(z <= 3.0, "{}: {} vs {} ({z:.2} se)", s.scheme, s.mse, s.predicted_mse);
    }
}

#[test]
fn vanishing_privacy_recovers_the_kalman_error() {
    // ε = 50 still leaves visible noise at ρ = 100 m; 1e6 is effectively ∞
    let cfg = SimulationConfig { epsilon: 1e6, ..base() };
    let out = run_simulation(&cfg).unwrap();
    for s in ran(&out) {
        let rel = (s.predicted_mse - out.no_privacy_mse) / out.no_privacy_mse;
        assert!(
            rel.abs() < 0.02,
            "{}: predicted {} vs {}",
            s.scheme,
            s.predicted_mse,
            out.no_privacy_mse
        );
        let z = (s.mse - out.no_privacy_mse).abs() / s.mse_stderr;
        assert!(
            z <= 3.5,
            "{}: empirical {} vs {} ({z:.2} se)",
            s.scheme,
            s.mse,
            out.no_privacy_mse
        );
    }
}

#[test]
fn doubling_rho_doubles_output_noise() {
    let budget = PrivacyBudget::new(3f64.ln(), 0.05).unwrap();
    let plan = |rho: f64| {
        let cfg = SimulationConfig { rho, ..base() };
        let (parts, policy) = fleet(&cfg).unwrap();
        kalman_output_plan(&parts, &policy, &budget).unwrap()
    };
    let (one, two) = (plan(100.0), plan(200.0));
    assert!((two.output_noise_std - 2.0 * one.output_noise_std).abs() <= 1e-12 * two.output_noise_std);
    assert_eq!(one.estimation_mse, two.estimation_mse);

    let quiet = run_simulation(&SimulationConfig { trials: 2, ..base() }).unwrap();
    let loud = run_simulation(&SimulationConfig {
        trials: 2,
        rho: 200.0,
        ..base()
    })
    .unwrap();
    assert_eq!(quiet.no_privacy_mse, loud.no_privacy_mse);
    let std = |o: &SimulationOutput| o.summary(Scheme::OutputKalman).unwrap().output_noise_std;
    assert!((std(&loud) - 2.0 * std(&quiet)).abs() <= 1e-12 * std(&loud));
}

#[test]
fn trajectories_are_common_across_scheme_sets() {
    let all = run_simulation(&SimulationConfig { trials: 3, ..base() }).unwrap();
    let one = run_simulation(&SimulationConfig {
        trials: 3,
        schemes: vec![Scheme::OutputKalman],
        ..base()
    })
    .unwrap();
    assert_eq!(all.traces.z_true, one.traces.z_true);
    let k = all
        .traces
        .schemes
        .iter()
        .position(|&s| s == Scheme::OutputKalman)
        .unwrap();
    assert_eq!(all.traces.estimates[k], one.traces.estimates[0]);
}

#[test]
fn exact_initialization_settles_immediately() {
    let cfg = SimulationConfig {
        init_velocity_std: 0.0,
        init_position_std: 0.0,
        schemes: vec![Scheme::OutputKalman, Scheme::CompensatedInput],
        ..base()
    };
    let out = run_simulation(&cfg).unwrap();
    for s in ran(&out) {
        assert!(
            s.settling.step <= 1 && !s.settling.censored,
            "{}: {:?}",
            s.scheme,
            s.settling
        );
    }
}

#[test]
fn mis_initialization_slows_the_compensated_filter() {
    let cfg = SimulationConfig {
        filter_init_velocity: Some(120.0),
        horizon: 300,
        ..base()
    };
    let out = run_simulation(&cfg).unwrap();
    let settle = |s: Scheme| out.summary(s).unwrap().settling;
    assert!(settle(Scheme::CompensatedInput).step > settle(Scheme::OutputKalman).step);
    assert!(settle(Scheme::CompensatedInput).step > settle(Scheme::OutputSynthesized).step);
}
