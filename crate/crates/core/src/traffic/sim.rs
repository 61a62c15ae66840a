//! Monte Carlo evaluation of the private estimation schemes.
//!
//! Within a trial every scheme sees the same vehicle trajectories. Filters
//! are linear, so participants sharing one filter are filtered once on the
//! sum of their (privatized) measurements, which is exact.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::FilterRealization;
use crate::dpkalman::{
    input_perturbation_plan, kalman_output_plan, synthesized_plan, CapSweep, MechanismPlan, ParticipantModel, Scheme,
};
use crate::error::{Error, Result};
use crate::privacy::PrivacyBudget;

use super::rng::{stream, StreamKind};
use super::{fleet, kmh_to_ms, ms_to_kmh, SimulationConfig};

/// A scheme has settled once its error stays below `SETTLE_FACTOR` times its
/// steady-state RMSE for `SETTLE_RUN` consecutive steps.
pub const SETTLE_RUN: usize = 20;
pub const SETTLE_FACTOR: f64 = 2.0;

/// Simulated true and estimated average velocities (km/h), trial-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub schemes: Vec<Scheme>,
    pub trials: usize,
    pub horizon: usize,
    pub z_true: Vec<f64>,
    /// One series per entry of `schemes`, laid out like `z_true`.
    pub estimates: Vec<Vec<f64>>,
}

impl Traces {
    pub fn index(&self, trial: usize, t: usize) -> usize {
        trial * self.horizon + t
    }

    /// First step of the steady-state window (the last half of the horizon).
    pub fn steady_start(&self) -> usize {
        self.horizon / 2
    }

    /// Mean squared error of each trial over the steady-state window.
    pub fn trial_mse(&self, scheme: usize) -> Vec<f64> {
        let start = self.steady_start();
        let est = &self.estimates[scheme];
        (0..self.trials)
            .map(|k| {
                let sum: f64 = (start..self.horizon)
                    .map(|t| {
                        let i = self.index(k, t);
                        (est[i] - self.z_true[i]).powi(2)
                    })
                    .sum();
                sum / (self.horizon - start) as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Settling {
    pub step: usize,
    /// The error never settled within the horizon; `step` is the horizon.
    pub censored: bool,
}

/// Settling step of every scheme, measured on the root-mean-square error
/// across trials at each step.
pub fn convergence_report(traces: &Traces) -> Vec<(Scheme, Settling)> {
    let k = traces.trials as f64;
    traces
        .schemes
        .iter()
        .enumerate()
        .map(|(s, &scheme)| {
            let mse = traces.trial_mse(s);
            let threshold = SETTLE_FACTOR * (mse.iter().sum::<f64>() / k).sqrt();
            let est = &traces.estimates[s];
            let envelope: Vec<f64> = (0..traces.horizon)
                .map(|t| {
                    let sum: f64 = (0..traces.trials)
                        .map(|trial| {
                            let i = traces.index(trial, t);
                            (est[i] - traces.z_true[i]).powi(2)
                        })
                        .sum();
                    (sum / k).sqrt()
                })
                .collect();
            let mut run = 0;
            let mut settled = None;
            for (t, &e) in envelope.iter().enumerate() {
                if e < threshold {
                    run += 1;
                    if run == SETTLE_RUN {
                        settled = Some(t + 1 - SETTLE_RUN);
                        break;
                    }
                } else {
                    run = 0;
                }
            }
            let settling = match settled {
                Some(step) => Settling { step, censored: false },
                None => Settling {
                    step: traces.horizon,
                    censored: true,
                },
            };
            (scheme, settling)
        })
        .collect()
}

/// Empirical and predicted accuracy of one scheme (velocities in km/h,
/// position noise in m).
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub rmse: f64,
    /// Standard error of `rmse` (delta method on the per-trial MSEs).
    pub stderr: f64,
    pub mse: f64,
    pub mse_stderr: f64,
    pub settling: Settling,
    pub predicted_mse: f64,
    /// `maxᵢ γᵢ` of the released filter (output schemes).
    pub gamma: Option<f64>,
    /// Current-estimate form of `γ` (Kalman output scheme).
    pub gamma_filter_form: Option<f64>,
    pub kappa: f64,
    /// Largest per-participant measurement privacy noise std (m).
    pub input_noise_std: f64,
    /// Privacy noise std on the release (km/h).
    pub output_noise_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchemeOutcome {
    Ran(SchemeSummary),
    /// The scheme could not be planned (e.g. synthesis failed); the other
    /// schemes still ran.
    Failed {
        scheme: Scheme,
        error: String,
    },
}

impl SchemeOutcome {
    pub fn scheme(&self) -> Scheme {
        match self {
            SchemeOutcome::Ran(s) => s.scheme,
            SchemeOutcome::Failed { scheme, .. } => *scheme,
        }
    }

    pub fn summary(&self) -> Option<&SchemeSummary> {
        match self {
            SchemeOutcome::Ran(s) => Some(s),
            SchemeOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub config: SimulationConfig,
    pub kappa: f64,
    /// Predicted MSE of the Kalman estimate without privacy (km/h²).
    pub no_privacy_mse: f64,
    pub traces: Traces,
    /// One entry per configured scheme, in configuration order.
    pub outcomes: Vec<SchemeOutcome>,
    pub plans: Vec<MechanismPlan>,
    /// `λ` cap selected for the synthesized scheme (`None`: free `λ`).
    pub lambda_cap: Option<f64>,
}

impl SimulationOutput {
    pub fn summary(&self, scheme: Scheme) -> Option<&SchemeSummary> {
        self.outcomes
            .iter()
            .find(|o| o.scheme() == scheme)
            .and_then(SchemeOutcome::summary)
    }
}

/// A planned scheme prepared for simulation.
struct Run {
    scheme: Scheme,
    /// Distinct filters with their member participants.
    groups: Vec<(FilterRealization, Vec<usize>)>,
    group_of: Vec<usize>,
    input_std: Vec<f64>,
    output_std: f64,
}

impl Run {
    fn new(plan: &MechanismPlan) -> Self {
        let mut groups: Vec<(FilterRealization, Vec<usize>)> = Vec::new();
        let mut group_of = Vec::with_capacity(plan.filters.len());
        for (i, f) in plan.filters.iter().enumerate() {
            match groups.iter().position(|(g, _)| g == f) {
                Some(j) => {
                    groups[j].1.push(i);
                    group_of.push(j);
                }
                None => {
                    group_of.push(groups.len());
                    groups.push((f.clone(), vec![i]));
                }
            }
        }
        Self {
            scheme: plan.scheme,
            groups,
            group_of,
            input_std: plan.input_noise_std.clone(),
            output_std: plan.output_noise_std,
        }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Measurements `y[i][t]` (flattened, `p` per step) and the true aggregate.
fn simulate_fleet(cfg: &SimulationConfig, participants: &[ParticipantModel], trial: u32) -> (Vec<f64>, Vec<f64>) {
    let h = cfg.horizon;
    let p = participants[0].system.n_outputs();
    let spread = [cfg.init_position_std, kmh_to_ms(cfg.init_velocity_std)];
    let mut ys = vec![0.0; participants.len() * h * p];
    let mut z = vec![0.0; h];
    for (i, part) in participants.iter().enumerate() {
        let sys = &part.system;
        let mut rng = stream(cfg.seed, trial, StreamKind::Trajectory, i as u32);
        let mut x = part.x0_mean.clone();
        for (k, s) in spread.iter().enumerate().take(x.len()) {
            x[k] += s * normal(&mut rng);
        }
        let mut w = DVector::zeros(sys.n_inputs());
        let mut next = DVector::zeros(x.len());
        let base = i * h * p;
        for t in 0..h {
            w.iter_mut().for_each(|v| *v = normal(&mut rng));
            let y = sys.c() * &x + sys.d() * &w;
            ys[base + t * p..base + (t + 1) * p].copy_from_slice(y.as_slice());
            z[t] += (&part.l * &x)[0];
            next.gemv(1.0, sys.a(), &x, 0.0);
            next.gemv(1.0, sys.b(), &w, 1.0);
            std::mem::swap(&mut x, &mut next);
        }
    }
    (ys, z)
}

/// Estimates of one scheme for one trial (m/s).
fn run_scheme(
    cfg: &SimulationConfig,
    participants: &[ParticipantModel],
    run: &Run,
    ys: &[f64],
    trial: u32,
) -> Vec<f64> {
    let h = cfg.horizon;
    let p = participants[0].system.n_outputs();
    let mut inputs = vec![0.0; run.groups.len() * h * p];
    for (i, &g) in run.group_of.iter().enumerate() {
        let src = &ys[i * h * p..(i + 1) * h * p];
        let dst = &mut inputs[g * h * p..(g + 1) * h * p];
        let std = run.input_std[i];
        if std > 0.0 {
            let mut rng = stream(cfg.seed, trial, StreamKind::Privacy(run.scheme), i as u32);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s + std * normal(&mut rng);
            }
        } else {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let v0 = kmh_to_ms(cfg.filter_init_velocity());
    let mut est = vec![0.0; h];
    for (g, (filter, members)) in run.groups.iter().enumerate() {
        // summed initial estimates of the members
        let mut xh = DVector::zeros(filter.n_states());
        for &i in members {
            let part = &participants[i];
            if filter.n_states() == part.x0_mean.len() {
                let mut guess = part.x0_mean.clone();
                if guess.len() > 1 {
                    guess[1] = v0;
                }
                xh += guess;
            }
        }
        let mut next = DVector::zeros(filter.n_states());
        for (t, e) in est.iter_mut().enumerate() {
            let u = DVector::from_column_slice(&inputs[(g * h + t) * p..(g * h + t + 1) * p]);
            *e += (&filter.h * &xh + &filter.k * &u)[0];
            next.gemv(1.0, &filter.f, &xh, 0.0);
            next.gemv(1.0, &filter.g, &u, 1.0);
            std::mem::swap(&mut xh, &mut next);
        }
    }
    if run.output_std > 0.0 {
        let mut rng = stream(cfg.seed, trial, StreamKind::Privacy(run.scheme), 0);
        for e in &mut est {
            *e += run.output_std * normal(&mut rng);
        }
    }
    est
}

/// Plans every configured scheme, runs all trials and summarizes.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationOutput> {
    cfg.validate()?;
    let budget = PrivacyBudget::new(cfg.epsilon, cfg.delta)?;
    let (participants, policy) = fleet(cfg)?;
    if participants[0].l.nrows() != 1 {
        return Err(Error::Dimension("the simulated aggregate must be scalar".into()));
    }

    let needs_input = cfg.schemes.iter().any(|s| s.is_input());
    let input = if needs_input {
        Some(input_perturbation_plan(&participants, &policy, &budget)?)
    } else {
        None
    };
    let kalman = kalman_output_plan(&participants, &policy, &budget)?;
    let mut plans = Vec::new();
    let mut failures = Vec::new();
    let mut lambda_cap = None;
    for &scheme in &cfg.schemes {
        match scheme {
            Scheme::NaiveInput => plans.push(input.as_ref().expect("planned").naive.clone()),
            Scheme::CompensatedInput => plans.push(input.as_ref().expect("planned").compensated.clone()),
            Scheme::OutputKalman => plans.push(kalman.clone()),
            Scheme::OutputSynthesized => {
                let sweep = CapSweep {
                    steps: cfg.sweep_steps,
                    refine_iterations: if cfg.sweep_steps == 0 {
                        0
                    } else {
                        CapSweep::default().refine_iterations
                    },
                    ..CapSweep::default()
                };
                match synthesized_plan(&participants, &policy, &budget, &sweep) {
                    Ok(sp) => {
                        lambda_cap = sp.lambda_cap;
                        plans.push(sp.plan);
                    }
                    Err(e) if e.is_validation() => return Err(e),
                    Err(e) => failures.push((scheme, e.to_string())),
                }
            }
        }
    }
    let runs: Vec<Run> = plans.iter().map(Run::new).collect();

    let simulate = || -> Vec<(Vec<f64>, Vec<Vec<f64>>)> {
        (0..cfg.trials as u32)
            .into_par_iter()
            .map(|trial| {
                let (ys, z) = simulate_fleet(cfg, &participants, trial);
                let est = runs
                    .iter()
                    .map(|run| run_scheme(cfg, &participants, run, &ys, trial))
                    .collect();
                (z, est)
            })
            .collect()
    };
    let per_trial = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
            .install(simulate),
        None => simulate(),
    };

    let mut traces = Traces {
        schemes: runs.iter().map(|r| r.scheme).collect(),
        trials: cfg.trials,
        horizon: cfg.horizon,
        z_true: Vec::with_capacity(cfg.trials * cfg.horizon),
        estimates: vec![Vec::with_capacity(cfg.trials * cfg.horizon); runs.len()],
    };
    for (z, est) in per_trial {
        traces.z_true.extend(z.into_iter().map(ms_to_kmh));
        for (dst, e) in traces.estimates.iter_mut().zip(est) {
            dst.extend(e.into_iter().map(ms_to_kmh));
        }
    }

    let settling = convergence_report(&traces);
    let kmh2 = 3.6 * 3.6;
    let k = cfg.trials as f64;
    let mut outcomes = Vec::with_capacity(cfg.schemes.len());
    for &scheme in &cfg.schemes {
        if let Some((_, err)) = failures.iter().find(|(s, _)| *s == scheme) {
            outcomes.push(SchemeOutcome::Failed {
                scheme,
                error: err.clone(),
            });
            continue;
        }
        let s = traces.schemes.iter().position(|&x| x == scheme).expect("ran");
        let plan = &plans[s];
        let mse_k = traces.trial_mse(s);
        let mse = mse_k.iter().sum::<f64>() / k;
        let mse_stderr = if cfg.trials > 1 {
            let var = mse_k.iter().map(|m| (m - mse).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        let rmse = mse.sqrt();
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        outcomes.push(SchemeOutcome::Ran(SchemeSummary {
            scheme,
            rmse,
            stderr: if rmse > 0.0 { mse_stderr / (2.0 * rmse) } else { 0.0 },
            mse,
            mse_stderr,
            settling: settling[s].1,
            predicted_mse: plan.predicted_mse * kmh2,
            gamma: (!scheme.is_input()).then(|| max(&plan.gamma)),
            gamma_filter_form: plan.gamma_filter_form.as_deref().map(max),
            kappa: plan.kappa,
            input_noise_std: max(&plan.input_noise_std),
            output_noise_std: ms_to_kmh(plan.output_noise_std),
        }));
    }
    Ok(SimulationOutput {
        config: cfg.clone(),
        kappa: budget.kappa(),
        no_privacy_mse: kalman.estimation_mse.iter().sum::<f64>() * kmh2,
        traces,
        outcomes,
        plans,
        lambda_cap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimulationConfig {
        SimulationConfig {
            n_participants: 5,
            horizon: 60,
            trials: 4,
            seed: 9,
            schemes: vec![Scheme::NaiveInput, Scheme::OutputKalman],
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let a = run_simulation(&small()).unwrap();
        let b = run_simulation(&SimulationConfig {
            threads: Some(1),
            ..small()
        })
        .unwrap();
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.outcomes, b.outcomes);
    }

    #[test]
    fn trajectories_do_not_depend_on_scheme_set() {
        let a = run_simulation(&small()).unwrap();
        let b = run_simulation(&SimulationConfig {
            schemes: vec![Scheme::OutputKalman],
            ..small()
        })
        .unwrap();
        assert_eq!(a.traces.z_true, b.traces.z_true);
        assert_eq!(a.traces.estimates[1], b.traces.estimates[0]);
    }

    #[test]
    fn grouped_filtering_matches_per_participant_filtering() {
        let cfg = SimulationConfig {
            schemes: vec![Scheme::CompensatedInput],
            ..small()
        };
        let (participants, policy) = fleet(&cfg).unwrap();
        let budget = PrivacyBudget::new(cfg.epsilon, cfg.delta).unwrap();
        let plan = input_perturbation_plan(&participants, &policy, &budget)
            .unwrap()
            .compensated;
        assert_eq!(Run::new(&plan).groups.len(), 1);
        // compare noise-free filtering: grouped versus one filter per vehicle
        let quiet = Run {
            input_std: vec![0.0; participants.len()],
            ..Run::new(&plan)
        };
        let (ys, _) = simulate_fleet(&cfg, &participants, 0);
        let grouped = run_scheme(&cfg, &participants, &quiet, &ys, 0);
        let h = cfg.horizon;
        let mut separate = vec![0.0; h];
        for i in 0..participants.len() {
            let solo = Run {
                scheme: plan.scheme,
                groups: vec![(plan.filters[i].clone(), vec![0])],
                group_of: vec![0],
                input_std: vec![0.0],
                output_std: 0.0,
            };
            let e = run_scheme(&cfg, &participants[i..=i], &solo, &ys[i * h..(i + 1) * h], 0);
            for (s, v) in separate.iter_mut().zip(e) {
                *s += v;
            }
        }
        for (a, b) in grouped.iter().zip(&separate) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn settling_of_exact_initialization() {
        let cfg = SimulationConfig {
            init_velocity_std: 0.0,
            init_position_std: 0.0,
            schemes: vec![Scheme::OutputKalman],
            ..small()
        };
        let out = run_simulation(&cfg).unwrap();
        let s = out.summary(Scheme::OutputKalman).unwrap().settling;
        assert!(!s.censored && s.step <= 1, "{s:?}");
    }

    #[test]
    fn censored_when_never_settling() {
        let traces = Traces {
            schemes: vec![Scheme::OutputKalman],
            trials: 1,
            horizon: 10,
            z_true: vec![0.0; 10],
            estimates: vec![vec![1.0; 10]],
        };
        let r = convergence_report(&traces);
        assert_eq!(
            r[0].1,
            Settling {
                step: 10,
                censored: true
            }
        );
    }
}
