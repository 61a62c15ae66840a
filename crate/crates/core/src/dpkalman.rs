//! End-to-end private estimation pipelines for multi-participant systems:
//! steady-state Kalman design, input perturbation (noise added to each
//! participant's measurements) and output perturbation (noise added to the
//! released aggregate estimate), plus the synthesized-filter variant of the
//! latter.
//!
//! Every plan splits its predicted MSE into an estimation part (error H₂²
//! under the plant's own noise) and a privacy part (the privacy noise passed
//! to the release), so `predicted_mse` can be recomputed from its parts.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::control::{
    build_sensitivity_system, error_h2_squared, h2_norm_squared, hinf_norm, is_detectable, is_stabilizable, solve_dare,
    spectral_radius, FilterRealization, RiccatiSolution, StateSpaceSystem,
};
use crate::error::{Error, Result};
use crate::linalg::{max_singular, rank, Mat};
use crate::privacy::{Adjacency, AdjacencyPolicy, PrivacyBudget};
use crate::sdp::SolverOptions;
use crate::synthesis::{synth_stable_joint, synth_unstable_joint, JointSynthesis, LambdaMode, SynthesisParticipant};

/// One participant: plant `x⁺ = A x + B w`, `y = C x + D w` with `w` white
/// and standard normal, contribution `L x` to the aggregate `z = Σ Lᵢ xᵢ`,
/// and the public mean of the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantModel {
    pub system: StateSpaceSystem,
    pub l: Mat,
    pub x0_mean: DVector<f64>,
}

impl ParticipantModel {
    pub fn new(system: StateSpaceSystem, l: Mat, x0_mean: DVector<f64>) -> Result<Self> {
        let n = system.n_states();
        if l.ncols() != n || x0_mean.len() != n {
            return Err(Error::Dimension(format!(
                "participant has {n} states but L has {} columns and x0 {} entries",
                l.ncols(),
                x0_mean.len()
            )));
        }
        let d = system.d();
        if rank(d, 1e-12) < d.nrows() {
            return Err(Error::Domain(
                "D must have full row rank (every measurement is noisy)".into(),
            ));
        }
        if !is_detectable(system.a(), system.c())? {
            return Err(Error::Domain("(A, C) is not detectable".into()));
        }
        if !is_stabilizable(system.a(), system.b())? {
            return Err(Error::Domain("(A, B) is not stabilizable".into()));
        }
        Ok(Self { system, l, x0_mean })
    }

    /// Process covariance `B Bᵀ`, measurement covariance `D Dᵀ` and cross
    /// covariance `B Dᵀ`.
    pub fn noise_covariances(&self) -> (Mat, Mat, Mat) {
        let (b, d) = (self.system.b(), self.system.d());
        (b * b.transpose(), d * d.transpose(), b * d.transpose())
    }

    /// The plant with an extra independent measurement-noise channel of
    /// standard deviation `std` on every output.
    pub fn with_extra_measurement_noise(&self, std: f64) -> Result<StateSpaceSystem> {
        let s = &self.system;
        let (n, p, m) = (s.n_states(), s.n_outputs(), s.n_inputs());
        let mut b = Mat::zeros(n, m + p);
        b.view_mut((0, 0), (n, m)).copy_from(s.b());
        let mut d = Mat::zeros(p, m + p);
        d.view_mut((0, 0), (p, m)).copy_from(s.d());
        d.view_mut((0, m), (p, p)).copy_from(&(Mat::identity(p, p) * std));
        StateSpaceSystem::new(s.a().clone(), b, s.c().clone(), d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    NaiveInput,
    CompensatedInput,
    OutputKalman,
    OutputSynthesized,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::NaiveInput,
        Scheme::CompensatedInput,
        Scheme::OutputKalman,
        Scheme::OutputSynthesized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::NaiveInput => "naive-input",
            Scheme::CompensatedInput => "compensated-input",
            Scheme::OutputKalman => "output-kalman",
            Scheme::OutputSynthesized => "output-synthesized",
        }
    }

    pub fn is_input(self) -> bool {
        matches!(self, Scheme::NaiveInput | Scheme::CompensatedInput)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A complete private estimation pipeline with its predicted accuracy.
#[derive(Debug, Clone)]
pub struct MechanismPlan {
    pub scheme: Scheme,
    pub kappa: f64,
    /// Privacy noise std added to every measurement of participant `i`
    /// (input schemes; zero for output schemes).
    pub input_noise_std: Vec<f64>,
    /// Privacy noise std added to the released estimate (output schemes;
    /// zero for input schemes, where privacy is enforced at the source).
    pub output_noise_std: f64,
    pub filters: Vec<FilterRealization>,
    /// `‖error systemᵢ‖₂²` under the plant noise alone.
    pub estimation_mse: Vec<f64>,
    /// Contribution of the privacy noise to the MSE of the release.
    pub privacy_mse: f64,
    pub predicted_mse: f64,
    /// Sensitivity gains `γᵢ = ‖𝒦ᵢ Cᵢ Tᵢ‖∞` (output schemes).
    pub gamma: Vec<f64>,
    /// `γᵢ` of the current-estimate Kalman filter, reported alongside the
    /// predictor-form value for the Kalman output scheme.
    pub gamma_filter_form: Option<Vec<f64>>,
}

impl MechanismPlan {
    /// `Σ estimation_mse + privacy_mse`.
    pub fn recomputed_mse(&self) -> f64 {
        self.estimation_mse.iter().sum::<f64>() + self.privacy_mse
    }

    /// `maxᵢ γᵢ ρᵢ` (zero for input schemes).
    pub fn max_gamma_rho(&self, policy: &AdjacencyPolicy) -> f64 {
        self.gamma
            .iter()
            .zip(&policy.participants)
            .map(|(g, a)| g * a.rho)
            .fold(0.0, f64::max)
    }
}

/// Steady-state Kalman predictors for every participant.
#[derive(Debug, Clone)]
pub struct KalmanDesign {
    /// Predictor-form realizations `(A − G C, G, L, 0)`.
    pub filters: Vec<FilterRealization>,
    pub riccati: Vec<RiccatiSolution>,
    /// `Tr(Lᵢ Pᵢ Lᵢᵀ)` for each participant.
    pub per_participant_mse: Vec<f64>,
    /// MSE of `ẑ = Σ Lᵢ x̂ᵢ` (participants are independent, so it sums).
    pub predicted_mse: f64,
}

/// Designs the steady-state Kalman predictor of every participant, with the
/// measurement noise covariance augmented by `extra_meas_noise_std[i]² I`.
pub fn design_kalman(participants: &[ParticipantModel], extra_meas_noise_std: &[f64]) -> Result<KalmanDesign> {
    if participants.is_empty() {
        return Err(Error::Invalid("at least one participant is required".into()));
    }
    if extra_meas_noise_std.len() != participants.len() {
        return Err(Error::Dimension(format!(
            "{} extra noise levels for {} participants",
            extra_meas_noise_std.len(),
            participants.len()
        )));
    }
    let mut design = KalmanDesign {
        filters: Vec::with_capacity(participants.len()),
        riccati: Vec::with_capacity(participants.len()),
        per_participant_mse: Vec::with_capacity(participants.len()),
        predicted_mse: 0.0,
    };
    for (i, (part, &extra)) in participants.iter().zip(extra_meas_noise_std).enumerate() {
        if !(extra.is_finite() && extra >= 0.0) {
            return Err(Error::Domain(format!(
                "participant {i}: extra noise std must be nonnegative, got {extra}"
            )));
        }
        // identical participants share one Riccati solve
        if let Some(j) = (0..i).find(|&j| participants[j] == *part && extra_meas_noise_std[j] == extra) {
            design.filters.push(design.filters[j].clone());
            design.riccati.push(design.riccati[j].clone());
            design.per_participant_mse.push(design.per_participant_mse[j]);
            continue;
        }
        let (q, r, s) = part.noise_covariances();
        let p = r.nrows();
        let r = r + Mat::identity(p, p) * (extra * extra);
        let sol = solve_dare(part.system.a(), part.system.c(), &q, &r, &s).map_err(|e| annotate(e, i))?;
        let filter = FilterRealization::kalman_predictor(part.system.a(), part.system.c(), &part.l, &sol)?;
        let mse = (&part.l * &sol.p * part.l.transpose()).trace();
        design.filters.push(filter);
        design.riccati.push(sol);
        design.per_participant_mse.push(mse);
    }
    design.predicted_mse = design.per_participant_mse.iter().sum();
    Ok(design)
}

fn annotate(e: Error, i: usize) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("participant {i}: {m}")),
        Error::Dimension(m) => Error::Dimension(format!("participant {i}: {m}")),
        Error::Invalid(m) => Error::Invalid(format!("participant {i}: {m}")),
        other => other,
    }
}

fn check_policy(participants: &[ParticipantModel], policy: &AdjacencyPolicy) -> Result<()> {
    if policy.len() != participants.len() {
        return Err(Error::Dimension(format!(
            "adjacency policy has {} entries for {} participants",
            policy.len(),
            participants.len()
        )));
    }
    for (i, (p, a)) in participants.iter().zip(&policy.participants).enumerate() {
        a.validate(Some(p.system.n_states())).map_err(|e| annotate(e, i))?;
    }
    Ok(())
}

/// Index of an earlier participant with identical data, so per-participant
/// norms are computed once per distinct participant.
fn earlier_twin(
    i: usize,
    participants: &[ParticipantModel],
    policy: &AdjacencyPolicy,
    filters: &[FilterRealization],
    reps: &[usize],
) -> Option<usize> {
    reps.iter().copied().find(|&j| {
        participants[j] == participants[i]
            && policy.participants[j] == policy.participants[i]
            && filters[j] == filters[i]
    })
}

/// Input-perturbation privacy noise std `κ ρᵢ σ_max(Cᵢ Tᵢ)` per participant.
pub fn input_noise_stds(
    participants: &[ParticipantModel],
    policy: &AdjacencyPolicy,
    budget: &PrivacyBudget,
) -> Result<Vec<f64>> {
    check_policy(participants, policy)?;
    participants
        .iter()
        .zip(&policy.participants)
        .map(|(p, a)| {
            let t = a.selection_matrix(p.system.n_states())?;
            Ok(budget.kappa() * a.rho * max_singular(&(p.system.c() * t)))
        })
        .collect()
}

/// The two input-perturbation variants.
#[derive(Debug, Clone)]
pub struct InputPlans {
    /// Kalman filters designed without regard to the privacy noise.
    pub naive: MechanismPlan,
    /// Kalman filters redesigned with the privacy noise as measurement noise.
    pub compensated: MechanismPlan,
}

fn input_plan(
    scheme: Scheme,
    participants: &[ParticipantModel],
    stds: &[f64],
    filters: Vec<FilterRealization>,
    budget: &PrivacyBudget,
) -> Result<MechanismPlan> {
    let mut estimation = Vec::with_capacity(participants.len());
    let mut privacy = Vec::with_capacity(participants.len());
    let mut reps: Vec<usize> = Vec::new();
    for (i, (part, filter)) in participants.iter().zip(&filters).enumerate() {
        if let Some(j) = reps
            .iter()
            .copied()
            .find(|&j| participants[j] == *part && stds[j] == stds[i] && filters[j] == *filter)
        {
            estimation.push(estimation[j]);
            privacy.push(privacy[j]);
            continue;
        }
        reps.push(i);
        estimation.push(error_h2_squared(&part.system, &part.l, filter)?);
        // the privacy noise enters the error through the filter alone
        privacy.push(stds[i] * stds[i] * h2_norm_squared(&filter.as_system()?)?);
    }
    let privacy_mse: f64 = privacy.iter().sum();
    Ok(MechanismPlan {
        scheme,
        kappa: budget.kappa(),
        input_noise_std: stds.to_vec(),
        output_noise_std: 0.0,
        predicted_mse: estimation.iter().sum::<f64>() + privacy_mse,
        filters,
        estimation_mse: estimation,
        privacy_mse,
        gamma: Vec::new(),
        gamma_filter_form: None,
    })
}

/// Input perturbation: every participant adds white Gaussian noise of std
/// `κ ρᵢ σ_max(Cᵢ Tᵢ)` to its measurements before they leave its device.
pub fn input_perturbation_plan(
    participants: &[ParticipantModel],
    policy: &AdjacencyPolicy,
    budget: &PrivacyBudget,
) -> Result<InputPlans> {
    let stds = input_noise_stds(participants, policy, budget)?;
    let naive = design_kalman(participants, &vec![0.0; participants.len()])?;
    let compensated = design_kalman(participants, &stds)?;
    Ok(InputPlans {
        naive: input_plan(Scheme::NaiveInput, participants, &stds, naive.filters, budget)?,
        compensated: input_plan(
            Scheme::CompensatedInput,
            participants,
            &stds,
            compensated.filters,
            budget,
        )?,
    })
}

/// Output perturbation: the aggregate `Σ Lᵢ 𝒦ᵢ yᵢ` is released with added
/// noise of std `κ maxᵢ γᵢ ρᵢ`, where `γᵢ` is the H∞ norm of the map from a
/// deviation of the protected coordinates to the release. Each filter's
/// output matrices must already include `Lᵢ`.
pub fn output_perturbation_plan(
    participants: &[ParticipantModel],
    policy: &AdjacencyPolicy,
    budget: &PrivacyBudget,
    filters: &[FilterRealization],
) -> Result<MechanismPlan> {
    check_policy(participants, policy)?;
    if filters.len() != participants.len() {
        return Err(Error::Dimension(format!(
            "{} filters for {} participants",
            filters.len(),
            participants.len()
        )));
    }
    let mut gamma = Vec::with_capacity(filters.len());
    let mut estimation = Vec::with_capacity(filters.len());
    let mut reps: Vec<usize> = Vec::new();
    for (i, (part, filter)) in participants.iter().zip(filters).enumerate() {
        if let Some(j) = earlier_twin(i, participants, policy, filters, &reps) {
            gamma.push(gamma[j]);
            estimation.push(estimation[j]);
            continue;
        }
        if filter.n_inputs() != part.system.n_outputs() || filter.n_outputs() != part.l.nrows() {
            return Err(Error::Dimension(format!(
                "participant {i}: filter shape does not fit the plant"
            )));
        }
        if !filter.is_stable()? {
            return Err(Error::Domain(format!(
                "participant {i}: filter is not Schur stable (spectral radius {:.6})",
                filter.spectral_radius()?
            )));
        }
        reps.push(i);
        let t = policy.participants[i].selection_matrix(part.system.n_states())?;
        gamma.push(hinf_norm(&build_sensitivity_system(filter, part.system.c(), &t)?)?);
        estimation.push(error_h2_squared(&part.system, &part.l, filter)?);
    }
    let worst = gamma
        .iter()
        .zip(&policy.participants)
        .map(|(g, a)| g * a.rho)
        .fold(0.0, f64::max);
    let std = budget.kappa() * worst;
    let privacy_mse = std * std;
    Ok(MechanismPlan {
        scheme: Scheme::OutputKalman,
        kappa: budget.kappa(),
        input_noise_std: vec![0.0; participants.len()],
        output_noise_std: std,
        filters: filters.to_vec(),
        predicted_mse: estimation.iter().sum::<f64>() + privacy_mse,
        estimation_mse: estimation,
        privacy_mse,
        gamma,
        gamma_filter_form: None,
    })
}

/// Output perturbation with the steady-state Kalman predictors; the
/// current-estimate (filter-form) sensitivities are reported alongside.
pub fn kalman_output_plan(
    participants: &[ParticipantModel],
    policy: &AdjacencyPolicy,
    budget: &PrivacyBudget,
) -> Result<MechanismPlan> {
    let design = design_kalman(participants, &vec![0.0; participants.len()])?;
    let mut plan = output_perturbation_plan(participants, policy, budget, &design.filters)?;
    let mut filter_form: Vec<f64> = Vec::with_capacity(participants.len());
    for (i, (part, sol)) in participants.iter().zip(&design.riccati).enumerate() {
        if let Some(j) = (0..i).find(|&j| {
            participants[j] == *part && policy.participants[j] == policy.participants[i] && design.riccati[j] == *sol
        }) {
            filter_form.push(filter_form[j]);
            continue;
        }
        let (a, c) = (part.system.a(), part.system.c());
        let kf = FilterRealization::kalman_filter(a, c, &part.l, sol)?;
        let t = policy.participants[i].selection_matrix(part.system.n_states())?;
        filter_form.push(hinf_norm(&build_sensitivity_system(&kf, c, &t)?)?);
    }
    plan.gamma_filter_form = Some(filter_form);
    Ok(plan)
}

/// Settings of the `λ`-cap sweep used by [`synthesized_plan`].
#[derive(Debug, Clone)]
pub struct CapSweep {
    /// Caps `λ_free · 10^(k/steps_per_decade)` for `k = 0..=steps`.
    pub steps: usize,
    pub steps_per_decade: usize,
    /// Golden-section iterations in log-cap around the best grid point.
    pub refine_iterations: usize,
    pub solver: SolverOptions,
}

impl Default for CapSweep {
    fn default() -> Self {
        Self {
            steps: 12,
            steps_per_decade: 4,
            refine_iterations: 12,
            solver: SolverOptions::default(),
        }
    }
}

type Best = Option<(MechanismPlan, JointSynthesis, Option<f64>)>;

/// Outcome of the synthesized-filter design.
#[derive(Debug, Clone)]
pub struct SynthesizedPlan {
    pub plan: MechanismPlan,
    pub synthesis: JointSynthesis,
    /// `None` when the free-`λ` program itself gave the best plan.
    pub lambda_cap: Option<f64>,
    /// `(cap, predicted MSE)` of every evaluated candidate (`cap = 0` marks
    /// the free-`λ` program).
    pub candidates: Vec<(f64, f64)>,
    /// Whether the restricted (observer-form) synthesis was used.
    pub restricted: bool,
}

/// Synthesis participants for `participants`; those with `ρᵢ = 0` carry no
/// privacy constraint and get a tiny positive bound instead.
pub fn synthesis_participants(
    participants: &[ParticipantModel],
    policy: &AdjacencyPolicy,
) -> Result<Vec<SynthesisParticipant>> {
    check_policy(participants, policy)?;
    participants
        .iter()
        .zip(&policy.participants)
        .map(|(p, a)| {
            let adj = Adjacency {
                rho: a.rho.max(1e-9),
                selection: a.selection.clone(),
            };
            SynthesisParticipant::new(p.system.clone(), p.l.clone(), adj)
        })
        .collect()
}

/// Output perturbation with filters synthesized for the privacy/accuracy
/// trade-off. The synthesis programs bound H₂ and H∞ with one shared
/// Lyapunov certificate, so their optimum is conservative; the free-`λ`
/// solution is therefore complemented by a sweep over caps on `λ`, and the
/// candidate with the smallest exactly recomputed output-scheme MSE wins.
/// Plants that are not all Schur stable use the observer-form class.
pub fn synthesized_plan(
    participants: &[ParticipantModel],
    policy: &AdjacencyPolicy,
    budget: &PrivacyBudget,
    sweep: &CapSweep,
) -> Result<SynthesizedPlan> {
    let synth_parts = synthesis_participants(participants, policy)?;
    let mut restricted = false;
    for p in participants {
        if spectral_radius(p.system.a())? >= 1.0 {
            restricted = true;
        }
    }
    let solve = |mode: LambdaMode| -> Result<JointSynthesis> {
        if restricted {
            synth_unstable_joint(&synth_parts, budget, mode, &sweep.solver)
        } else {
            synth_stable_joint(&synth_parts, budget, mode, &sweep.solver)
        }
    };
    let evaluate = |joint: &JointSynthesis| -> Result<Option<MechanismPlan>> {
        if !joint.all_verified() {
            return Ok(None);
        }
        let mut plan = output_perturbation_plan(participants, policy, budget, &joint.filters())?;
        plan.scheme = Scheme::OutputSynthesized;
        Ok(Some(plan))
    };

    let free = solve(LambdaMode::Free)?;
    let mut candidates = Vec::new();
    let mut best: Best = None;
    let mut consider = |cap: Option<f64>, joint: JointSynthesis, best: &mut Best| -> Result<f64> {
        let Some(plan) = evaluate(&joint)? else {
            return Ok(f64::INFINITY);
        };
        let mse = plan.predicted_mse;
        candidates.push((cap.unwrap_or(0.0), mse));
        let better = match best {
            Some((b, _, _)) => mse < b.predicted_mse,
            None => true,
        };
        if better {
            *best = Some((plan, joint, cap));
        }
        Ok(mse)
    };
    let lambda_free = free.lambda;
    consider(None, free, &mut best)?;

    if lambda_free > 1e-12 && sweep.steps > 0 {
        let per = sweep.steps_per_decade.max(1) as f64;
        let mut try_cap = |log_cap: f64, best: &mut Best| -> Result<f64> {
            let cap = 10f64.powf(log_cap);
            match solve(LambdaMode::Capped(cap)) {
                Ok(joint) => consider(Some(cap), joint, best),
                Err(e) if e.is_validation() => Err(e),
                // caps the solver cannot handle are skipped
                Err(_) => Ok(f64::INFINITY),
            }
        };
        let base = lambda_free.log10();
        let grid: Vec<f64> = (0..=sweep.steps).map(|k| base + k as f64 / per).collect();
        let mut scores = Vec::with_capacity(grid.len());
        for &g in &grid {
            scores.push(try_cap(g, &mut best)?);
        }
        let (kbest, _) = scores
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, &s)| if s < acc.1 { (k, s) } else { acc });
        if scores[kbest].is_finite() && sweep.refine_iterations > 0 {
            let step = 1.0 / per;
            let (mut lo, mut hi) = (grid[kbest] - step, grid[kbest] + step);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            let mut x1 = hi - phi * (hi - lo);
            let mut x2 = lo + phi * (hi - lo);
            let mut f1 = try_cap(x1, &mut best)?;
            let mut f2 = try_cap(x2, &mut best)?;
            for _ in 0..sweep.refine_iterations {
                if f1 <= f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - phi * (hi - lo);
                    f1 = try_cap(x1, &mut best)?;
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + phi * (hi - lo);
                    f2 = try_cap(x2, &mut best)?;
                }
            }
        }
    }
    let (plan, synthesis, lambda_cap) =
        best.ok_or_else(|| Error::Numerical("no synthesized filter passed independent re-verification".into()))?;
    Ok(SynthesizedPlan {
        plan,
        synthesis,
        lambda_cap,
        candidates,
        restricted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{build_error_system, solve_discrete_lyapunov};
    use proptest::prelude::*;

    fn scalar(a: f64, q: f64, r: f64) -> ParticipantModel {
        let sys = StateSpaceSystem::new(
            Mat::from_element(1, 1, a),
            Mat::from_row_slice(1, 2, &[q.sqrt(), 0.0]),
            Mat::from_element(1, 1, 1.0),
            Mat::from_row_slice(1, 2, &[0.0, r.sqrt()]),
        )
        .unwrap();
        ParticipantModel::new(sys, Mat::from_element(1, 1, 1.0), DVector::zeros(1)).unwrap()
    }

    fn traffic(n: usize) -> ParticipantModel {
        let sys = StateSpaceSystem::new(
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            Mat::from_row_slice(2, 2, &[0.5, 0.0, 1.0, 0.0]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        ParticipantModel::new(
            sys,
            Mat::from_row_slice(1, 2, &[0.0, 1.0 / n as f64]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    fn budget() -> PrivacyBudget {
        PrivacyBudget::new(3f64.ln(), 0.05).unwrap()
    }

    #[test]
    fn static_participant_closed_form() {
        // A = 0: the predictor ignores y; the filter-form error is q r / (q + r)
        let (q, r) = (2.0, 3.0);
        let d = design_kalman(&[scalar(0.0, q, r)], &[0.0]).unwrap();
        assert!((d.predicted_mse - q).abs() < 1e-12);
        assert!((d.riccati[0].filtered_p[(0, 0)] - q * r / (q + r)).abs() < 1e-12);
        assert!(d.riccati[0].gain[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn kalman_mse_matches_error_system() {
        let p = traffic(1);
        let d = design_kalman(std::slice::from_ref(&p), &[0.0]).unwrap();
        let h2 = error_h2_squared(&p.system, &p.l, &d.filters[0]).unwrap();
        assert!(
            (h2 - d.predicted_mse).abs() <= 1e-6 * d.predicted_mse,
            "{h2} vs {}",
            d.predicted_mse
        );
        assert!((d.predicted_mse - 2.0).abs() < 1e-9);
    }

    #[test]
    fn averaging_identical_participants() {
        let one = traffic(1);
        let two = traffic(2);
        let single = design_kalman(std::slice::from_ref(&one), &[0.0]).unwrap().predicted_mse;
        let pair = design_kalman(&[two.clone(), two], &[0.0, 0.0]).unwrap().predicted_mse;
        assert!((pair - 0.5 * single).abs() < 1e-12);
    }

    #[test]
    fn traffic_input_noise_level() {
        let parts = vec![traffic(1)];
        let policy = AdjacencyPolicy::uniform(1, 100.0, vec![0]).unwrap();
        let stds = input_noise_stds(&parts, &policy, &budget()).unwrap();
        assert!((stds[0] - 100.0 * budget().kappa()).abs() < 1e-9);
        assert!((stds[0] - 175.6).abs() < 0.1, "{}", stds[0]);
    }

    #[test]
    fn compensated_input_matches_riccati() {
        let parts = vec![traffic(1)];
        let policy = AdjacencyPolicy::uniform(1, 100.0, vec![0]).unwrap();
        let plans = input_perturbation_plan(&parts, &policy, &budget()).unwrap();
        let std = plans.compensated.input_noise_std[0];
        let d = design_kalman(&parts, &[std]).unwrap();
        let rel = (plans.compensated.predicted_mse - d.predicted_mse).abs() / d.predicted_mse;
        assert!(rel < 1e-9, "{rel}");
        assert!(plans.compensated.predicted_mse <= plans.naive.predicted_mse);
    }

    #[test]
    fn naive_mse_from_mismatched_lyapunov() {
        let parts = vec![traffic(1)];
        let policy = AdjacencyPolicy::uniform(1, 100.0, vec![0]).unwrap();
        let plans = input_perturbation_plan(&parts, &policy, &budget()).unwrap();
        let p = &parts[0];
        let f = &plans.naive.filters[0];
        let sigma = plans.naive.input_noise_std[0];
        let augmented = p.with_extra_measurement_noise(sigma).unwrap();
        let e = crate::control::build_restricted_error_system(&augmented, &p.l, &f.g).unwrap();
        let cov = solve_discrete_lyapunov(e.a(), &(e.b() * e.b().transpose())).unwrap();
        let mse = (e.c() * cov * e.c().transpose()).trace();
        assert!((mse - plans.naive.predicted_mse).abs() <= 1e-9 * mse);
    }

    #[test]
    fn traffic_kalman_sensitivity_conventions() {
        let parts = vec![traffic(1)];
        let policy = AdjacencyPolicy::uniform(1, 1.0, vec![0]).unwrap();
        let plan = kalman_output_plan(&parts, &policy, &budget()).unwrap();
        assert!(
            (plan.gamma[0] - (4.0f64 / 7.0).sqrt()).abs() < 1e-6,
            "{}",
            plan.gamma[0]
        );
        assert!(plan.gamma_filter_form.as_ref().unwrap()[0] > 0.0);
        let rel = (plan.recomputed_mse() - plan.predicted_mse).abs() / plan.predicted_mse;
        assert!(rel < 1e-12);
        assert!((plan.output_noise_std - budget().kappa() * plan.gamma[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_rho_gives_pure_estimation_error() {
        let parts = vec![traffic(2), traffic(2)];
        let policy = AdjacencyPolicy::uniform(2, 0.0, vec![0]).unwrap();
        let plan = kalman_output_plan(&parts, &policy, &budget()).unwrap();
        let d = design_kalman(&parts, &[0.0, 0.0]).unwrap();
        assert_eq!(plan.output_noise_std, 0.0);
        assert!((plan.predicted_mse - d.predicted_mse).abs() < 1e-9 * d.predicted_mse);
    }

    #[test]
    fn unstable_filter_rejected() {
        let parts = vec![scalar(0.5, 1.0, 1.0)];
        let policy = AdjacencyPolicy::uniform(1, 1.0, vec![0]).unwrap();
        let bad = FilterRealization::new(
            Mat::from_element(1, 1, 1.5),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::zeros(1, 1),
        )
        .unwrap();
        let e = output_perturbation_plan(&parts, &policy, &budget(), &[bad]).unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
    }

    #[test]
    fn invalid_participants_rejected() {
        let undetectable = StateSpaceSystem::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.2]),
            Mat::identity(2, 3),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
        )
        .unwrap();
        let e = ParticipantModel::new(undetectable, Mat::identity(1, 2), DVector::zeros(2)).unwrap_err();
        assert!(e.to_string().contains("detectable"));
        let noiseless = StateSpaceSystem::new(
            Mat::from_element(1, 1, 0.5),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::zeros(1, 1),
        )
        .unwrap();
        assert!(ParticipantModel::new(noiseless, Mat::identity(1, 1), DVector::zeros(1)).is_err());
    }

    #[test]
    fn synthesized_plan_beats_or_matches_free_program() {
        let parts = vec![scalar(0.5, 1.0, 1.0)];
        let policy = AdjacencyPolicy::uniform(1, 1.0, vec![0]).unwrap();
        let sweep = CapSweep {
            steps: 4,
            refine_iterations: 4,
            ..CapSweep::default()
        };
        let sp = synthesized_plan(&parts, &policy, &budget(), &sweep).unwrap();
        assert!(!sp.restricted);
        let free = sp.candidates[0].1;
        assert!(sp.plan.predicted_mse <= free);
        assert_eq!(sp.plan.scheme, Scheme::OutputSynthesized);
        let e = build_error_system(&parts[0].system, &parts[0].l, &sp.plan.filters[0]).unwrap();
        assert!((h2_norm_squared(&e).unwrap() - sp.plan.estimation_mse[0]).abs() < 1e-9);
    }

    fn random_participant() -> impl Strategy<Value = ParticipantModel> {
        (-0.95f64..0.95, 0.1f64..3.0, 0.1f64..3.0, -2.0f64..2.0, 0.2f64..2.0).prop_map(|(a, q, r, c, l)| {
            let sys = StateSpaceSystem::new(
                Mat::from_element(1, 1, a),
                Mat::from_row_slice(1, 2, &[q.sqrt(), 0.0]),
                Mat::from_element(1, 1, if c.abs() < 0.05 { 0.05 } else { c }),
                Mat::from_row_slice(1, 2, &[0.0, r.sqrt()]),
            )
            .unwrap();
            ParticipantModel::new(sys, Mat::from_element(1, 1, l), DVector::zeros(1)).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn compensated_never_worse_than_naive(parts in prop::collection::vec(random_participant(), 1..4), rho in 0.0f64..3.0) {
            let policy = AdjacencyPolicy::uniform(parts.len(), rho, vec![0]).unwrap();
            let plans = input_perturbation_plan(&parts, &policy, &budget()).unwrap();
            prop_assert!(plans.compensated.predicted_mse <= plans.naive.predicted_mse * (1.0 + 1e-10));
            for plan in [&plans.naive, &plans.compensated] {
                let rel = (plan.recomputed_mse() - plan.predicted_mse).abs() / plan.predicted_mse.max(1e-300);
                prop_assert!(rel <= 1e-9);
            }
        }

        #[test]
        fn output_noise_permutation_invariant_and_monotone(
            parts in prop::collection::vec(random_participant(), 2..4),
            rhos in prop::collection::vec(0.0f64..3.0, 4),
            bump in 0.0f64..2.0,
        ) {
            let n = parts.len();
            let adj = |r: f64| Adjacency::new(r, vec![0]).unwrap();
            let policy = AdjacencyPolicy::new(rhos[..n].iter().map(|&r| adj(r)).collect()).unwrap();
            let base = kalman_output_plan(&parts, &policy, &budget()).unwrap();
            let rev_parts: Vec<_> = parts.iter().rev().cloned().collect();
            let rev_policy = AdjacencyPolicy::new(policy.participants.iter().rev().cloned().collect()).unwrap();
            let rev = kalman_output_plan(&rev_parts, &rev_policy, &budget()).unwrap();
            prop_assert!((base.output_noise_std - rev.output_noise_std).abs() <= 1e-12 * base.output_noise_std.max(1.0));
            let mut bumped = policy.clone();
            bumped.participants[0].rho += bump;
            let up = kalman_output_plan(&parts, &bumped, &budget()).unwrap();
            prop_assert!(up.output_noise_std >= base.output_noise_std);
        }
    }
}
