//! Privacy-aware filter synthesis.
//!
//! Both synthesis routes minimize `Σᵢ μᵢ + κ² λ` where `μᵢ` bounds the
//! squared H₂ norm of participant `i`'s estimation-error system and `λ`
//! bounds `ρᵢ² ‖sensitivity systemᵢ‖∞²` for every participant (one shared
//! `λ`). The stable route searches full-order filters `(F, G, H, K)` through a
//! change of variables; the restricted route fixes `F = A − G C`, `H = L`,
//! `K = 0`, which also covers plants that are not Schur stable.
//!
//! Identical participants are solved once with a multiplicity weight on
//! their `μ`: by convexity and symmetry the joint problem has a symmetric
//! optimum, so this is exact.

mod recover;
mod stable;
mod unstable;
mod verify;

pub use recover::{recover_filter, recover_filter_with};
pub use stable::{stable_sdp, synth_stable, synth_stable_joint};
pub use unstable::{synth_unstable, synth_unstable_joint, unstable_sdp};
pub use verify::{schur_complement_min_eig, verify_synthesis, VerificationReport};

use crate::control::{FilterRealization, StateSpaceSystem};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::privacy::Adjacency;

/// How the shared sensitivity bound `λ` enters the program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    /// `λ` is a decision variable priced at `κ²` in the objective.
    Free,
    /// Minimize `Σ μᵢ` subject to `λ ≤ cap`.
    Capped(f64),
}

/// One participant of a synthesis problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisParticipant {
    pub plant: StateSpaceSystem,
    pub l: Mat,
    pub adjacency: Adjacency,
}

impl SynthesisParticipant {
    pub fn new(plant: StateSpaceSystem, l: Mat, adjacency: Adjacency) -> Result<Self> {
        if l.ncols() != plant.n_states() {
            return Err(Error::Dimension(format!(
                "L has {} columns, plant has {} states",
                l.ncols(),
                plant.n_states()
            )));
        }
        adjacency.validate(Some(plant.n_states()))?;
        if adjacency.rho <= 0.0 {
            return Err(Error::Domain(
                "synthesis needs rho > 0 (participants with rho = 0 carry no privacy constraint)".into(),
            ));
        }
        Ok(Self { plant, l, adjacency })
    }

    pub fn selection_matrix(&self) -> Result<Mat> {
        self.adjacency.selection_matrix(self.plant.n_states())
    }
}

/// Solved matrix variables, kept for independent re-verification.
#[derive(Debug, Clone, PartialEq)]
pub enum Certificates {
    Stable {
        w: Mat,
        y: Mat,
        z: Mat,
        f_hat: Mat,
        g_hat: Mat,
        h_hat: Mat,
        k_hat: Mat,
    },
    Unstable {
        w: Mat,
        x: Mat,
        g_hat: Mat,
    },
    /// `L = 0`: nothing to estimate, zero gain, no program solved.
    Trivial,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub filter: FilterRealization,
    pub mu: f64,
    pub lambda: f64,
    pub certificates: Certificates,
    pub verified: VerificationReport,
}

/// Solution of a multi-participant program.
#[derive(Debug, Clone)]
pub struct JointSynthesis {
    /// One entry per participant, in input order.
    pub results: Vec<SynthesisResult>,
    pub lambda: f64,
    pub mu_total: f64,
    /// `Σ μᵢ + κ² λ`, the MSE bound of the output-perturbation scheme.
    pub objective: f64,
    pub kappa: f64,
    pub duality_gap: f64,
    /// Participant indices sharing one solved representative.
    pub groups: Vec<Vec<usize>>,
    /// Constraint matrices evaluated at the solution, by name.
    pub constraint_values: Vec<(String, Mat)>,
}

impl JointSynthesis {
    pub fn filters(&self) -> Vec<FilterRealization> {
        self.results.iter().map(|r| r.filter.clone()).collect()
    }

    pub fn all_verified(&self) -> bool {
        self.results.iter().all(|r| r.verified.passed())
    }
}

/// Groups identical participants, preserving first-occurrence order.
pub(crate) fn group_participants(participants: &[SynthesisParticipant]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in participants.iter().enumerate() {
        match groups.iter_mut().find(|g| participants[g[0]] == *p) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

pub(crate) fn check_mode(mode: LambdaMode) -> Result<()> {
    if let LambdaMode::Capped(cap) = mode {
        if !(cap.is_finite() && cap > 0.0) {
            return Err(Error::Domain(format!("lambda cap must be positive, got {cap}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_merges_identical_participants() {
        let plant = StateSpaceSystem::new(
            Mat::from_element(1, 1, 0.5),
            Mat::from_element(1, 2, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        let adj = Adjacency::new(1.0, vec![0]).unwrap();
        let a = SynthesisParticipant::new(plant.clone(), Mat::from_element(1, 1, 1.0), adj.clone()).unwrap();
        let b = SynthesisParticipant::new(plant, Mat::from_element(1, 1, 2.0), adj).unwrap();
        let groups = group_participants(&[a.clone(), b.clone(), a.clone(), b, a]);
        assert_eq!(groups, vec![vec![0, 2, 4], vec![1, 3]]);
    }

    #[test]
    fn rho_must_be_positive() {
        let plant = StateSpaceSystem::static_gain(Mat::zeros(1, 1)).unwrap();
        let r = SynthesisParticipant::new(plant, Mat::zeros(1, 0), Adjacency::new(0.0, vec![]).unwrap());
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
