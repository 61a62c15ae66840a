//! Restricted-class synthesis, valid for plants that are not Schur stable.
//!
//! The filter is fixed to the observer form `F = A − G C`, `H = L`, `K = 0`;
//! only the gain `G = X⁻¹ Ĝ` is designed. Constraints per participant:
//!
//! ```text
//! μ − Tr(W) ≥ 0
//! [W L; Lᵀ X] ≻ 0
//! [X  XA−ĜC  XB−ĜD;  ·  X  0;  ·  ·  I] ≻ 0
//! [X  0  XA−ĜC  ĜCT;  ·  (λ/ρ²)I  L  0;  ·  ·  X  0;  ·  ·  ·  I] ≻ 0
//! ```
//!
//! `W` is sized by the estimated output rather than the state, so no
//! certificate entry is left unconstrained by the objective (a state-sized
//! `[Y I; I X]` coupling leaves `Y` free along the kernel of `L`).

use crate::control::{is_detectable, FilterRealization, StateSpaceSystem};
use crate::error::{Error, Result};
use crate::linalg::{inverse, Mat};
use crate::privacy::{Adjacency, PrivacyBudget};
use crate::sdp::{AffineExpr, SdpProblem, SolverOptions, VarHandle};

use super::{
    check_mode, group_participants, verify_synthesis, Certificates, JointSynthesis, LambdaMode, SynthesisParticipant,
    SynthesisResult,
};

struct GroupVars {
    w: VarHandle,
    x: VarHandle,
    g_hat: VarHandle,
    mu: VarHandle,
}

fn c(m: Mat) -> AffineExpr {
    AffineExpr::constant(m)
}

fn v(h: &VarHandle) -> AffineExpr {
    AffineExpr::var(h)
}

fn is_trivial(p: &SynthesisParticipant) -> bool {
    p.l.amax() == 0.0
}

fn build(
    participants: &[SynthesisParticipant],
    groups: &[Vec<usize>],
    budget: &PrivacyBudget,
    mode: LambdaMode,
) -> Result<(SdpProblem, Vec<Option<GroupVars>>, VarHandle)> {
    let mut prob = SdpProblem::new();
    let lambda = prob.scalar_var("lambda");
    let mut vars = Vec::with_capacity(groups.len());
    let mut objective = AffineExpr::scalar(0.0);
    for (gi, group) in groups.iter().enumerate() {
        let part = &participants[group[0]];
        if is_trivial(part) {
            vars.push(None);
            continue;
        }
        let (a, b, cm, d) = (part.plant.a(), part.plant.b(), part.plant.c(), part.plant.d());
        let (n, p, m, q) = (a.nrows(), cm.nrows(), b.ncols(), part.l.nrows());
        let l = &part.l;
        let ct = cm * part.selection_matrix()?;
        let rho2 = part.adjacency.rho.powi(2);
        let gv = GroupVars {
            w: prob.sym_var(&format!("W{gi}"), q),
            x: prob.sym_var(&format!("X{gi}"), n),
            g_hat: prob.full_var(&format!("Ghat{gi}"), n, p),
            mu: prob.scalar_var(&format!("mu{gi}")),
        };
        let (w, x, gh) = (v(&gv.w), v(&gv.x), v(&gv.g_hat));
        let eye_n = c(Mat::identity(n, n));

        prob.add_lmi_nonstrict(&format!("trace{gi}"), v(&gv.mu) - w.trace())?;

        let coupling = AffineExpr::block_sym(&[vec![Some(w), Some(c(l.clone()))], vec![None, Some(x.clone())]])?;
        prob.add_lmi(&format!("coupling{gi}"), coupling)?;

        let xa_gc = x.right(a) - gh.right(cm);
        let h2 = AffineExpr::block_sym(&[
            vec![Some(x.clone()), Some(xa_gc.clone()), Some(x.right(b) - gh.right(d))],
            vec![None, Some(x.clone()), None],
            vec![None, None, Some(c(Mat::identity(m, m)))],
        ])?;
        prob.add_lmi(&format!("h2_state{gi}"), h2)?;

        let hinf = AffineExpr::block_sym(&[
            vec![Some(x.clone()), None, Some(xa_gc), Some(gh.right(&ct))],
            vec![
                None,
                Some(v(&lambda).times_matrix(&(Mat::identity(q, q) / rho2))),
                Some(c(l.clone())),
                None,
            ],
            vec![None, None, Some(x.clone()), None],
            vec![None, None, None, Some(eye_n)],
        ])?;
        prob.add_lmi(&format!("hinf{gi}"), hinf)?;

        objective = objective + v(&gv.mu) * group.len() as f64;
        vars.push(Some(gv));
    }
    match mode {
        LambdaMode::Free => objective = objective + v(&lambda) * budget.kappa().powi(2),
        LambdaMode::Capped(cap) => {
            prob.add_lmi_nonstrict("lambda_cap", AffineExpr::scalar(cap) - v(&lambda))?;
        }
    }
    prob.add_lmi_nonstrict("lambda_nonneg", v(&lambda))?;
    prob.minimize(objective)?;
    Ok((prob, vars, lambda))
}

fn validate(participants: &[SynthesisParticipant], mode: LambdaMode) -> Result<()> {
    check_mode(mode)?;
    if participants.is_empty() {
        return Err(Error::Invalid("synthesis needs at least one participant".into()));
    }
    for (i, p) in participants.iter().enumerate() {
        if !is_trivial(p) && !is_detectable(p.plant.a(), p.plant.c())? {
            return Err(Error::Domain(format!(
                "participant {i}: (A, C) is not detectable; no observer gain can stabilize the error"
            )));
        }
    }
    Ok(())
}

/// The restricted-class program, e.g. for dumping in triplet form.
pub fn unstable_sdp(
    participants: &[SynthesisParticipant],
    budget: &PrivacyBudget,
    mode: LambdaMode,
) -> Result<SdpProblem> {
    validate(participants, mode)?;
    let groups = group_participants(participants);
    Ok(build(participants, &groups, budget, mode)?.0)
}

fn observer(part: &SynthesisParticipant, g: Mat) -> Result<FilterRealization> {
    let (a, cm) = (part.plant.a(), part.plant.c());
    let k = Mat::zeros(part.l.nrows(), cm.nrows());
    FilterRealization::new(a - &g * cm, g, part.l.clone(), k)
}

/// Joint restricted-class synthesis for several participants.
pub fn synth_unstable_joint(
    participants: &[SynthesisParticipant],
    budget: &PrivacyBudget,
    mode: LambdaMode,
    opts: &SolverOptions,
) -> Result<JointSynthesis> {
    validate(participants, mode)?;
    let groups = group_participants(participants);
    let (prob, vars, lambda_h) = build(participants, &groups, budget, mode)?;
    let any_program = vars.iter().any(Option::is_some);
    let sol = if any_program { Some(prob.solve(opts)?) } else { None };
    let lambda = sol.as_ref().map_or(0.0, |s| s.scalar(&lambda_h).max(0.0));
    let mut results: Vec<Option<SynthesisResult>> = vec![None; participants.len()];
    let mut mu_total = 0.0;
    for (group, gv) in groups.iter().zip(&vars) {
        let part = &participants[group[0]];
        let (filter, mu, certificates) = match (gv, &sol) {
            (Some(gv), Some(sol)) => {
                let (x, g_hat) = (sol.value(&gv.x), sol.value(&gv.g_hat));
                let g = inverse(&x, "X")? * &g_hat;
                let cert = Certificates::Unstable {
                    w: sol.value(&gv.w),
                    x,
                    g_hat,
                };
                (observer(part, g)?, sol.scalar(&gv.mu).max(0.0), cert)
            }
            _ => {
                let g = Mat::zeros(part.plant.n_states(), part.plant.c().nrows());
                (observer(part, g)?, 0.0, Certificates::Trivial)
            }
        };
        let mut result = SynthesisResult {
            verified: Default::default(),
            filter,
            mu,
            lambda,
            certificates,
        };
        result.verified = verify_synthesis(&result, &part.plant, &part.l, &part.adjacency)?;
        mu_total += mu * group.len() as f64;
        for &i in group {
            results[i] = Some(result.clone());
        }
    }
    let constraint_values = match &sol {
        Some(sol) => prob
            .constraints()
            .iter()
            .map(|cn| (cn.name.clone(), cn.expr.evaluate(&sol.x)))
            .collect(),
        None => Vec::new(),
    };
    Ok(JointSynthesis {
        results: results
            .into_iter()
            .map(|r| r.expect("every participant is grouped"))
            .collect(),
        lambda,
        mu_total,
        objective: mu_total + budget.kappa().powi(2) * lambda,
        kappa: budget.kappa(),
        duality_gap: sol.as_ref().map_or(0.0, |s| s.duality_gap),
        groups,
        constraint_values,
    })
}

/// Single-participant restricted-class synthesis.
pub fn synth_unstable(
    plant: &StateSpaceSystem,
    l: &Mat,
    adjacency: &Adjacency,
    budget: &PrivacyBudget,
    mode: LambdaMode,
) -> Result<SynthesisResult> {
    let part = SynthesisParticipant::new(plant.clone(), l.clone(), adjacency.clone())?;
    let joint = synth_unstable_joint(&[part], budget, mode, &SolverOptions::default())?;
    Ok(joint.results.into_iter().next().expect("one participant"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::solve_dare;

    fn random_walk() -> StateSpaceSystem {
        StateSpaceSystem::new(
            Mat::from_element(1, 1, 1.2),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::from_element(1, 1, 1.0),
            Mat::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap()
    }

    fn budget() -> PrivacyBudget {
        PrivacyBudget::new(3f64.ln(), 0.05).unwrap()
    }

    #[test]
    fn unstable_plant_gets_stabilizing_gain() {
        let adj = Adjacency::new(1.0, vec![0]).unwrap();
        let plant = random_walk();
        let l = Mat::from_element(1, 1, 1.0);
        let r = synth_unstable(&plant, &l, &adj, &budget(), LambdaMode::Free).unwrap();
        assert!(r.filter.spectral_radius().unwrap() < 1.0);
        assert!(r.verified.passed(), "{:?}", r.verified);
        assert!(matches!(r.certificates, Certificates::Unstable { .. }));
    }

    #[test]
    fn large_cap_recovers_predictor() {
        let adj = Adjacency::new(1.0, vec![0]).unwrap();
        let plant = random_walk();
        let l = Mat::from_element(1, 1, 1.0);
        let r = synth_unstable(&plant, &l, &adj, &budget(), LambdaMode::Capped(1e4)).unwrap();
        let (b, d) = (plant.b(), plant.d());
        let sol = solve_dare(
            plant.a(),
            plant.c(),
            &(b * b.transpose()),
            &(d * d.transpose()),
            &(b * d.transpose()),
        )
        .unwrap();
        let p = sol.p[(0, 0)];
        assert!((r.mu - p).abs() <= 1e-3 * p, "{} vs {}", r.mu, p);
        assert!((r.filter.g[(0, 0)] - sol.gain[(0, 0)]).abs() < 1e-2);
    }

    #[test]
    fn zero_output_is_trivial() {
        let adj = Adjacency::new(1.0, vec![0]).unwrap();
        let r = synth_unstable(&random_walk(), &Mat::zeros(1, 1), &adj, &budget(), LambdaMode::Free).unwrap();
        assert_eq!(r.certificates, Certificates::Trivial);
        assert_eq!((r.mu, r.lambda), (0.0, 0.0));
        assert!(r.verified.passed());
    }

    #[test]
    fn undetectable_plant_rejected() {
        let plant = StateSpaceSystem::new(
            Mat::from_element(1, 1, 1.5),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 1),
            Mat::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        let adj = Adjacency::new(1.0, vec![0]).unwrap();
        let e = synth_unstable(&plant, &Mat::identity(1, 1), &adj, &budget(), LambdaMode::Free).unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
    }
}
