//! Full-order synthesis for Schur-stable plants.
//!
//! Variables per participant: `W, Y, Z` symmetric, `F̂, Ĝ, Ĥ, K̂`, `μ`; one
//! shared `λ`. Constraints (all `≻ 0` except the trace bound):
//!
//! ```text
//! Tr W ≤ μ
//! [W  L−K̂C−Ĥ  L−K̂C  −K̂D;  ·  Z  Z  0;  ·  ·  Y  0;  ·  ·  ·  I]
//! [Z Z 0 0 0 0;  · Y 0 F̂ 0 ĜCT;  · · (λ/ρ²)I Ĥ 0 K̂CT;  · · · Z Z 0;  · · · · Y 0;  · · · · · I]
//! [Z  Z  ZA  ZA  ZB;  ·  Y  YA+ĜC+F̂  YA+ĜC  YB+ĜD;  ·  ·  Z  Z  0;  ·  ·  ·  Y  0;  ·  ·  ·  ·  I]
//! ```

use crate::control::spectral_radius;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::privacy::{Adjacency, PrivacyBudget};
use crate::sdp::{AffineExpr, SdpProblem, SolverOptions, VarHandle};

use super::{
    check_mode, group_participants, recover_filter, verify_synthesis, Certificates, JointSynthesis, LambdaMode,
    SynthesisParticipant, SynthesisResult,
};
use crate::control::StateSpaceSystem;

struct GroupVars {
    w: VarHandle,
    y: VarHandle,
    z: VarHandle,
    f_hat: VarHandle,
    g_hat: VarHandle,
    h_hat: VarHandle,
    k_hat: VarHandle,
    mu: VarHandle,
}

fn c(m: Mat) -> AffineExpr {
    AffineExpr::constant(m)
}

fn v(h: &VarHandle) -> AffineExpr {
    AffineExpr::var(h)
}

fn build(
    participants: &[SynthesisParticipant],
    groups: &[Vec<usize>],
    budget: &PrivacyBudget,
    mode: LambdaMode,
) -> Result<(SdpProblem, Vec<GroupVars>, VarHandle)> {
    let mut prob = SdpProblem::new();
    let lambda = prob.scalar_var("lambda");
    let mut vars = Vec::with_capacity(groups.len());
    let mut objective = AffineExpr::scalar(0.0);
    for (gi, group) in groups.iter().enumerate() {
        let part = &participants[group[0]];
        let (a, b, cm, d) = (part.plant.a(), part.plant.b(), part.plant.c(), part.plant.d());
        let (n, p, m, q) = (a.nrows(), cm.nrows(), b.ncols(), part.l.nrows());
        let t = part.selection_matrix()?;
        let rho2 = part.adjacency.rho.powi(2);
        let gv = GroupVars {
            w: prob.sym_var(&format!("W{gi}"), q),
            y: prob.sym_var(&format!("Y{gi}"), n),
            z: prob.sym_var(&format!("Z{gi}"), n),
            f_hat: prob.full_var(&format!("Fhat{gi}"), n, n),
            g_hat: prob.full_var(&format!("Ghat{gi}"), n, p),
            h_hat: prob.full_var(&format!("Hhat{gi}"), q, n),
            k_hat: prob.full_var(&format!("Khat{gi}"), q, p),
            mu: prob.scalar_var(&format!("mu{gi}")),
        };
        let (w, y, z) = (v(&gv.w), v(&gv.y), v(&gv.z));
        let (fh, gh, hh, kh) = (v(&gv.f_hat), v(&gv.g_hat), v(&gv.h_hat), v(&gv.k_hat));
        let l = &part.l;
        let ct = cm * &t;

        prob.add_lmi_nonstrict(&format!("trace{gi}"), v(&gv.mu) - w.trace())?;

        let l_kc = c(l.clone()) - kh.right(cm);
        let h2 = AffineExpr::block_sym(&[
            vec![
                Some(w.clone()),
                Some(l_kc.clone() - &hh),
                Some(l_kc),
                Some(-kh.right(d)),
            ],
            vec![None, Some(z.clone()), Some(z.clone()), None],
            vec![None, None, Some(y.clone()), None],
            vec![None, None, None, Some(c(Mat::identity(m, m)))],
        ])?;
        prob.add_lmi(&format!("h2_output{gi}"), h2)?;

        let hinf = AffineExpr::block_sym(&[
            vec![Some(z.clone()), Some(z.clone()), None, None, None, None],
            vec![None, Some(y.clone()), None, Some(fh.clone()), None, Some(gh.right(&ct))],
            vec![
                None,
                None,
                Some(v(&lambda).times_matrix(&(Mat::identity(q, q) / rho2))),
                Some(hh.clone()),
                None,
                Some(kh.right(&ct)),
            ],
            vec![None, None, None, Some(z.clone()), Some(z.clone()), None],
            vec![None, None, None, None, Some(y.clone()), None],
            vec![None, None, None, None, None, Some(c(Mat::identity(n, n)))],
        ])?;
        prob.add_lmi(&format!("hinf{gi}"), hinf)?;

        let ya_gc = y.right(a) + gh.right(cm);
        let za = z.right(a);
        let h2_state = AffineExpr::block_sym(&[
            vec![
                Some(z.clone()),
                Some(z.clone()),
                Some(za.clone()),
                Some(za),
                Some(z.right(b)),
            ],
            vec![
                None,
                Some(y.clone()),
                Some(ya_gc.clone() + &fh),
                Some(ya_gc),
                Some(y.right(b) + gh.right(d)),
            ],
            vec![None, None, Some(z.clone()), Some(z.clone()), None],
            vec![None, None, None, Some(y.clone()), None],
            vec![None, None, None, None, Some(c(Mat::identity(m, m)))],
        ])?;
        prob.add_lmi(&format!("h2_state{gi}"), h2_state)?;

        objective = objective + v(&gv.mu) * group.len() as f64;
        vars.push(gv);
    }
    match mode {
        LambdaMode::Free => objective = objective + v(&lambda) * budget.kappa().powi(2),
        LambdaMode::Capped(cap) => {
            prob.add_lmi_nonstrict("lambda_cap", AffineExpr::scalar(cap) - v(&lambda))?;
        }
    }
    prob.minimize(objective)?;
    Ok((prob, vars, lambda))
}

fn validate(participants: &[SynthesisParticipant], mode: LambdaMode) -> Result<()> {
    check_mode(mode)?;
    if participants.is_empty() {
        return Err(Error::Invalid("synthesis needs at least one participant".into()));
    }
    for (i, p) in participants.iter().enumerate() {
        if spectral_radius(p.plant.a())? >= 1.0 {
            return Err(Error::Domain(format!(
                "participant {i}: plant is not Schur stable; use the restricted (unstable-plant) synthesis"
            )));
        }
    }
    Ok(())
}

/// The stable-case program, e.g. for dumping in triplet form.
pub fn stable_sdp(
    participants: &[SynthesisParticipant],
    budget: &PrivacyBudget,
    mode: LambdaMode,
) -> Result<SdpProblem> {
    validate(participants, mode)?;
    let groups = group_participants(participants);
    Ok(build(participants, &groups, budget, mode)?.0)
}

/// Joint stable-case synthesis for several participants.
pub fn synth_stable_joint(
    participants: &[SynthesisParticipant],
    budget: &PrivacyBudget,
    mode: LambdaMode,
    opts: &SolverOptions,
) -> Result<JointSynthesis> {
    validate(participants, mode)?;
    let groups = group_participants(participants);
    let (prob, vars, lambda_h) = build(participants, &groups, budget, mode)?;
    let sol = prob.solve(opts)?;
    let lambda = sol.scalar(&lambda_h).max(0.0);
    let mut results: Vec<Option<SynthesisResult>> = vec![None; participants.len()];
    let mut mu_total = 0.0;
    for (group, gv) in groups.iter().zip(&vars) {
        let part = &participants[group[0]];
        let (y, z) = (sol.value(&gv.y), sol.value(&gv.z));
        let (f_hat, g_hat, h_hat, k_hat) = (
            sol.value(&gv.f_hat),
            sol.value(&gv.g_hat),
            sol.value(&gv.h_hat),
            sol.value(&gv.k_hat),
        );
        let filter = recover_filter(&z, &y, &f_hat, &g_hat, &h_hat, &k_hat)?;
        let mu = sol.scalar(&gv.mu).max(0.0);
        let certificates = Certificates::Stable {
            w: sol.value(&gv.w),
            y,
            z,
            f_hat,
            g_hat,
            h_hat,
            k_hat,
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
    let constraint_values = prob
        .constraints()
        .iter()
        .map(|cn| (cn.name.clone(), cn.expr.evaluate(&sol.x)))
        .collect();
    Ok(JointSynthesis {
        results: results
            .into_iter()
            .map(|r| r.expect("every participant is grouped"))
            .collect(),
        lambda,
        mu_total,
        objective: mu_total + budget.kappa().powi(2) * lambda,
        kappa: budget.kappa(),
        duality_gap: sol.duality_gap,
        groups,
        constraint_values,
    })
}

/// Single-participant stable-case synthesis.
pub fn synth_stable(
    plant: &StateSpaceSystem,
    l: &Mat,
    adjacency: &Adjacency,
    budget: &PrivacyBudget,
    mode: LambdaMode,
) -> Result<SynthesisResult> {
    let part = SynthesisParticipant::new(plant.clone(), l.clone(), adjacency.clone())?;
    let joint = synth_stable_joint(&[part], budget, mode, &SolverOptions::default())?;
    Ok(joint.results.into_iter().next().expect("one participant"))
}
