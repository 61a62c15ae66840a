//! Log-det barrier interior-point method.
//!
//! Phase I minimizes a common shift `s` with `F_j(x) − ε_j I + s I ≻ 0`;
//! a centred point with `s < 0` is strictly feasible, a certified lower bound
//! `s − gap > 0` proves infeasibility. Phase II follows the central path of
//! `t·cᵀx − Σ log det(F_j(x) − ε_j I)` with Newton centring. On the central
//! path `Z_j = (F_j(x) − ε_j I)⁻¹ / t` is dual feasible, so `N / t` bounds the
//! duality gap, `N` being the total barrier degree.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eig, Mat};

use super::{SdpProblem, VarHandle};

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative duality-gap target.
    pub rel_gap: f64,
    /// Absolute duality-gap floor.
    pub abs_gap: f64,
    /// Newton iterations allowed per phase before declaring a stall.
    pub max_iterations: usize,
    /// Central-path parameter growth factor.
    pub mu: f64,
    /// Box bound `|x_k| ≤ R` keeping the barrier bounded.
    pub box_radius: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_gap: 1e-9,
            abs_gap: 1e-12,
            max_iterations: 200,
            mu: 12.0,
            box_radius: 1e8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Upper bound on the distance of `objective` from the optimum.
    pub duality_gap: f64,
    pub iterations: usize,
    /// Smallest eigenvalue of each constraint matrix (margins not subtracted).
    pub min_eigs: Vec<f64>,
    /// Dual matrices `Z_j` recovered from the barrier.
    pub dual: Vec<Mat>,
}

impl SdpSolution {
    pub fn value(&self, h: &VarHandle) -> Mat {
        h.value_from(&self.x)
    }

    pub fn scalar(&self, h: &VarHandle) -> f64 {
        self.x[h.scalar_index(0, 0)]
    }
}

/// Nonzero `(row, col, value)` of a coefficient matrix.
type Entry = (usize, usize, f64);

/// A constraint block with sparse coefficient matrices.
struct Block {
    dim: usize,
    base: Mat,
    terms: Vec<(usize, Vec<Entry>)>,
}

struct Barrier {
    blocks: Vec<Block>,
    /// scalar unknowns subject to the box
    n_box: usize,
    /// dimension of z
    m: usize,
    c: DVector<f64>,
    radius: f64,
}

struct Eval {
    f: f64,
    g: DVector<f64>,
    h: DMatrix<f64>,
    inverses: Vec<Mat>,
}

impl Barrier {
    fn degree(&self) -> f64 {
        (self.blocks.iter().map(|b| b.dim).sum::<usize>() + 2 * self.n_box) as f64
    }

    fn slack(&self, b: &Block, z: &DVector<f64>) -> Mat {
        let mut s = b.base.clone();
        for (k, entries) in &b.terms {
            let v = z[*k];
            if v != 0.0 {
                for &(r, c, coef) in entries {
                    s[(r, c)] += coef * v;
                }
            }
        }
        s
    }

    fn inside(&self, z: &DVector<f64>) -> bool {
        if (0..self.n_box).any(|k| z[k].abs() >= self.radius) {
            return false;
        }
        self.blocks.iter().all(|b| self.slack(b, z).cholesky().is_some())
    }

    /// Log-barrier part of the objective (without `t·cᵀz`); `None` outside
    /// the domain. Keeping the linear term separate preserves precision in
    /// the line search once `t` is large.
    fn value(&self, z: &DVector<f64>) -> Option<f64> {
        let mut f = 0.0;
        for k in 0..self.n_box {
            let (a, b) = (self.radius - z[k], self.radius + z[k]);
            if a <= 0.0 || b <= 0.0 {
                return None;
            }
            f -= a.ln() + b.ln();
        }
        for b in &self.blocks {
            let chol = self.slack(b, z).cholesky()?;
            f -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        f.is_finite().then_some(f)
    }

    fn eval(&self, z: &DVector<f64>, t: f64) -> Option<Eval> {
        let m = self.m;
        let mut f = 0.0;
        let mut g = &self.c * t;
        let mut h = DMatrix::<f64>::zeros(m, m);
        let mut inverses = Vec::with_capacity(self.blocks.len());
        for k in 0..self.n_box {
            let (a, b) = (self.radius - z[k], self.radius + z[k]);
            if a <= 0.0 || b <= 0.0 {
                return None;
            }
            f -= a.ln() + b.ln();
            g[k] += 1.0 / a - 1.0 / b;
            h[(k, k)] += 1.0 / (a * a) + 1.0 / (b * b);
        }
        for b in &self.blocks {
            let chol = self.slack(b, z).cholesky()?;
            f -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let sinv = chol.inverse();
            let d = b.dim;
            // N_k = S⁻¹ F_k S⁻¹
            let mut ns: Vec<Mat> = Vec::with_capacity(b.terms.len());
            for (k, entries) in &b.terms {
                let mut tr = 0.0;
                let mut nk = Mat::zeros(d, d);
                for &(r, c, v) in entries {
                    tr += v * sinv[(c, r)];
                    let col = sinv.column(r);
                    let row = sinv.row(c);
                    nk.ger(v, &col, &row.transpose(), 1.0);
                }
                g[*k] -= tr;
                ns.push(nk);
            }
            for (i, (ki, _)) in b.terms.iter().enumerate() {
                for (kj, entries) in b.terms.iter().skip(i) {
                    let mut acc = 0.0;
                    for &(r, c, v) in entries {
                        acc += v * ns[i][(c, r)];
                    }
                    h[(*ki, *kj)] += acc;
                    if ki != kj {
                        h[(*kj, *ki)] += acc;
                    }
                }
            }
            inverses.push(sinv);
        }
        (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some(Eval { f, g, h, inverses })
    }
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let m = h.nrows();
    let scale: DVector<f64> = DVector::from_fn(m, |i, _| {
        let d = h[(i, i)];
        if d > 0.0 && d.is_finite() {
            1.0 / d.sqrt()
        } else {
            1.0
        }
    });
    let mut hs = DMatrix::from_fn(m, m, |i, j| h[(i, j)] * scale[i] * scale[j]);
    let gs = g.component_mul(&scale);
    let mut reg = 0.0;
    for _ in 0..12 {
        if let Some(ch) = hs.clone().cholesky() {
            let ds = ch.solve(&(-&gs));
            let dir = ds.component_mul(&scale);
            if dir.iter().all(|v| v.is_finite()) {
                return Some(dir);
            }
        }
        let bump = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
        for i in 0..m {
            hs[(i, i)] += bump - reg;
        }
        reg = bump;
    }
    None
}

enum Centering {
    Done,
    Stalled,
}

/// Damped Newton centring at fixed `t`. Returns the iteration count used.
fn center(bar: &Barrier, z: &mut DVector<f64>, t: f64, iters: &mut usize, cap: usize) -> Result<Centering> {
    let mut last_decrement = f64::INFINITY;
    let mut stagnant = 0;
    loop {
        if *iters >= cap {
            return Err(Error::NonConvergence {
                what: "SDP interior-point method",
                iterations: *iters,
                residual: f64::NAN,
            });
        }
        *iters += 1;
        let ev = bar
            .eval(z, t)
            .ok_or_else(|| Error::Numerical("iterate left the barrier domain".into()))?;
        let Some(dir) = newton_direction(&ev.h, &ev.g) else {
            return Ok(Centering::Stalled);
        };
        let decrement = -ev.g.dot(&dir);
        if decrement.is_nan() {
            return Ok(Centering::Stalled);
        }
        if decrement <= 1e-8 {
            return Ok(Centering::Done);
        }
        // a step that no longer improves the decrement is below working precision
        if decrement <= 1e-4 && decrement >= 0.5 * last_decrement {
            stagnant += 1;
            if stagnant >= 3 {
                return Ok(Centering::Done);
            }
        } else {
            stagnant = 0;
        }
        last_decrement = decrement;
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-14 {
            let trial = &*z + &dir * alpha;
            if let Some(phi) = bar.value(&trial) {
                let change = t * alpha * bar.c.dot(&dir) + (phi - ev.f);
                if change <= -0.25 * alpha * decrement {
                    *z = trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Ok(Centering::Stalled);
        }
        // precision-limited: the step no longer moves the barrier value
        if alpha < 1e-3 {
            return Ok(if decrement <= 1e-3 {
                Centering::Done
            } else {
                Centering::Stalled
            });
        }
    }
}

fn compile(problem: &SdpProblem, with_shift: bool) -> Vec<Block> {
    let n = problem.n_scalars();
    problem
        .constraints()
        .iter()
        .map(|c| {
            let dim = c.expr.rows();
            let base = c.expr.constant_part() - Mat::identity(dim, dim) * c.margin();
            let mut terms: Vec<(usize, Vec<Entry>)> = c
                .expr
                .terms()
                .iter()
                .map(|(&k, m)| {
                    let entries = (0..dim)
                        .flat_map(|i| (0..dim).map(move |j| (i, j)))
                        .filter(|&(i, j)| m[(i, j)] != 0.0)
                        .map(|(i, j)| (i, j, m[(i, j)]))
                        .collect();
                    (k, entries)
                })
                .collect();
            if with_shift {
                terms.push((n, (0..dim).map(|i| (i, i, 1.0)).collect()));
            }
            Block { dim, base, terms }
        })
        .collect()
}

fn objective_vector(problem: &SdpProblem) -> (DVector<f64>, f64) {
    let n = problem.n_scalars();
    let mut c = DVector::zeros(n);
    let mut c0 = 0.0;
    if let Some(obj) = problem.objective() {
        c0 = obj.constant_part()[(0, 0)];
        for (&k, t) in obj.terms() {
            c[k] = t[(0, 0)];
        }
    }
    (c, c0)
}

fn finish(problem: &SdpProblem, x: Vec<f64>, gap: f64, iterations: usize, dual: Vec<Mat>) -> SdpSolution {
    let (c, c0) = objective_vector(problem);
    let objective = c0 + c.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    SdpSolution {
        min_eigs: problem.constraint_min_eigs(&x),
        x,
        objective,
        duality_gap: gap,
        iterations,
        dual,
    }
}

/// Phase I: find a well-centred strictly feasible point.
pub(crate) fn phase_one(problem: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    let n = problem.n_scalars();
    if problem.constraints().is_empty() {
        return Ok(finish(problem, vec![0.0; n], 0.0, 0, Vec::new()));
    }
    let blocks = compile(problem, true);
    let worst = blocks
        .iter()
        .map(|b| min_sym_eig(&b.base))
        .fold(f64::INFINITY, f64::min);
    let scale = blocks.iter().map(|b| b.base.amax()).fold(1.0, f64::max);
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let bar = Barrier {
        blocks,
        n_box: n,
        m: n + 1,
        c,
        radius: opts.box_radius,
    };
    let mut z = DVector::zeros(n + 1);
    z[n] = -worst + 1.0;
    let degree = bar.degree();
    let mut t = degree / (1.0 + z[n].abs());
    let mut iters = 0;
    loop {
        let status = center(&bar, &mut z, t, &mut iters, opts.max_iterations)?;
        let s = z[n];
        let gap = degree / t;
        if s < 0.0 {
            let x: Vec<f64> = z.iter().take(n).copied().collect();
            return Ok(finish(problem, x, 0.0, iters, Vec::new()));
        }
        if s - gap > 0.0 || gap < 1e-14 * scale || matches!(status, Centering::Stalled) && gap < 1e-9 * scale {
            let x: Vec<f64> = z.iter().take(n).copied().collect();
            let best = problem
                .constraint_min_eigs(&x)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            return Err(Error::Infeasible { best_min_eig: best });
        }
        t *= opts.mu;
    }
}

pub(crate) fn solve(problem: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    let start = phase_one(problem, opts)?;
    if problem.objective().is_none() {
        return Ok(start);
    }
    let n = problem.n_scalars();
    let (c, c0) = objective_vector(problem);
    let bar = Barrier {
        blocks: compile(problem, false),
        n_box: n,
        m: n,
        c: c.clone(),
        radius: opts.box_radius,
    };
    let mut z = DVector::from_vec(start.x.clone());
    if !bar.inside(&z) {
        return Err(Error::Numerical("phase I point not strictly feasible".into()));
    }
    let degree = bar.degree();

    // initial t balancing the objective against the barrier gradient
    let mut t = {
        let ev = bar
            .eval(&z, 0.0)
            .ok_or_else(|| Error::Numerical("barrier undefined at start".into()))?;
        let hinv_c = newton_direction(&ev.h, &(-&c));
        let hinv_g = newton_direction(&ev.h, &(-&ev.g));
        match (hinv_c, hinv_g) {
            (Some(hc), Some(hg)) => {
                let num = -c.dot(&hg);
                let den = c.dot(&hc);
                let t0 = num / den;
                if t0.is_finite() && t0 > 0.0 {
                    t0
                } else {
                    degree / (1.0 + (c0 + c.dot(&z)).abs())
                }
            }
            _ => degree / (1.0 + (c0 + c.dot(&z)).abs()),
        }
    }
    .max(1e-12);

    let mut iters = start.iterations;
    let cap = start.iterations + opts.max_iterations;
    loop {
        let stalled = matches!(center(&bar, &mut z, t, &mut iters, cap)?, Centering::Stalled);
        let obj = c0 + c.dot(&z);
        let gap = degree / t;
        if gap <= opts.rel_gap * obj.abs() + opts.abs_gap {
            break;
        }
        if stalled && gap <= 1e3 * (opts.rel_gap * obj.abs() + opts.abs_gap) {
            // conditioning limits further progress; accept the attained accuracy
            break;
        }
        t *= opts.mu;
    }
    if z.iter().any(|v| v.abs() > 0.5 * opts.box_radius) {
        return Err(Error::Numerical(
            "iterates reached the variable box; objective appears unbounded".into(),
        ));
    }
    let ev = bar
        .eval(&z, t)
        .ok_or_else(|| Error::Numerical("final iterate outside domain".into()))?;
    let dual = ev.inverses.into_iter().map(|m| m / t).collect();
    Ok(finish(problem, z.iter().copied().collect(), degree / t, iters, dual))
}
