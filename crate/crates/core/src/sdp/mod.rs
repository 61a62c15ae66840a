//! Small dense semidefinite programs in LMI form.
//!
//! A problem is a set of matrix-valued decision variables, a list of affine
//! symmetric matrix expressions constrained to be positive (semi)definite and
//! an optional linear objective:
//!
//! ```text
//! minimize   c(x)
//! subject to F_j(x) = F_j0 + Σ_k x_k F_jk  ⪰ ε_j I,   j = 1..J
//! ```
//!
//! Strict constraints (`≻ 0`) are enforced with a margin
//! `ε_j = 1e-8 · max(1, |Tr F_j0| / dim)`; non-strict constraints use `ε_j = 0`.

mod expr;
mod solver;
mod triplet;

pub use expr::AffineExpr;
pub use solver::{SdpSolution, SolverOptions};
pub use triplet::{parse_triplets, write_triplets};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Handle to a matrix decision variable.
#[derive(Debug, Clone, PartialEq)]
pub struct VarHandle {
    pub(crate) index: usize,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) symmetric: bool,
    pub(crate) offset: usize,
}

impl VarHandle {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of scalar unknowns carried by this variable.
    pub fn n_scalars(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    /// Scalar index and coefficient basis for entry `(i, j)`.
    pub(crate) fn scalar_index(&self, i: usize, j: usize) -> usize {
        if self.symmetric {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            // row-major upper triangle
            self.offset + a * self.rows - a * (a + 1) / 2 + b
        } else {
            self.offset + i * self.cols + j
        }
    }

    /// Assembles the variable's matrix value from the scalar vector.
    pub fn value_from(&self, x: &[f64]) -> Mat {
        Mat::from_fn(self.rows, self.cols, |i, j| x[self.scalar_index(i, j)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub handle: VarHandle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: AffineExpr,
    pub strict: bool,
}

impl LmiConstraint {
    pub fn margin(&self) -> f64 {
        if !self.strict {
            return 0.0;
        }
        let dim = self.expr.rows().max(1) as f64;
        1e-8 * (self.expr.constant_part().trace().abs() / dim).max(1.0)
    }
}

/// LMI problem description.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpProblem {
    vars: Vec<VarInfo>,
    n_scalars: usize,
    constraints: Vec<LmiConstraint>,
    objective: Option<AffineExpr>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_var(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> VarHandle {
        let handle = VarHandle {
            index: self.vars.len(),
            rows,
            cols,
            symmetric,
            offset: self.n_scalars,
        };
        self.n_scalars += handle.n_scalars();
        self.vars.push(VarInfo {
            name: name.to_string(),
            handle: handle.clone(),
        });
        handle
    }

    /// Symmetric `n × n` variable.
    pub fn sym_var(&mut self, name: &str, n: usize) -> VarHandle {
        self.push_var(name, n, n, true)
    }

    /// Unstructured `rows × cols` variable.
    pub fn full_var(&mut self, name: &str, rows: usize, cols: usize) -> VarHandle {
        self.push_var(name, rows, cols, false)
    }

    pub fn scalar_var(&mut self, name: &str) -> VarHandle {
        self.push_var(name, 1, 1, true)
    }

    pub fn vars(&self) -> &[VarInfo] {
        &self.vars
    }

    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> Option<&AffineExpr> {
        self.objective.as_ref()
    }

    fn check_expr(&self, expr: &AffineExpr) -> Result<()> {
        if let Some((&k, _)) = expr.terms().iter().next_back() {
            if k >= self.n_scalars {
                return Err(Error::Invalid(format!(
                    "expression references scalar {k}, problem has {}",
                    self.n_scalars
                )));
            }
        }
        Ok(())
    }

    /// Adds the strict constraint `expr ≻ 0`.
    pub fn add_lmi(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        self.add_constraint(name, expr, true)
    }

    /// Adds the non-strict constraint `expr ⪰ 0`.
    pub fn add_lmi_nonstrict(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        self.add_constraint(name, expr, false)
    }

    fn add_constraint(&mut self, name: &str, expr: AffineExpr, strict: bool) -> Result<()> {
        if expr.rows() != expr.cols() {
            return Err(Error::Dimension(format!(
                "constraint {name} is {}x{}, must be square",
                expr.rows(),
                expr.cols()
            )));
        }
        if !expr.is_symmetric(1e-12) {
            return Err(Error::Invalid(format!("constraint {name} is not symmetric")));
        }
        self.check_expr(&expr)?;
        self.constraints.push(LmiConstraint {
            name: name.to_string(),
            expr: expr.symmetrized(),
            strict,
        });
        Ok(())
    }

    /// Sets a 1×1 expression to minimize.
    pub fn minimize(&mut self, objective: AffineExpr) -> Result<()> {
        if objective.shape() != (1, 1) {
            return Err(Error::Dimension("objective must be a 1x1 expression".into()));
        }
        self.check_expr(&objective)?;
        self.objective = Some(objective);
        Ok(())
    }

    /// Solves the program. Without an objective this returns the first
    /// well-centred strictly feasible point.
    pub fn solve(&self, opts: &SolverOptions) -> Result<SdpSolution> {
        solver::solve(self, opts)
    }

    /// Feasibility check only: `Ok(None)` when no strictly feasible point exists.
    pub fn feasibility(&self, opts: &SolverOptions) -> Result<Option<SdpSolution>> {
        match solver::phase_one(self, opts) {
            Ok(sol) => Ok(Some(sol)),
            Err(Error::Infeasible { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Smallest eigenvalue of every constraint at `x` (without margins).
    pub fn constraint_min_eigs(&self, x: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| crate::linalg::min_sym_eig(&c.expr.evaluate(x)))
            .collect()
    }
}

/// Solves `problem`, mapping the crate-level error type through.
pub fn solve_sdp(problem: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    problem.solve(opts)
}
