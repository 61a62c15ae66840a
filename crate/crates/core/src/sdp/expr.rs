use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::linalg::Mat;

use super::VarHandle;

/// Matrix expression `C + Σ_k x_k T_k` affine in the scalar unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    constant: Mat,
    terms: BTreeMap<usize, Mat>,
}

impl AffineExpr {
    pub fn constant(m: Mat) -> Self {
        Self {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub(crate) fn from_parts(constant: Mat, terms: BTreeMap<usize, Mat>) -> Self {
        Self { constant, terms }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(Mat::from_element(1, 1, v))
    }

    /// The variable itself as an expression.
    pub fn var(h: &VarHandle) -> Self {
        let mut terms: BTreeMap<usize, Mat> = BTreeMap::new();
        for i in 0..h.rows {
            for j in 0..h.cols {
                let k = h.scalar_index(i, j);
                terms.entry(k).or_insert_with(|| Mat::zeros(h.rows, h.cols))[(i, j)] = 1.0;
            }
        }
        Self {
            constant: Mat::zeros(h.rows, h.cols),
            terms,
        }
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    pub fn terms(&self) -> &BTreeMap<usize, Mat> {
        &self.terms
    }

    fn map(&self, f: impl Fn(&Mat) -> Mat) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(&k, m)| (k, f(m))).collect(),
        }
    }

    /// `M · self`
    pub fn left(&self, m: &Mat) -> Self {
        assert_eq!(m.ncols(), self.rows(), "left multiply shape mismatch");
        self.map(|t| m * t)
    }

    /// `self · M`
    pub fn right(&self, m: &Mat) -> Self {
        assert_eq!(self.cols(), m.nrows(), "right multiply shape mismatch");
        self.map(|t| t * m)
    }

    /// `M · self · Mᵀ`
    pub fn congruence(&self, m: &Mat) -> Self {
        self.left(m).right(&m.transpose())
    }

    pub fn transpose(&self) -> Self {
        self.map(|t| t.transpose())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|t| t * s)
    }

    /// `s · M` for a 1×1 expression `s`.
    pub fn times_matrix(&self, m: &Mat) -> Self {
        assert_eq!(self.shape(), (1, 1), "times_matrix needs a 1x1 expression");
        self.map(|t| m * t[(0, 0)])
    }

    /// 1×1 expression `Tr(self)`.
    pub fn trace(&self) -> Self {
        self.map(|t| Mat::from_element(1, 1, t.trace()))
    }

    pub fn evaluate(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (&k, t) in &self.terms {
            out += t * x[k];
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let sym = |m: &Mat| {
            let scale = m.amax().max(1.0);
            (m - m.transpose()).amax() <= tol * scale
        };
        self.rows() == self.cols() && sym(&self.constant) && self.terms.values().all(sym)
    }

    pub(crate) fn symmetrized(&self) -> Self {
        let mut out = self.map(|t| (t + t.transpose()) * 0.5);
        out.terms.retain(|_, t| t.amax() > 0.0);
        out
    }

    /// Symmetric block matrix from its upper triangle. Diagonal blocks are
    /// required; `None` above the diagonal is a zero block, entries below the
    /// diagonal are ignored and filled with transposes.
    pub fn block_sym(rows: &[Vec<Option<AffineExpr>>]) -> Result<Self> {
        let nb = rows.len();
        let mut sizes = Vec::with_capacity(nb);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != nb {
                return Err(Error::Dimension(format!(
                    "block row {i} has {} entries, expected {nb}",
                    row.len()
                )));
            }
            let d = row[i]
                .as_ref()
                .ok_or_else(|| Error::Dimension(format!("diagonal block {i} missing")))?;
            if d.rows() != d.cols() {
                return Err(Error::Dimension(format!("diagonal block {i} not square")));
            }
            sizes.push(d.rows());
        }
        let offsets: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let mut out = AffineExpr::zeros(total, total);
        for i in 0..nb {
            for j in i..nb {
                let Some(block) = rows[i][j].as_ref() else {
                    continue;
                };
                if block.shape() != (sizes[i], sizes[j]) {
                    return Err(Error::Dimension(format!(
                        "block ({i},{j}) is {:?}, expected {:?}",
                        block.shape(),
                        (sizes[i], sizes[j])
                    )));
                }
                out.place(block, offsets[i], offsets[j]);
                if i != j {
                    out.place(&block.transpose(), offsets[j], offsets[i]);
                }
            }
        }
        Ok(out)
    }

    fn place(&mut self, block: &AffineExpr, r: usize, c: usize) {
        let (br, bc) = block.shape();
        let (tr, tc) = self.shape();
        self.constant.view_mut((r, c), (br, bc)).copy_from(&block.constant);
        for (&k, t) in &block.terms {
            self.terms
                .entry(k)
                .or_insert_with(|| Mat::zeros(tr, tc))
                .view_mut((r, c), (br, bc))
                .copy_from(t);
        }
    }

    fn combine(mut self, rhs: &AffineExpr, sign: f64) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "expression shape mismatch");
        self.constant += &rhs.constant * sign;
        for (&k, t) in &rhs.terms {
            match self.terms.get_mut(&k) {
                Some(existing) => *existing += t * sign,
                None => {
                    self.terms.insert(k, t * sign);
                }
            }
        }
        self
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(self, rhs: AffineExpr) -> AffineExpr {
        self.combine(&rhs, 1.0)
    }
}

impl Add<&AffineExpr> for AffineExpr {
    type Output = AffineExpr;
    fn add(self, rhs: &AffineExpr) -> AffineExpr {
        self.combine(rhs, 1.0)
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self.combine(&rhs, -1.0)
    }
}

impl Sub<&AffineExpr> for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: &AffineExpr) -> AffineExpr {
        self.combine(rhs, -1.0)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(self, rhs: f64) -> AffineExpr {
        self.scale(rhs)
    }
}
