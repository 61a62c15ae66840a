use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, CMat, Mat};

/// Discrete-time LTI system `x⁺ = A x + B w`, `y = C x + D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSystem {
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
}

impl StateSpaceSystem {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, A has {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, A has {n}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        if ![&a, &b, &c, &d].iter().all(|m| all_finite(m)) {
            return Err(Error::Invalid("system matrices contain non-finite entries".into()));
        }
        Ok(Self { a, b, c, d })
    }

    /// Memoryless system `y = D w`.
    pub fn static_gain(d: Mat) -> Result<Self> {
        let (ny, nw) = d.shape();
        Self::new(Mat::zeros(0, 0), Mat::zeros(0, nw), Mat::zeros(ny, 0), d)
    }

    /// Length-`window` moving average `y_t = (1/l) Σ_{k<l} w_{t−k}`,
    /// realized as a shift register of the last `l − 1` inputs.
    pub fn moving_average(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Invalid("moving-average window must be at least 1".into()));
        }
        let n = window - 1;
        let w = 1.0 / window as f64;
        let mut a = Mat::zeros(n, n);
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = Mat::zeros(n, 1);
        if n > 0 {
            b[(0, 0)] = 1.0;
        }
        Self::new(a, b, Mat::from_element(1, n, w), Mat::from_element(1, 1, w))
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn d(&self) -> &Mat {
        &self.d
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Transfer matrix `C (zI − A)⁻¹ B + D` at a complex point `z`.
    pub fn eval(&self, z: Complex<f64>) -> Result<CMat> {
        let n = self.n_states();
        let to_c = |m: &Mat| m.map(|v| Complex::new(v, 0.0));
        let mut out = to_c(&self.d);
        if n > 0 {
            let resolvent = CMat::identity(n, n) * z - to_c(&self.a);
            let x = resolvent
                .lu()
                .solve(&to_c(&self.b))
                .ok_or_else(|| Error::Numerical(format!("zI - A singular at z = {z}")))?;
            out += to_c(&self.c) * x;
        }
        Ok(out)
    }

    /// Frequency response at `e^{iω}`.
    pub fn freq_response(&self, omega: f64) -> Result<CMat> {
        self.eval(Complex::from_polar(1.0, omega))
    }

    /// Observable part `(Q_oᵀ A Q_o, Q_oᵀ B, C Q_o, D)`, with `Q_o` an
    /// orthonormal basis of the row space of the observability matrix. The
    /// unobservable subspace is A-invariant, so the transfer function is kept.
    pub fn observable_part(&self, rel_tol: f64) -> Result<Self> {
        let n = self.n_states();
        if n == 0 {
            return Ok(self.clone());
        }
        let p = self.n_outputs();
        let mut obs = Mat::zeros(n * p, n);
        let mut block = self.c.clone();
        for k in 0..n {
            obs.view_mut((k * p, 0), (p, n)).copy_from(&block);
            block = &block * &self.a;
        }
        let svd = obs.transpose().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| smax > 0.0 && svd.singular_values[i] > rel_tol * smax)
            .collect();
        let q = Mat::from_fn(n, keep.len(), |i, j| u[(i, keep[j])]);
        Self::new(
            q.transpose() * &self.a * &q,
            q.transpose() * &self.b,
            &self.c * &q,
            self.d.clone(),
        )
    }

    /// Removes unobservable and then uncontrollable modes.
    pub fn minimal(&self, rel_tol: f64) -> Result<Self> {
        let obs = self.observable_part(rel_tol)?;
        let dual = Self::new(
            obs.a.transpose(),
            obs.c.transpose(),
            obs.b.transpose(),
            obs.d.transpose(),
        )?
        .observable_part(rel_tol)?;
        Self::new(
            dual.a.transpose(),
            dual.c.transpose(),
            dual.b.transpose(),
            dual.d.transpose(),
        )
    }

    /// Similarity transform `(T A T⁻¹, T B, C T⁻¹, D)`.
    pub fn transformed(&self, t: &Mat) -> Result<Self> {
        let t_inv = crate::linalg::inverse(t, "similarity transform")?;
        Self::new(t * &self.a * &t_inv, t * &self.b, &self.c * &t_inv, self.d.clone())
    }
}
