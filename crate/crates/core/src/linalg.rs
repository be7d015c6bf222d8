//! Symmetric tridiagonal storage and direct solvers.
//!
//! Every operator in this crate is a piecewise-linear finite-element matrix on
//! a 1D mesh, so bandwidth is one. Matrices keep their exact row sums next to
//! the diagonal so that quadratic forms and products can be evaluated in
//! "difference form", which avoids the cancellation that plagues stiffness
//! matrices on strongly graded meshes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    diag: Vec<f64>,
    off: Vec<f64>,
    row_sum: Vec<f64>,
}

impl SymTridiag {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
            row_sum: vec![0.0; n],
        }
    }

    /// Builds from diagonal and off-diagonal; row sums are derived.
    pub fn from_parts(diag: Vec<f64>, off: Vec<f64>) -> Self {
        let n = diag.len();
        assert_eq!(off.len(), n.saturating_sub(1), "off-diagonal length mismatch");
        let row_sum = (0..n)
            .map(|i| {
                let mut s = diag[i];
                if i > 0 {
                    s += off[i - 1];
                }
                if i + 1 < n {
                    s += off[i];
                }
                s
            })
            .collect();
        Self { diag, off, row_sum }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sum
    }

    /// Scatters a 2x2 element block coupling unknowns `i` and `i + 1`.
    pub(crate) fn add_block(&mut self, i: usize, ll: f64, lr: f64, rr: f64) {
        self.diag[i] += ll;
        self.diag[i + 1] += rr;
        self.off[i] += lr;
        self.row_sum[i] += ll + lr;
        self.row_sum[i + 1] += lr + rr;
    }

    /// Scatters a diagonal-only contribution (element touching an eliminated node).
    pub(crate) fn add_diag(&mut self, i: usize, value: f64) {
        self.diag[i] += value;
        self.row_sum[i] += value;
    }

    /// Adds `value` to the last diagonal entry (the x = 1 node).
    pub fn add_to_last(&mut self, value: f64) {
        if let Some(i) = self.diag.len().checked_sub(1) {
            self.add_diag(i, value);
        }
    }

    /// `sum_k c_k M_k`; all terms must share a dimension.
    pub fn combine(terms: &[(f64, &SymTridiag)]) -> SymTridiag {
        let n = terms.first().map(|(_, m)| m.len()).unwrap_or(0);
        let mut out = SymTridiag::zeros(n);
        for (c, m) in terms {
            assert_eq!(m.len(), n, "dimension mismatch in combine");
            for i in 0..n {
                out.diag[i] += c * m.diag[i];
                out.row_sum[i] += c * m.row_sum[i];
            }
            for i in 0..n.saturating_sub(1) {
                out.off[i] += c * m.off[i];
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        assert_eq!(x.len(), n);
        assert_eq!(out.len(), n);
        for i in 0..n {
            let mut acc = self.row_sum[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * (x[i - 1] - x[i]);
            }
            if i + 1 < n {
                acc += self.off[i] * (x[i + 1] - x[i]);
            }
            out[i] = acc;
        }
    }

    /// `x^T M x` evaluated as `sum r_i x_i^2 - sum o_i (x_{i+1} - x_i)^2`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.len());
        let mut acc = 0.0;
        for (r, xi) in self.row_sum.iter().zip(x) {
            acc += r * xi * xi;
        }
        for (i, o) in self.off.iter().enumerate() {
            let dx = x[i + 1] - x[i];
            acc -= o * dx * dx;
        }
        acc
    }

    /// `x^T M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let my = self.mul_vec(y);
        x.iter().zip(&my).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.diag
            .iter()
            .chain(&self.off)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.diag.iter().chain(&self.off).chain(&self.row_sum).all(|v| v.is_finite())
    }

    /// Number of negative pivots of `self - shift * other` (Sylvester inertia).
    ///
    /// With `other` positive definite this counts the generalized eigenvalues
    /// of the pencil `(self, other)` that lie strictly below `shift`.
    pub fn count_below(&self, other: &SymTridiag, shift: f64) -> usize {
        let n = self.len();
        let mut count = 0;
        let mut pivot = 0.0_f64;
        for i in 0..n {
            let a = self.diag[i] - shift * other.diag[i];
            pivot = if i == 0 {
                a
            } else {
                let b = self.off[i - 1] - shift * other.off[i - 1];
                let prev = if pivot == 0.0 { f64::EPSILON * b.abs().max(1e-300) } else { pivot };
                a - b * b / prev
            };
            if pivot < 0.0 {
                count += 1;
            }
        }
        count
    }
}

/// `L L^T` factorization of a symmetric positive definite tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct TridiagCholesky {
    l_diag: Vec<f64>,
    l_sub: Vec<f64>,
}

impl TridiagCholesky {
    pub fn factor(m: &SymTridiag) -> Result<Self> {
        let n = m.len();
        let mut l_diag = vec![0.0; n];
        let mut l_sub = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let mut p = m.diag[i];
            if i > 0 {
                l_sub[i - 1] = m.off[i - 1] / l_diag[i - 1];
                p -= l_sub[i - 1] * l_sub[i - 1];
            }
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::Solver(format!(
                    "matrix not positive definite: pivot {p:e} at row {i} of {n}"
                )));
            }
            l_diag[i] = p.sqrt();
        }
        Ok(Self { l_diag, l_sub })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.l_diag.len();
        assert_eq!(x.len(), n);
        for i in 0..n {
            if i > 0 {
                x[i] -= self.l_sub[i - 1] * x[i - 1];
            }
            x[i] /= self.l_diag[i];
        }
        for i in (0..n).rev() {
            if i + 1 < n {
                x[i] -= self.l_sub[i] * x[i + 1];
            }
            x[i] /= self.l_diag[i];
        }
    }

    /// Cheap condition estimate from the pivot spread.
    pub fn pivot_ratio(&self) -> f64 {
        let (lo, hi) = self
            .l_diag
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        (hi / lo).powi(2)
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
