use nalgebra::{DMatrix, DVector};

use crate::QpError;

/// Tolerance on `|H_ij - H_ji|` accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Most negative eigenvalue of `H` still treated as convex.
pub const CONVEXITY_TOL: f64 = 1e-8;

/// `min ½ xᵀHx + fᵀx  s.t.  Ax ≤ b,  lb ≤ x ≤ ub`.
///
/// Infinite entries of `lb`/`ub` mean the bound is absent. `lb[j] == ub[j]`
/// fixes the variable.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with `n = f.len()` variables.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// Structural checks: dimensions, finiteness, symmetry and `lb ≤ ub`.
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.f.len();
        let m = self.b.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::Dimension(format!(
                "H is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.a.nrows() != m || (m > 0 && self.a.ncols() != n) {
            return Err(QpError::Dimension(format!(
                "A is {}x{}, expected {m}x{n}",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(QpError::Dimension(format!(
                "bounds have lengths {}/{}, expected {n}",
                self.lb.len(),
                self.ub.len()
            )));
        }
        if self.h.iter().chain(self.f.iter()).chain(self.a.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite);
        }
        if self.b.iter().any(|v| v.is_nan()) {
            return Err(QpError::NonFinite);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(QpError::Asymmetric { row: i, col: j });
                }
            }
        }
        for j in 0..n {
            let (l, u) = (self.lb[j], self.ub[j]);
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(QpError::NonFinite);
            }
            if l > u {
                return Err(QpError::InvertedBounds { index: j, lower: l, upper: u });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// Lagrange multipliers, all nonnegative at a KKT point.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    /// For the rows of `Ax ≤ b`.
    pub ineq: DVector<f64>,
    /// For `x ≥ lb`.
    pub lower: DVector<f64>,
    /// For `x ≤ ub`.
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    /// Largest of the four KKT residuals (see [`crate::KktReport`]) at `x`.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub multipliers: Multipliers,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}
