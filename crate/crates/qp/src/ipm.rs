//! Mehrotra predictor-corrector interior-point method.
//!
//! All inequality rows and finite bounds are written as `Gx + s = h, s ≥ 0`
//! with duals `z ≥ 0`. Bound rows are eliminated into the diagonal of the
//! primal block, leaving the quasi-definite system
//!
//! ```text
//!     [ H + D    Aᵀ ] [dx]   [rx]
//!     [ A       -W  ] [dz] = [rz]
//! ```
//!
//! with `D = z/s` on the bounds and `W = s/z` on the general rows. Fixed
//! variables (`lb == ub`) are substituted out before the iteration starts.
//! When the iteration stalls or exhausts its budget, a phase-one elastic LP
//! decides affirmatively whether the constraint set is empty.

use nalgebra::{DMatrix, DVector};

use crate::kkt::kkt_report;
use crate::ldl::SymSystem;
use crate::problem::CONVEXITY_TOL;
use crate::{Multipliers, QpError, QpProblem, QpSolution, QpStatus};

const STATIC_REG: f64 = 1e-9;
const DYN_EPS: f64 = 1e-13;
const DYN_DELTA: f64 = 2e-7;
const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 2;
/// Relative size of `‖Gᵀz‖` against `-hᵀz` accepted as a Farkas certificate.
const FARKAS_TOL: f64 = 1e-9;
/// Looser ratio that triggers an early phase-one check.
const FARKAS_PROBE_TOL: f64 = 1e-4;
/// Active-set corrections tried by the polish before giving up.
const POLISH_ROUNDS: usize = 6;
/// Smallest elastic violation that proves the constraint set empty.
const PHASE_ONE_TOL: f64 = 1e-7;

/// Reusable solver. Holds only settings and scratch; one instance per worker.
#[derive(Debug, Clone)]
pub struct QpSolver {
    pub tol: f64,
    pub max_iter: usize,
    scratch: Vec<f64>,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self::new(1e-8, 500)
    }
}

/// Solve with a fresh solver.
pub fn solve(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    QpSolver::new(tol, max_iter).solve(p)
}

impl QpSolver {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            scratch: Vec::new(),
        }
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution, QpError> {
        p.validate()?;
        check_convexity(&p.h)?;
        let reduced = Reduced::build(p);
        let mut out = match reduced.trivially_empty {
            Some(row) => Outcome::infeasible_row(&reduced, row),
            None => self.interior_point(&reduced, true)?,
        };
        if out.status == QpStatus::Optimal {
            reduced.polish(&mut out, self.tol);
        }
        Ok(reduced.finish(p, out))
    }

    fn interior_point(&mut self, r: &Reduced, allow_phase_one: bool) -> Result<Outcome, QpError> {
        let n = r.n;
        let mg = r.rows.len();
        let nl = r.lower.len();
        let nu = r.upper.len();
        let mtot = mg + nl + nu;
        let tol = self.tol;
        let f_scale = r.f.iter().fold(1.0f64, |a, v| a.max(v.abs()));

        // KKT triplets: H upper part + diagonals, then A rows and row diagonals.
        let mut t_rows = Vec::new();
        let mut t_cols = Vec::new();
        let mut base = Vec::new();
        let mut diag_x = vec![0usize; n];
        for j in 0..n {
            for i in 0..j {
                let v = r.h[(i, j)];
                if v != 0.0 {
                    t_rows.push(i);
                    t_cols.push(j);
                    base.push(v);
                }
            }
            diag_x[j] = base.len();
            t_rows.push(j);
            t_cols.push(j);
            base.push(r.h[(j, j)]);
        }
        let mut diag_g = vec![0usize; mg];
        for (k, row) in r.rows.iter().enumerate() {
            for &(j, a) in &row.coefs {
                t_rows.push(j);
                t_cols.push(n + k);
                base.push(a);
            }
            diag_g[k] = base.len();
            t_rows.push(n + k);
            t_cols.push(n + k);
            base.push(0.0);
        }
        let dim = n + mg;
        let mut sys = SymSystem::new(dim, t_rows, t_cols).map_err(|_| QpError::Numerical)?;
        let signs: Vec<f64> = (0..dim).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
        let reg: Vec<f64> = (0..dim)
            .map(|i| if i < n { STATIC_REG } else { -STATIC_REG })
            .collect();
        let zero_extra = vec![0.0; dim];
        let mut vals = base.clone();

        // Starting point: minimize ½xᵀHx + fᵀx + ½‖(Ax − b)₊‖² style least squares.
        let mut x = vec![0.0; n];
        {
            for j in 0..n {
                let nb = r.lower_of[j].is_some() as usize + r.upper_of[j].is_some() as usize;
                vals[diag_x[j]] = base[diag_x[j]] + nb as f64;
            }
            for k in 0..mg {
                vals[diag_g[k]] = -1.0;
            }
            sys.factor(&vals, &reg, &signs, DYN_EPS, DYN_DELTA)
                .map_err(|_| QpError::Numerical)?;
            let mut rhs = vec![0.0; dim];
            for j in 0..n {
                rhs[j] = -r.f[j];
                if let Some(l) = r.lower_of[j] {
                    rhs[j] += r.lower[l].1;
                }
                if let Some(u) = r.upper_of[j] {
                    rhs[j] += r.upper[u].1;
                }
            }
            for (k, row) in r.rows.iter().enumerate() {
                rhs[n + k] = row.rhs;
            }
            let sol = self.refined_solve(&sys, &vals, &zero_extra, &rhs);
            x.copy_from_slice(&sol[..n]);
        }

        let mut s_g = vec![0.0; mg];
        let mut z_g = vec![1.0; mg];
        for (k, row) in r.rows.iter().enumerate() {
            s_g[k] = (row.rhs - row.dot(&x)).max(1.0);
        }
        let mut s_l: Vec<f64> = r.lower.iter().map(|&(j, lb)| (x[j] - lb).max(1.0)).collect();
        let mut z_l = vec![1.0; nl];
        let mut s_u: Vec<f64> = r.upper.iter().map(|&(j, ub)| (ub - x[j]).max(1.0)).collect();
        let mut z_u = vec![1.0; nu];

        let mut r_d = vec![0.0; n];
        let mut r_g = vec![0.0; mg];
        let mut r_l = vec![0.0; nl];
        let mut r_u = vec![0.0; nu];
        let mut rhs = vec![0.0; dim];

        let mut iterations = 0;
        let mut probed = false;
        loop {
            // Residuals.
            r.hx(&x, &mut r_d);
            for j in 0..n {
                r_d[j] += r.f[j];
            }
            for (k, row) in r.rows.iter().enumerate() {
                for &(j, a) in &row.coefs {
                    r_d[j] += a * z_g[k];
                }
                r_g[k] = row.dot(&x) + s_g[k] - row.rhs;
            }
            for (l, &(j, lb)) in r.lower.iter().enumerate() {
                r_d[j] -= z_l[l];
                r_l[l] = -x[j] + s_l[l] + lb;
            }
            for (u, &(j, ub)) in r.upper.iter().enumerate() {
                r_d[j] += z_u[u];
                r_u[u] = x[j] + s_u[u] - ub;
            }
            let sz: f64 = dotv(&s_g, &z_g) + dotv(&s_l, &z_l) + dotv(&s_u, &z_u);
            let mu = if mtot > 0 { sz / mtot as f64 } else { 0.0 };
            let max_sz = s_g
                .iter()
                .zip(&z_g)
                .chain(s_l.iter().zip(&z_l))
                .chain(s_u.iter().zip(&z_u))
                .fold(0.0f64, |a, (s, z)| a.max(s * z));
            let res_p = amax(&r_g).max(amax(&r_l)).max(amax(&r_u));
            let res_d = amax(&r_d);

            if res_p <= tol && res_d <= tol * f_scale && max_sz <= tol {
                return Ok(Outcome::optimal(r, x, z_g, z_l, z_u, iterations));
            }

            // Farkas test: z ≥ 0 with Gᵀz ≈ 0 and hᵀz < 0 certifies emptiness.
            if mtot > 0 && iterations > 0 {
                let mut gz = vec![0.0; n];
                let mut hz = 0.0;
                for (k, row) in r.rows.iter().enumerate() {
                    for &(j, a) in &row.coefs {
                        gz[j] += a * z_g[k];
                    }
                    hz += row.rhs * z_g[k];
                }
                for (l, &(j, lb)) in r.lower.iter().enumerate() {
                    gz[j] -= z_l[l];
                    hz -= lb * z_l[l];
                }
                for (u, &(j, ub)) in r.upper.iter().enumerate() {
                    gz[j] += z_u[u];
                    hz += ub * z_u[u];
                }
                if hz < 0.0 && amax(&gz) <= FARKAS_TOL * (-hz) && res_p > tol {
                    return Ok(Outcome::infeasible(r, x, z_g, z_l, z_u, iterations));
                }
                // A rough certificate is not proof, but it is worth one
                // phase-one solve instead of running out the budget.
                if allow_phase_one && !probed && hz < 0.0 && amax(&gz) <= FARKAS_PROBE_TOL * (-hz) && res_p > tol {
                    probed = true;
                    if let Some(out) = self.phase_one(r, iterations)? {
                        return Ok(out);
                    }
                }
            }

            if iterations >= self.max_iter {
                break;
            }
            iterations += 1;

            // Assemble and factor the Newton matrix.
            for j in 0..n {
                vals[diag_x[j]] = base[diag_x[j]];
            }
            for (l, &(j, _)) in r.lower.iter().enumerate() {
                vals[diag_x[j]] += z_l[l] / s_l[l];
            }
            for (u, &(j, _)) in r.upper.iter().enumerate() {
                vals[diag_x[j]] += z_u[u] / s_u[u];
            }
            for k in 0..mg {
                vals[diag_g[k]] = -s_g[k] / z_g[k];
            }
            if sys.factor(&vals, &reg, &signs, DYN_EPS, DYN_DELTA).is_err() {
                break;
            }

            // Predictor (affine scaling).
            let rc_g: Vec<f64> = s_g.iter().zip(&z_g).map(|(s, z)| s * z).collect();
            let rc_l: Vec<f64> = s_l.iter().zip(&z_l).map(|(s, z)| s * z).collect();
            let rc_u: Vec<f64> = s_u.iter().zip(&z_u).map(|(s, z)| s * z).collect();
            let aff = self.newton_direction(
                r, &sys, &vals, &zero_extra, &mut rhs, &r_d, &r_g, &r_l, &r_u, &rc_g,
                &rc_l, &rc_u, &s_g, &z_g, &s_l, &z_l, &s_u, &z_u,
            );
            let alpha_aff = max_step(&s_g, &z_g, &s_l, &z_l, &s_u, &z_u, &aff);
            let mu_aff = if mtot > 0 {
                let mut acc = 0.0;
                for k in 0..mg {
                    acc += (s_g[k] + alpha_aff * aff.ds_g[k]) * (z_g[k] + alpha_aff * aff.dz_g[k]);
                }
                for l in 0..nl {
                    acc += (s_l[l] + alpha_aff * aff.ds_l[l]) * (z_l[l] + alpha_aff * aff.dz_l[l]);
                }
                for u in 0..nu {
                    acc += (s_u[u] + alpha_aff * aff.ds_u[u]) * (z_u[u] + alpha_aff * aff.dz_u[u]);
                }
                acc / mtot as f64
            } else {
                0.0
            };
            let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

            // Corrector.
            let target = sigma * mu;
            let rc_g: Vec<f64> = (0..mg)
                .map(|k| s_g[k] * z_g[k] + aff.ds_g[k] * aff.dz_g[k] - target)
                .collect();
            let rc_l: Vec<f64> = (0..nl)
                .map(|l| s_l[l] * z_l[l] + aff.ds_l[l] * aff.dz_l[l] - target)
                .collect();
            let rc_u: Vec<f64> = (0..nu)
                .map(|u| s_u[u] * z_u[u] + aff.ds_u[u] * aff.dz_u[u] - target)
                .collect();
            let dir = self.newton_direction(
                r, &sys, &vals, &zero_extra, &mut rhs, &r_d, &r_g, &r_l, &r_u, &rc_g,
                &rc_l, &rc_u, &s_g, &z_g, &s_l, &z_l, &s_u, &z_u,
            );
            let alpha = (STEP_FRACTION * max_step(&s_g, &z_g, &s_l, &z_l, &s_u, &z_u, &dir)).min(1.0);
            if !alpha.is_finite() || alpha < 1e-12 {
                break;
            }

            for j in 0..n {
                x[j] += alpha * dir.dx[j];
            }
            for k in 0..mg {
                s_g[k] += alpha * dir.ds_g[k];
                z_g[k] += alpha * dir.dz_g[k];
            }
            for l in 0..nl {
                s_l[l] += alpha * dir.ds_l[l];
                z_l[l] += alpha * dir.dz_l[l];
            }
            for u in 0..nu {
                s_u[u] += alpha * dir.ds_u[u];
                z_u[u] += alpha * dir.dz_u[u];
            }
            if x.iter().any(|v| !v.is_finite()) {
                break;
            }
        }

        // No convergence: decide emptiness with the elastic phase-one LP.
        if allow_phase_one && mtot > 0 {
            if let Some(out) = self.phase_one(r, iterations)? {
                return Ok(out);
            }
        }
        Ok(Outcome::max_iter(r, x, z_g, z_l, z_u, iterations))
    }

    /// `min e  s.t.  Ax − e ≤ b, e ≥ 0` over the box. Returns an infeasible
    /// outcome when the least achievable violation is positive.
    fn phase_one(&mut self, r: &Reduced, iterations: usize) -> Result<Option<Outcome>, QpError> {
        if r.rows.is_empty() {
            // Bounds alone are always satisfiable (lb ≤ ub is validated).
            return Ok(None);
        }
        let n = r.n;
        let mut p1 = Reduced {
            n: n + 1,
            h: DMatrix::zeros(n + 1, n + 1),
            f: {
                let mut f = vec![0.0; n + 1];
                f[n] = 1.0;
                f
            },
            rows: r
                .rows
                .iter()
                .map(|row| {
                    let mut coefs = row.coefs.clone();
                    coefs.push((n, -1.0));
                    SparseRow {
                        coefs,
                        rhs: row.rhs,
                        source: row.source,
                    }
                })
                .collect(),
            lower: r.lower.clone(),
            upper: r.upper.clone(),
            lower_of: r.lower_of.clone(),
            upper_of: r.upper_of.clone(),
            free: vec![],
            x_fixed: vec![],
            trivially_empty: None,
            orig_m: r.orig_m,
        };
        p1.lower_of.push(Some(p1.lower.len()));
        p1.lower.push((n, 0.0));
        p1.upper_of.push(None);
        let out = self.interior_point(&p1, false)?;
        if out.status != QpStatus::Optimal {
            return Ok(None);
        }
        let violation = out.x[n];
        if violation > PHASE_ONE_TOL {
            let mut x = out.x;
            x.truncate(n);
            let mut o = Outcome::infeasible(r, x, out.z_g, out.z_l, out.z_u, iterations + out.iterations);
            o.z_l.truncate(r.lower.len());
            return Ok(Some(o));
        }
        Ok(None)
    }

    #[allow(clippy::too_many_arguments)]
    fn newton_direction(
        &mut self,
        r: &Reduced,
        sys: &SymSystem,
        vals: &[f64],
        zero_extra: &[f64],
        rhs: &mut [f64],
        r_d: &[f64],
        r_g: &[f64],
        r_l: &[f64],
        r_u: &[f64],
        rc_g: &[f64],
        rc_l: &[f64],
        rc_u: &[f64],
        s_g: &[f64],
        z_g: &[f64],
        s_l: &[f64],
        z_l: &[f64],
        s_u: &[f64],
        z_u: &[f64],
    ) -> Direction {
        let n = r.n;
        let mg = r.rows.len();
        for j in 0..n {
            rhs[j] = -r_d[j];
        }
        for (l, &(j, _)) in r.lower.iter().enumerate() {
            rhs[j] += (z_l[l] * r_l[l] - rc_l[l]) / s_l[l];
        }
        for (u, &(j, _)) in r.upper.iter().enumerate() {
            rhs[j] += (-z_u[u] * r_u[u] + rc_u[u]) / s_u[u];
        }
        for k in 0..mg {
            rhs[n + k] = -r_g[k] + rc_g[k] / z_g[k];
        }
        let sol = self.refined_solve(sys, vals, zero_extra, rhs);
        let dx = sol[..n].to_vec();
        let dz_g = sol[n..].to_vec();
        let ds_g: Vec<f64> = (0..mg).map(|k| -(rc_g[k] + s_g[k] * dz_g[k]) / z_g[k]).collect();
        let mut dz_l = vec![0.0; r.lower.len()];
        let mut ds_l = vec![0.0; r.lower.len()];
        for (l, &(j, _)) in r.lower.iter().enumerate() {
            dz_l[l] = (z_l[l] * (-dx[j] + r_l[l]) - rc_l[l]) / s_l[l];
            ds_l[l] = -(rc_l[l] + s_l[l] * dz_l[l]) / z_l[l];
        }
        let mut dz_u = vec![0.0; r.upper.len()];
        let mut ds_u = vec![0.0; r.upper.len()];
        for (u, &(j, _)) in r.upper.iter().enumerate() {
            dz_u[u] = (z_u[u] * (dx[j] + r_u[u]) - rc_u[u]) / s_u[u];
            ds_u[u] = -(rc_u[u] + s_u[u] * dz_u[u]) / z_u[u];
        }
        Direction {
            dx,
            ds_g,
            dz_g,
            ds_l,
            dz_l,
            ds_u,
            dz_u,
        }
    }

    /// Solve the regularized system and refine against the unregularized one.
    fn refined_solve(
        &mut self,
        sys: &SymSystem,
        vals: &[f64],
        zero_extra: &[f64],
        rhs: &[f64],
    ) -> Vec<f64> {
        let dim = rhs.len();
        let mut sol = rhs.to_vec();
        sys.solve(&mut sol, &mut self.scratch);
        let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut kx = vec![0.0; dim];
        for _ in 0..REFINE_STEPS {
            sys.mul(vals, zero_extra, &sol, &mut kx);
            let mut res: Vec<f64> = rhs.iter().zip(&kx).map(|(b, k)| b - k).collect();
            if amax(&res) <= 1e-14 * scale {
                break;
            }
            sys.solve(&mut res, &mut self.scratch);
            for (s, d) in sol.iter_mut().zip(&res) {
                *s += d;
            }
        }
        sol
    }
}

struct Direction {
    dx: Vec<f64>,
    ds_g: Vec<f64>,
    dz_g: Vec<f64>,
    ds_l: Vec<f64>,
    dz_l: Vec<f64>,
    ds_u: Vec<f64>,
    dz_u: Vec<f64>,
}

fn max_step(
    s_g: &[f64],
    z_g: &[f64],
    s_l: &[f64],
    z_l: &[f64],
    s_u: &[f64],
    z_u: &[f64],
    d: &Direction,
) -> f64 {
    let mut alpha = f64::INFINITY;
    let mut clip = |v: &[f64], dv: &[f64]| {
        for (x, dx) in v.iter().zip(dv) {
            if *dx < 0.0 {
                alpha = alpha.min(-x / dx);
            }
        }
    };
    clip(s_g, &d.ds_g);
    clip(z_g, &d.dz_g);
    clip(s_l, &d.ds_l);
    clip(z_l, &d.dz_l);
    clip(s_u, &d.ds_u);
    clip(z_u, &d.dz_u);
    alpha.min(1.0 / STEP_FRACTION)
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Reject `H` with an eigenvalue below `-CONVEXITY_TOL`.
fn check_convexity(h: &DMatrix<f64>) -> Result<(), QpError> {
    let n = h.nrows();
    if n == 0 {
        return Ok(());
    }
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || h[(i, j)] == 0.0));
    let min_eig = if diagonal {
        h.diagonal().min()
    } else {
        // Cheap certificate first: Cholesky of H + τI succeeds ⇒ λ_min > −τ.
        let shifted = h + DMatrix::identity(n, n) * CONVEXITY_TOL;
        if shifted.cholesky().is_some() {
            return Ok(());
        }
        h.clone().symmetric_eigenvalues().min()
    };
    if min_eig < -CONVEXITY_TOL {
        Err(QpError::NonConvex { min_eigenvalue: min_eig })
    } else {
        Ok(())
    }
}

/// `aᵀx ≤ b` in sparse form with its multiplier slot.
type Constraint = (Vec<(usize, f64)>, f64, Slot);

#[derive(Debug, Clone, Copy)]
enum Slot {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Debug, Clone)]
struct SparseRow {
    coefs: Vec<(usize, f64)>,
    rhs: f64,
    /// Row index in the original problem.
    source: usize,
}

impl SparseRow {
    fn dot(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// Problem restricted to the free variables with rows in sparse form.
struct Reduced {
    n: usize,
    h: DMatrix<f64>,
    f: Vec<f64>,
    rows: Vec<SparseRow>,
    /// `(free index, bound)` for finite lower / upper bounds.
    lower: Vec<(usize, f64)>,
    upper: Vec<(usize, f64)>,
    lower_of: Vec<Option<usize>>,
    upper_of: Vec<Option<usize>>,
    /// `free[k]` = original index of reduced variable `k`.
    free: Vec<usize>,
    /// Values of all variables that are fixed (NaN for free ones).
    x_fixed: Vec<f64>,
    /// An all-zero row with a negative right-hand side.
    trivially_empty: Option<usize>,
    orig_m: usize,
}

impl Reduced {
    fn build(p: &QpProblem) -> Self {
        let n0 = p.num_vars();
        let mut free = Vec::new();
        let mut x_fixed = vec![f64::NAN; n0];
        let mut pos = vec![usize::MAX; n0];
        for j in 0..n0 {
            if p.lb[j] == p.ub[j] {
                x_fixed[j] = p.lb[j];
            } else {
                pos[j] = free.len();
                free.push(j);
            }
        }
        let n = free.len();
        let h = DMatrix::from_fn(n, n, |i, j| p.h[(free[i], free[j])]);
        let mut f: Vec<f64> = free.iter().map(|&j| p.f[j]).collect();
        for (k, &i) in free.iter().enumerate() {
            for j in 0..n0 {
                if pos[j] == usize::MAX {
                    f[k] += p.h[(i, j)] * x_fixed[j];
                }
            }
        }
        let mut rows = Vec::new();
        let mut trivially_empty = None;
        for i in 0..p.num_inequalities() {
            let mut rhs = p.b[i];
            let mut coefs = Vec::new();
            for j in 0..n0 {
                let a = p.a[(i, j)];
                if a == 0.0 {
                    continue;
                }
                if pos[j] == usize::MAX {
                    rhs -= a * x_fixed[j];
                } else {
                    coefs.push((pos[j], a));
                }
            }
            if rhs == f64::INFINITY {
                continue;
            }
            if coefs.is_empty() {
                if rhs < 0.0 && trivially_empty.is_none() {
                    trivially_empty = Some(i);
                }
                continue;
            }
            rows.push(SparseRow { coefs, rhs, source: i });
        }
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut lower_of = vec![None; n];
        let mut upper_of = vec![None; n];
        for (k, &j) in free.iter().enumerate() {
            if p.lb[j].is_finite() {
                lower_of[k] = Some(lower.len());
                lower.push((k, p.lb[j]));
            }
            if p.ub[j].is_finite() {
                upper_of[k] = Some(upper.len());
                upper.push((k, p.ub[j]));
            }
        }
        Self {
            n,
            h,
            f,
            rows,
            lower,
            upper,
            lower_of,
            upper_of,
            free,
            x_fixed,
            trivially_empty,
            orig_m: p.num_inequalities(),
        }
    }

    fn hx(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for j in 0..self.n {
                let v = self.h[(i, j)];
                if v != 0.0 {
                    acc += v * x[j];
                }
            }
            out[i] = acc;
        }
    }

    /// Active-set polish. The interior point stops with complementarity near
    /// `tol`, which on degenerate problems leaves `x` up to `√tol` away from
    /// the minimiser. Starting from the constraints whose multiplier exceeds
    /// their slack, the equality-constrained KKT system is solved exactly;
    /// constraints with negative multipliers are released and violated ones
    /// added for a few rounds. The result is kept only if it is primal and
    /// dual feasible and no worse than the iterate.
    fn polish(&self, out: &mut Outcome, tol: f64) {
        let n = self.n;
        if n == 0 {
            return;
        }
        // Every constraint as `aᵀx ≤ b`, tagged with its multiplier slot.
        let mut all: Vec<Constraint> = Vec::new();
        let mut weight = Vec::new();
        for (k, row) in self.rows.iter().enumerate() {
            all.push((row.coefs.clone(), row.rhs, Slot::Row(k)));
            weight.push(out.z_g[k] - (row.rhs - row.dot(&out.x)));
        }
        for (l, &(j, lb)) in self.lower.iter().enumerate() {
            all.push((vec![(j, -1.0)], -lb, Slot::Lower(l)));
            weight.push(out.z_l[l] - (out.x[j] - lb));
        }
        for (u, &(j, ub)) in self.upper.iter().enumerate() {
            all.push((vec![(j, 1.0)], ub, Slot::Upper(u)));
            weight.push(out.z_u[u] - (ub - out.x[j]));
        }
        let slack = |c: &Constraint, x: &[f64]| c.1 - c.0.iter().map(|&(j, a)| a * x[j]).sum::<f64>();
        let mut active: Vec<usize> = (0..all.len()).filter(|&i| weight[i] > 0.0).collect();

        for _ in 0..POLISH_ROUNDS {
            // Independent subset, strongest first, so duplicated rows cannot
            // split a multiplier arbitrarily.
            active.sort_by(|&a, &b| weight[b].total_cmp(&weight[a]));
            let mut basis: Vec<Vec<f64>> = Vec::new();
            active.retain(|&i| {
                let mut v = vec![0.0; n];
                for &(j, a) in &all[i].0 {
                    v[j] += a;
                }
                let norm0 = dotv(&v, &v).sqrt();
                for q in &basis {
                    let d = dotv(q, &v);
                    v.iter_mut().zip(q).for_each(|(x, qi)| *x -= d * qi);
                }
                let norm = dotv(&v, &v).sqrt();
                if norm <= 1e-9 * norm0 {
                    return false;
                }
                basis.push(v.into_iter().map(|x| x / norm).collect());
                true
            });
            let m = active.len();
            let mut kkt = DMatrix::zeros(n + m, n + m);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.h);
            let mut rhs = DVector::zeros(n + m);
            for j in 0..n {
                rhs[j] = -self.f[j];
            }
            for (c, &i) in active.iter().enumerate() {
                for &(j, a) in &all[i].0 {
                    kkt[(n + c, j)] = a;
                    kkt[(j, n + c)] = a;
                }
                rhs[n + c] = all[i].1;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { return };
            if sol.iter().any(|v| !v.is_finite()) {
                return;
            }
            let x: Vec<f64> = sol.iter().take(n).copied().collect();
            let lam = &sol.as_slice()[n..];

            let released: Vec<usize> = (0..m).filter(|&c| lam[c] < -tol).map(|c| active[c]).collect();
            let violated: Vec<usize> = (0..all.len())
                .filter(|&i| slack(&all[i], &x) < -tol && !active.contains(&i))
                .collect();
            if released.is_empty() && violated.is_empty() {
                let obj = |x: &[f64]| {
                    let mut hx = vec![0.0; n];
                    self.hx(x, &mut hx);
                    (0..n).map(|j| 0.5 * x[j] * hx[j] + self.f[j] * x[j]).sum::<f64>()
                };
                if obj(&x) > obj(&out.x) + tol * (1.0 + obj(&out.x).abs()) {
                    return;
                }
                out.x = x;
                out.z_g.iter_mut().for_each(|z| *z = 0.0);
                out.z_l.iter_mut().for_each(|z| *z = 0.0);
                out.z_u.iter_mut().for_each(|z| *z = 0.0);
                for (c, &i) in active.iter().enumerate() {
                    let v = lam[c].max(0.0);
                    match all[i].2 {
                        Slot::Row(k) => out.z_g[k] = v,
                        Slot::Lower(l) => out.z_l[l] = v,
                        Slot::Upper(u) => out.z_u[u] = v,
                    }
                }
                return;
            }
            active.retain(|i| !released.contains(i));
            for i in violated {
                weight[i] = f64::INFINITY;
                active.push(i);
            }
        }
    }

    /// Map a reduced outcome back to the original variables and score it.
    fn finish(&self, p: &QpProblem, out: Outcome) -> QpSolution {
        let n0 = p.num_vars();
        let mut x = DVector::from_column_slice(&self.x_fixed);
        for (k, &j) in self.free.iter().enumerate() {
            x[j] = out.x.get(k).copied().unwrap_or(0.0);
        }
        let mut ineq = DVector::zeros(self.orig_m);
        for (k, row) in self.rows.iter().enumerate() {
            if let Some(z) = out.z_g.get(k) {
                ineq[row.source] = *z;
            }
        }
        if let Some(i) = out.empty_row {
            ineq[i] = 1.0;
        }
        let mut lower = DVector::zeros(n0);
        let mut upper = DVector::zeros(n0);
        for (l, &(k, _)) in self.lower.iter().enumerate() {
            lower[self.free[k]] = out.z_l.get(l).copied().unwrap_or(0.0);
        }
        for (u, &(k, _)) in self.upper.iter().enumerate() {
            upper[self.free[k]] = out.z_u.get(u).copied().unwrap_or(0.0);
        }
        if out.status == QpStatus::Optimal && self.free.len() < n0 {
            // Multipliers of fixed variables absorb their stationarity residual.
            let mut grad = &p.h * &x + &p.f;
            for i in 0..self.orig_m {
                if ineq[i] != 0.0 {
                    grad.axpy(ineq[i], &p.a.row(i).transpose(), 1.0);
                }
            }
            for j in 0..n0 {
                if !self.x_fixed[j].is_nan() {
                    lower[j] = grad[j].max(0.0);
                    upper[j] = (-grad[j]).max(0.0);
                }
            }
        }
        let multipliers = Multipliers { ineq, lower, upper };
        let report = kkt_report(p, &x, &multipliers);
        QpSolution {
            objective: p.objective(&x),
            kkt_residual: report.max(),
            status: out.status,
            iterations: out.iterations,
            x,
            multipliers,
        }
    }
}

struct Outcome {
    status: QpStatus,
    x: Vec<f64>,
    z_g: Vec<f64>,
    z_l: Vec<f64>,
    z_u: Vec<f64>,
    iterations: usize,
    empty_row: Option<usize>,
}

impl Outcome {
    fn with_status(
        status: QpStatus,
        _r: &Reduced,
        x: Vec<f64>,
        z_g: Vec<f64>,
        z_l: Vec<f64>,
        z_u: Vec<f64>,
        iterations: usize,
    ) -> Self {
        Self {
            status,
            x,
            z_g,
            z_l,
            z_u,
            iterations,
            empty_row: None,
        }
    }

    fn optimal(r: &Reduced, x: Vec<f64>, z_g: Vec<f64>, z_l: Vec<f64>, z_u: Vec<f64>, it: usize) -> Self {
        Self::with_status(QpStatus::Optimal, r, x, z_g, z_l, z_u, it)
    }

    fn infeasible(r: &Reduced, x: Vec<f64>, z_g: Vec<f64>, z_l: Vec<f64>, z_u: Vec<f64>, it: usize) -> Self {
        Self::with_status(QpStatus::Infeasible, r, x, z_g, z_l, z_u, it)
    }

    fn max_iter(r: &Reduced, x: Vec<f64>, z_g: Vec<f64>, z_l: Vec<f64>, z_u: Vec<f64>, it: usize) -> Self {
        Self::with_status(QpStatus::MaxIter, r, x, z_g, z_l, z_u, it)
    }

    fn infeasible_row(r: &Reduced, row: usize) -> Self {
        let x = (0..r.n)
            .map(|k| match (r.lower_of[k], r.upper_of[k]) {
                (Some(l), _) => r.lower[l].1,
                (None, Some(u)) => r.upper[u].1,
                _ => 0.0,
            })
            .collect();
        Self {
            status: QpStatus::Infeasible,
            x,
            z_g: vec![],
            z_l: vec![],
            z_u: vec![],
            iterations: 0,
            empty_row: Some(row),
        }
    }
}
