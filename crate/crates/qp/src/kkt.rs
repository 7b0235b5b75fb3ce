use nalgebra::DVector;

use crate::{Multipliers, QpProblem};

/// The four first-order optimality residuals of a candidate primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Largest constraint violation (rows and bounds).
    pub primal: f64,
    /// Largest negative part of any multiplier.
    pub dual: f64,
    /// `‖Hx + f + Aᵀλ − μ_lb + μ_ub‖∞`.
    pub stationarity: f64,
    /// Largest `|multiplier · slack|`.
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.stationarity)
            .max(self.complementarity)
    }
}

pub fn kkt_report(p: &QpProblem, x: &DVector<f64>, mult: &Multipliers) -> KktReport {
    let n = p.num_vars();
    let mut primal = 0.0f64;
    let mut compl = 0.0f64;
    let mut dual = 0.0f64;

    let mut grad = &p.h * x + &p.f;
    for i in 0..p.num_inequalities() {
        let lam = mult.ineq[i];
        dual = dual.max(-lam);
        if lam != 0.0 {
            grad.axpy(lam, &p.a.row(i).transpose(), 1.0);
        }
        if p.b[i].is_finite() {
            let slack = p.b[i] - p.a.row(i).dot(&x.transpose());
            primal = primal.max(-slack);
            compl = compl.max((lam * slack).abs());
        }
    }
    for j in 0..n {
        let (ml, mu) = (mult.lower[j], mult.upper[j]);
        dual = dual.max(-ml).max(-mu);
        grad[j] += mu - ml;
        if p.lb[j].is_finite() {
            let s = x[j] - p.lb[j];
            primal = primal.max(-s);
            compl = compl.max((ml * s).abs());
        }
        if p.ub[j].is_finite() {
            let s = p.ub[j] - x[j];
            primal = primal.max(-s);
            compl = compl.max((mu * s).abs());
        }
    }
    KktReport {
        primal,
        dual,
        stationarity: grad.amax(),
        complementarity: compl,
    }
}
