//! Safety filters.
//!
//! All filters minimally modify a nominal command,
//!
//! ```text
//!     min  ½‖u − u_nom‖² + ρ_ν ν²
//! ```
//!
//! subject to barrier rows that differ per filter:
//!
//! - relaxed CBF: `r_j(u) ≥ −ν` per pedestrian on measured states, `ν ≥ 0`;
//! - relaxed CVaR-CBF: per pedestrian `CVaR_ε(−r(u)) ≤ ν` over its sampled
//!   pairs plus `r_i(u) ≥ −ν` per pair, `0 ≤ ν ≤ ν̄`;
//! - hard CVaR-CBF: as above with `ν ≡ 0`;
//! - adaptive CVaR-CBF: only the tail rows with `ν ≡ 0`, retried over a ladder
//!   of risk levels.
//!
//! The tail rows use the epigraph form `γ + Σ t_i / ((1−ε)S) ≤ ν`,
//! `t_i ≥ Z_i(u) − γ`, `t_i ≥ 0`.
//!
//! When a CVaR solve has no point within the cap, the filter clears its
//! feasibility flag and returns the least-violating command instead: the
//! same rows re-solved with ν unbounded.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use riskgate_qp::{QpProblem, QpSolver, QpStatus};

use crate::barrier::{residual_affine, AffineResidual, BarrierParams};
use crate::dynamics::{dist, ControlInput, InputBounds, PedestrianState, VehicleState};
use crate::{CoreError, Result};

/// Pairs closer than this are treated as coincident.
pub const DEGENERATE_DISTANCE: f64 = 1e-6;
/// Residual assigned to a coincident pair.
pub const DEGENERATE_RESIDUAL: f64 = -1e3;
/// Feasibility tolerance used when checking a candidate command directly.
const FAST_PATH_TOL: f64 = 0.0;
/// Slack below which the relaxed CBF is considered unrelaxed.
const SLACK_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Rcbf,
    CcbfHard,
    Accbf,
    Rccbf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub rho_nu: f64,
    /// Confidence level ε of the tail constraint.
    pub epsilon: f64,
    pub nu_bar: f64,
    pub kind: FilterKind,
    /// Risk levels `1 − ε` tried in order by the adaptive filter.
    pub epsilon_ladder: Vec<f64>,
    pub bounds: InputBounds,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            rho_nu: 50.0,
            epsilon: 0.95,
            nu_bar: 3.8,
            kind: FilterKind::Rccbf,
            epsilon_ladder: vec![0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.40, 0.50],
            bounds: InputBounds::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_nu.is_finite() && self.rho_nu > 0.0) {
            return Err(CoreError::InvalidParameter(format!("rho_nu = {}", self.rho_nu)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CoreError::InvalidParameter(format!("epsilon = {}", self.epsilon)));
        }
        if self.nu_bar.is_nan() || self.nu_bar < 0.0 {
            return Err(CoreError::InvalidParameter(format!("nu_bar = {}", self.nu_bar)));
        }
        if self.epsilon_ladder.iter().any(|&a| !(a > 0.0 && a < 1.0))
            || self.epsilon_ladder.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(CoreError::InvalidParameter(format!(
                "ladder {:?} must be strictly increasing in (0, 1)",
                self.epsilon_ladder
            )));
        }
        if self.kind == FilterKind::Accbf && self.epsilon_ladder.is_empty() {
            return Err(CoreError::InvalidParameter("empty ladder".into()));
        }
        self.bounds.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub u_safe: ControlInput,
    pub nu: f64,
    /// Smallest residual at `u_safe`; `+∞` with no pedestrians.
    pub r_min: f64,
    /// The feasibility flag `a_k`. When false the CVaR filters return the
    /// least-violating command and `nu` is its (uncapped) slack.
    pub feasible: bool,
    pub objective: f64,
    pub solve_time_ms: f64,
    /// Largest per-pedestrian tail threshold (CVaR filters only).
    pub gamma: Option<f64>,
    /// Ladder entry that produced the command (adaptive filter only).
    pub epsilon_used: Option<f64>,
    /// Per-pedestrian CVaR of the realised losses at `u_safe` (CVaR filters).
    pub cvar: Vec<f64>,
    pub qp_iterations: usize,
}

/// Measured vehicle and pedestrians, as seen by the relaxed CBF.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredScene {
    pub vehicle: VehicleState,
    pub pedestrians: Vec<PedestrianState>,
}

/// Sampled positions of one pedestrian and its measured velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSamples {
    pub positions: Vec<[f64; 2]>,
    pub velocity: [f64; 2],
}

/// Vehicle samples share the measured heading; each pedestrian contributes
/// `S = P·Q` pairs indexed `i = p·Q + q`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticScene {
    pub heading: f64,
    pub vehicle_samples: Vec<[f64; 2]>,
    pub obstacles: Vec<ObstacleSamples>,
}

impl StochasticScene {
    pub fn pairs_per_obstacle(&self, j: usize) -> usize {
        self.vehicle_samples.len() * self.obstacles[j].positions.len()
    }
}

/// Affine residuals of one pedestrian's pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairResiduals {
    pub rows: Vec<AffineResidual>,
    /// Indices of pairs clamped because the points coincide.
    pub degenerate: Vec<usize>,
}

fn clamped_residual(
    pos: [f64; 2],
    theta: f64,
    obs: [f64; 2],
    vel: [f64; 2],
    bp: &BarrierParams,
) -> Result<(AffineResidual, bool)> {
    let pc = crate::barrier::lookahead_point(pos, theta, bp.lookahead);
    let d = dist(pc, obs);
    if d < DEGENERATE_DISTANCE {
        let r = AffineResidual { g: [0.0, 0.0], q: DEGENERATE_RESIDUAL, h: d - bp.ds };
        return Ok((r, true));
    }
    Ok((residual_affine(pos, theta, obs, vel, bp)?, false))
}

/// Per-pair affine residuals `r_i(u) = g_iᵀu + q_i` for every pedestrian.
pub fn assemble_stochastic_residuals(
    scene: &StochasticScene,
    bp: &BarrierParams,
) -> Result<Vec<PairResiduals>> {
    if scene.vehicle_samples.is_empty() {
        return Err(CoreError::InvalidParameter("no vehicle samples".into()));
    }
    scene
        .obstacles
        .iter()
        .map(|ob| {
            if ob.positions.is_empty() {
                return Err(CoreError::InvalidParameter("no obstacle samples".into()));
            }
            let mut rows = Vec::with_capacity(ob.positions.len() * scene.vehicle_samples.len());
            let mut degenerate = Vec::new();
            for &po in &ob.positions {
                for &pv in &scene.vehicle_samples {
                    let (r, deg) = clamped_residual(pv, scene.heading, po, ob.velocity, bp)?;
                    if deg {
                        degenerate.push(rows.len());
                    }
                    rows.push(r);
                }
            }
            Ok(PairResiduals { rows, degenerate })
        })
        .collect()
}

/// Sample CVaR `min_γ γ + Σ (Z_i − γ)_+ / ((1−ε)S)` and its smallest
/// minimiser, which is the empirical ε-quantile.
pub fn cvar_estimate(losses: &[f64], epsilon: f64) -> Result<(f64, f64)> {
    if losses.is_empty() {
        return Err(CoreError::InvalidParameter("empty loss sample".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(CoreError::InvalidParameter(format!("epsilon = {epsilon}")));
    }
    if losses.iter().any(|z| !z.is_finite()) {
        return Err(CoreError::NonFinite("losses"));
    }
    let mut z = losses.to_vec();
    z.sort_by(f64::total_cmp);
    let scale = 1.0 / ((1.0 - epsilon) * z.len() as f64);
    // The objective is convex piecewise linear with kinks at the samples;
    // scan them from the top, keeping the sum of samples above the candidate.
    let mut above = 0.0;
    let mut best = (f64::INFINITY, z[z.len() - 1]);
    for k in (0..z.len()).rev() {
        let n_above = (z.len() - 1 - k) as f64;
        let val = z[k] + scale * (above - n_above * z[k]);
        if val <= best.0 {
            best = (val, z[k]);
        }
        above += z[k];
    }
    Ok(best)
}

fn elapsed_ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

fn input_cost(u: ControlInput, u_nom: ControlInput) -> f64 {
    0.5 * ((u.v - u_nom.v).powi(2) + (u.omega - u_nom.omega).powi(2))
}

fn measured_rows(scene: &MeasuredScene, bp: &BarrierParams) -> Result<Vec<AffineResidual>> {
    let veh = &scene.vehicle;
    scene
        .pedestrians
        .iter()
        .map(|p| Ok(clamped_residual(veh.position(), veh.theta, p.position(), p.velocity(), bp)?.0))
        .collect()
}

fn min_residual(rows: &[AffineResidual], u: ControlInput) -> f64 {
    rows.iter().map(|r| r.eval(u)).fold(f64::INFINITY, f64::min)
}

/// Relaxed CBF on measured states.
///
/// `feasible` reports whether the unrelaxed barrier set meets the input box:
/// when the optimal slack is positive a hard QP (`ν ≡ 0`) decides it, and only
/// an affirmative infeasibility verdict or a solver failure clears the flag.
pub fn rcbf_filter(
    u_nom: ControlInput,
    scene: &MeasuredScene,
    cfg: &FilterConfig,
    bp: &BarrierParams,
    solver: &mut QpSolver,
) -> Result<FilterResult> {
    let t0 = Instant::now();
    let rows = measured_rows(scene, bp)?;
    let u0 = cfg.bounds.clip(u_nom);
    if rows.iter().all(|r| r.eval(u0) >= FAST_PATH_TOL) {
        return Ok(FilterResult {
            u_safe: u0,
            nu: 0.0,
            r_min: min_residual(&rows, u0),
            feasible: true,
            objective: input_cost(u0, u_nom),
            solve_time_ms: elapsed_ms(t0),
            gamma: None,
            epsilon_used: None,
            cvar: Vec::new(),
            qp_iterations: 0,
        });
    }

    let n_rows = rows.len();
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0 * cfg.rho_nu]));
    let f = DVector::from_vec(vec![-u_nom.v, -u_nom.omega, 0.0]);
    let mut a = DMatrix::zeros(n_rows, 3);
    let mut b = DVector::zeros(n_rows);
    for (k, r) in rows.iter().enumerate() {
        a[(k, 0)] = -r.g[0];
        a[(k, 1)] = -r.g[1];
        a[(k, 2)] = -1.0;
        b[k] = r.q;
    }
    let bd = &cfg.bounds;
    let lb = DVector::from_vec(vec![bd.v_min, -bd.omega_max, 0.0]);
    let ub = DVector::from_vec(vec![bd.v_max, bd.omega_max, f64::INFINITY]);
    let p = QpProblem::new(h, f).with_inequalities(a, b).with_bounds(lb, ub);
    let sol = solver.solve(&p)?;
    let mut iterations = sol.iterations;

    if sol.status != QpStatus::Optimal {
        return Ok(fallback(u_nom, u0, &rows, t0, iterations));
    }
    let u = ControlInput::new(sol.x[0], sol.x[1]);
    let nu = sol.x[2].max(0.0);
    let mut feasible = true;
    if nu > SLACK_TOL {
        let hard = hard_cbf_problem(u_nom, &rows, bd);
        let hs = solver.solve(&hard)?;
        iterations += hs.iterations;
        feasible = hs.status == QpStatus::Optimal;
    }
    Ok(FilterResult {
        u_safe: u,
        nu,
        r_min: min_residual(&rows, u),
        feasible,
        objective: sol.objective + 0.5 * (u_nom.v.powi(2) + u_nom.omega.powi(2)),
        solve_time_ms: elapsed_ms(t0),
        gamma: None,
        epsilon_used: None,
        cvar: Vec::new(),
        qp_iterations: iterations,
    })
}

fn hard_cbf_problem(u_nom: ControlInput, rows: &[AffineResidual], bd: &InputBounds) -> QpProblem {
    let mut a = DMatrix::zeros(rows.len(), 2);
    let mut b = DVector::zeros(rows.len());
    for (k, r) in rows.iter().enumerate() {
        a[(k, 0)] = -r.g[0];
        a[(k, 1)] = -r.g[1];
        b[k] = r.q;
    }
    QpProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![-u_nom.v, -u_nom.omega]))
        .with_inequalities(a, b)
        .with_bounds(
            DVector::from_vec(vec![bd.v_min, -bd.omega_max]),
            DVector::from_vec(vec![bd.v_max, bd.omega_max]),
        )
}

fn fallback(
    u_nom: ControlInput,
    u0: ControlInput,
    rows: &[AffineResidual],
    t0: Instant,
    iterations: usize,
) -> FilterResult {
    FilterResult {
        u_safe: u0,
        nu: 0.0,
        r_min: min_residual(rows, u0),
        feasible: false,
        objective: input_cost(u0, u_nom),
        solve_time_ms: elapsed_ms(t0),
        gamma: None,
        epsilon_used: None,
        cvar: Vec::new(),
        qp_iterations: iterations,
    }
}

/// Which rows and slack a CVaR solve uses.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TailSpec {
    epsilon: f64,
    /// Upper bound on ν; zero fixes it.
    nu_max: f64,
    per_pair: bool,
}

struct TailSolve {
    u: ControlInput,
    nu: f64,
    objective: f64,
    status: QpStatus,
    iterations: usize,
}

/// A pedestrian needs no rows when every pair stays nonnegative over the box.
fn is_inactive(rows: &[AffineResidual], bd: &InputBounds) -> bool {
    rows.iter().all(|r| r.min_over_box(bd) >= 0.0)
}

fn losses_at(rows: &[AffineResidual], u: ControlInput) -> Vec<f64> {
    rows.iter().map(|r| -r.eval(u)).collect()
}

fn candidate_is_feasible(pairs: &[PairResiduals], u: ControlInput, spec: TailSpec) -> Result<bool> {
    for p in pairs {
        let z = losses_at(&p.rows, u);
        if spec.per_pair && z.iter().any(|&zi| zi > FAST_PATH_TOL) {
            return Ok(false);
        }
        if cvar_estimate(&z, spec.epsilon)?.0 > FAST_PATH_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

fn solve_tail(
    u_nom: ControlInput,
    pairs: &[PairResiduals],
    spec: TailSpec,
    cfg: &FilterConfig,
    solver: &mut QpSolver,
) -> Result<TailSolve> {
    let bd = &cfg.bounds;
    let u0 = bd.clip(u_nom);
    if candidate_is_feasible(pairs, u0, spec)? {
        return Ok(TailSolve {
            u: u0,
            nu: 0.0,
            objective: input_cost(u0, u_nom),
            status: QpStatus::Optimal,
            iterations: 0,
        });
    }
    let active: Vec<&PairResiduals> = pairs.iter().filter(|p| !is_inactive(&p.rows, bd)).collect();

    // Variables: v, ω, ν, then γ_j and t_{j,i} per active pedestrian.
    let n_peds = active.len();
    let n_t: usize = active.iter().map(|p| p.rows.len()).sum();
    let n = 3 + n_peds + n_t;
    let per_pair_rows = if spec.per_pair { n_t } else { 0 };
    let m = n_peds + n_t + per_pair_rows;

    let mut h = DMatrix::zeros(n, n);
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = 2.0 * cfg.rho_nu;
    let mut f = DVector::zeros(n);
    f[0] = -u_nom.v;
    f[1] = -u_nom.omega;
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n, f64::INFINITY);
    lb[0] = bd.v_min;
    ub[0] = bd.v_max;
    lb[1] = -bd.omega_max;
    ub[1] = bd.omega_max;
    lb[2] = 0.0;
    ub[2] = spec.nu_max;

    let mut row = 0;
    let mut t_col = 3 + n_peds;
    for (j, p) in active.iter().enumerate() {
        let g_col = 3 + j;
        let scale = 1.0 / ((1.0 - spec.epsilon) * p.rows.len() as f64);
        // γ_j + scale Σ t − ν ≤ 0
        a[(row, g_col)] = 1.0;
        a[(row, 2)] = -1.0;
        for k in 0..p.rows.len() {
            a[(row, t_col + k)] = scale;
        }
        row += 1;
        for (k, r) in p.rows.iter().enumerate() {
            // −gᵀu − γ_j − t ≤ q
            a[(row, 0)] = -r.g[0];
            a[(row, 1)] = -r.g[1];
            a[(row, g_col)] = -1.0;
            a[(row, t_col + k)] = -1.0;
            b[row] = r.q;
            lb[t_col + k] = 0.0;
            row += 1;
        }
        if spec.per_pair {
            for r in &p.rows {
                // −gᵀu − ν ≤ q
                a[(row, 0)] = -r.g[0];
                a[(row, 1)] = -r.g[1];
                a[(row, 2)] = -1.0;
                b[row] = r.q;
                row += 1;
            }
        }
        t_col += p.rows.len();
    }
    debug_assert_eq!(row, m);

    let p = QpProblem::new(h, f).with_inequalities(a, b).with_bounds(lb, ub);
    let sol = solver.solve(&p)?;
    let nu = sol.x[2].clamp(0.0, spec.nu_max);
    let u = ControlInput::new(sol.x[0], sol.x[1]);
    Ok(TailSolve {
        u,
        nu,
        objective: input_cost(u, u_nom) + cfg.rho_nu * nu * nu,
        status: sol.status,
        iterations: sol.iterations,
    })
}

/// Realised tail statistics at `u`: per-pedestrian CVaR, largest threshold
/// and the smallest pair residual.
fn tail_report(pairs: &[PairResiduals], u: ControlInput, epsilon: f64) -> Result<(Vec<f64>, Option<f64>, f64)> {
    let mut cvars = Vec::with_capacity(pairs.len());
    let mut gamma: Option<f64> = None;
    let mut r_min = f64::INFINITY;
    for p in pairs {
        let z = losses_at(&p.rows, u);
        let (cv, g) = cvar_estimate(&z, epsilon)?;
        cvars.push(cv);
        gamma = Some(gamma.map_or(g, |x| x.max(g)));
        r_min = z.iter().map(|zi| -zi).fold(r_min, f64::min);
    }
    Ok((cvars, gamma, r_min))
}

/// Same rows with the slack cap lifted: the command that violates the tail
/// constraint least. Used when the capped problem has no solution.
fn least_violation(
    u_nom: ControlInput,
    pairs: &[PairResiduals],
    spec: TailSpec,
    cfg: &FilterConfig,
    solver: &mut QpSolver,
) -> Result<TailSolve> {
    solve_tail(u_nom, pairs, TailSpec { nu_max: f64::INFINITY, ..spec }, cfg, solver)
}

#[allow(clippy::too_many_arguments)]
fn tail_result(
    u_nom: ControlInput,
    pairs: &[PairResiduals],
    ts: TailSolve,
    spec: TailSpec,
    epsilon_used: Option<f64>,
    cfg: &FilterConfig,
    solver: &mut QpSolver,
    t0: Instant,
) -> Result<FilterResult> {
    let epsilon = spec.epsilon;
    let feasible = ts.status == QpStatus::Optimal;
    let mut iterations = ts.iterations;
    let (u, nu, objective) = if feasible {
        (ts.u, ts.nu, ts.objective)
    } else {
        let fb = least_violation(u_nom, pairs, spec, cfg, solver)?;
        iterations += fb.iterations;
        if fb.status == QpStatus::Optimal {
            (fb.u, fb.nu, fb.objective)
        } else {
            let u0 = cfg.bounds.clip(u_nom);
            (u0, 0.0, input_cost(u0, u_nom))
        }
    };
    let (cvar, gamma, r_min) = tail_report(pairs, u, epsilon)?;
    Ok(FilterResult {
        u_safe: u,
        nu,
        r_min,
        feasible,
        objective,
        solve_time_ms: elapsed_ms(t0),
        gamma,
        epsilon_used,
        cvar,
        qp_iterations: iterations,
    })
}

/// Relaxed (`RCCBF`) or hard (`CCBF_hard`) CVaR-CBF.
pub fn cvar_cbf_filter(
    u_nom: ControlInput,
    scene: &StochasticScene,
    cfg: &FilterConfig,
    bp: &BarrierParams,
    solver: &mut QpSolver,
) -> Result<FilterResult> {
    let t0 = Instant::now();
    let nu_max = match cfg.kind {
        FilterKind::Rccbf => cfg.nu_bar,
        FilterKind::CcbfHard => 0.0,
        other => {
            return Err(CoreError::InvalidParameter(format!(
                "cvar_cbf_filter called with {other:?}"
            )))
        }
    };
    let pairs = assemble_stochastic_residuals(scene, bp)?;
    let spec = TailSpec { epsilon: cfg.epsilon, nu_max, per_pair: true };
    let ts = solve_tail(u_nom, &pairs, spec, cfg, solver)?;
    tail_result(u_nom, &pairs, ts, spec, None, cfg, solver, t0)
}

/// Hard tail constraint retried over the ladder of risk levels, most
/// conservative (smallest) first.
pub fn adaptive_cvar_filter(
    u_nom: ControlInput,
    scene: &StochasticScene,
    cfg: &FilterConfig,
    bp: &BarrierParams,
    solver: &mut QpSolver,
) -> Result<FilterResult> {
    let t0 = Instant::now();
    if cfg.epsilon_ladder.is_empty() {
        return Err(CoreError::InvalidParameter("empty ladder".into()));
    }
    let pairs = assemble_stochastic_residuals(scene, bp)?;
    let mut iterations = 0;
    let mut last = None;
    for &alpha in &cfg.epsilon_ladder {
        let spec = TailSpec { epsilon: 1.0 - alpha, nu_max: 0.0, per_pair: false };
        let mut ts = solve_tail(u_nom, &pairs, spec, cfg, solver)?;
        iterations += ts.iterations;
        ts.iterations = iterations;
        if ts.status == QpStatus::Optimal {
            return tail_result(u_nom, &pairs, ts, spec, Some(alpha), cfg, solver, t0);
        }
        last = Some((ts, spec));
    }
    let (ts, spec) = last.expect("ladder is nonempty");
    let mut r = tail_result(u_nom, &pairs, ts, spec, None, cfg, solver, t0)?;
    r.feasible = false;
    Ok(r)
}
