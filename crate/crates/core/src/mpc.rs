//! Linear time-varying path-tracking MPC.
//!
//! The unicycle is linearised about a reference that advances along the path
//! at `v_ref` from the projection of the current position. The tracking error
//! `e_k = x_k − r_k` then obeys `e_{k+1} = A_k e_k + B_k w_k + d_k` with
//! `w_k = u_k − u_ref,k`, which is condensed into a QP over the inputs.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector3};
use riskgate_qp::{QpProblem, QpSolver, QpStatus};

use crate::dynamics::{normalize_angle, ControlInput, InputBounds, ReferencePath, VehicleState};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub w_pos: f64,
    pub w_head: f64,
    /// Weight on the deviation of each input from the reference input.
    pub w_u: f64,
    /// Weight on input increments.
    pub w_du: f64,
    /// Prediction step; the model holds each input this long.
    pub ts: f64,
    pub v_ref: f64,
    pub bounds: InputBounds,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            w_pos: 1.0,
            w_head: 0.5,
            w_u: 0.01,
            w_du: 0.1,
            ts: 0.1,
            v_ref: 5.0,
            bounds: InputBounds::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_pos, self.w_head, self.w_u, self.w_du];
        if self.horizon == 0 {
            return Err(CoreError::InvalidParameter("MPC horizon must be at least 1".into()));
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().all(|&x| x == 0.0) {
            return Err(CoreError::InvalidParameter(format!("MPC weights {w:?}")));
        }
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return Err(CoreError::InvalidParameter(format!("MPC ts = {}", self.ts)));
        }
        if !self.v_ref.is_finite() {
            return Err(CoreError::NonFinite("v_ref"));
        }
        self.bounds.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcCommand {
    pub u: ControlInput,
    /// The QP failed and pure pursuit produced the command.
    pub fallback: bool,
}

/// Geometric steering toward a look-ahead point at the reference speed.
pub fn pure_pursuit(state: &VehicleState, path: &ReferencePath, cfg: &MpcConfig) -> ControlInput {
    let v = cfg.v_ref.clamp(cfg.bounds.v_min, cfg.bounds.v_max);
    // About one second of travel ahead.
    let ld = cfg.v_ref.abs().max(2.0);
    let s0 = path.project(state.position()).s;
    let (target, _) = path.sample(s0 + ld);
    let dx = target[0] - state.x;
    let dy = target[1] - state.y;
    let alpha = normalize_angle(dy.atan2(dx) - state.theta);
    let dist = dx.hypot(dy).max(1e-6);
    let omega = 2.0 * v.max(0.5) * alpha.sin() / dist;
    cfg.bounds.clip(ControlInput::new(v, omega))
}

/// First input of the optimal sequence. `u_prev` seeds the first increment
/// penalty; without it the first increment is free.
pub fn mpc_nominal(
    state: &VehicleState,
    path: &ReferencePath,
    cfg: &MpcConfig,
    u_prev: Option<ControlInput>,
    solver: &mut QpSolver,
) -> Result<MpcCommand> {
    if ![state.x, state.y, state.theta].iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite("MPC state"));
    }
    match solve_qp(state, path, cfg, u_prev, solver) {
        Ok(Some(u)) => Ok(MpcCommand { u, fallback: false }),
        Ok(None) | Err(CoreError::Qp(_)) => {
            Ok(MpcCommand { u: pure_pursuit(state, path, cfg), fallback: true })
        }
        Err(e) => Err(e),
    }
}

fn solve_qp(
    state: &VehicleState,
    path: &ReferencePath,
    cfg: &MpcConfig,
    u_prev: Option<ControlInput>,
    solver: &mut QpSolver,
) -> Result<Option<ControlInput>> {
    let hz = cfg.horizon;
    let dt = cfg.ts;
    let s0 = path.project(state.position()).s;

    // Reference states r_0..r_H and inputs u_ref,0..u_ref,H−1.
    let refs: Vec<([f64; 2], f64)> = (0..=hz).map(|k| path.sample(s0 + cfg.v_ref * dt * k as f64)).collect();
    let u_ref: Vec<[f64; 2]> = (0..hz)
        .map(|k| [cfg.v_ref, normalize_angle(refs[k + 1].1 - refs[k].1) / dt])
        .collect();

    let e0 = Vector3::new(
        state.x - refs[0].0[0],
        state.y - refs[0].0[1],
        normalize_angle(state.theta - refs[0].1),
    );

    // Condensed prediction e_k = Φ_k e0 + Σ_j Γ_{k,j} w_j + c_k, k = 1..H.
    let mut phi = vec![Matrix3::identity(); hz + 1];
    let mut gamma = vec![vec![Matrix3x2::zeros(); hz]; hz + 1];
    let mut cst = vec![Vector3::zeros(); hz + 1];
    for k in 0..hz {
        let (p, th) = refs[k];
        let (s, c) = th.sin_cos();
        let vr = u_ref[k][0];
        let a = Matrix3::new(1.0, 0.0, -dt * vr * s, 0.0, 1.0, dt * vr * c, 0.0, 0.0, 1.0);
        let b = Matrix3x2::new(dt * c, 0.0, dt * s, 0.0, 0.0, dt);
        let next = refs[k + 1];
        let d = Vector3::new(
            p[0] + dt * vr * c - next.0[0],
            p[1] + dt * vr * s - next.0[1],
            normalize_angle(th + dt * u_ref[k][1] - next.1),
        );
        phi[k + 1] = a * phi[k];
        for j in 0..k {
            gamma[k + 1][j] = a * gamma[k][j];
        }
        gamma[k + 1][k] = b;
        cst[k + 1] = a * cst[k] + d;
    }

    let n = 2 * hz;
    let q = Matrix3::from_diagonal(&Vector3::new(cfg.w_pos, cfg.w_pos, cfg.w_head));
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut f = DVector::<f64>::zeros(n);
    for k in 1..=hz {
        let free = phi[k] * e0 + cst[k];
        for i in 0..hz {
            let gi_q = gamma[k][i].transpose() * q;
            let fi = gi_q * free;
            f[2 * i] += 2.0 * fi[0];
            f[2 * i + 1] += 2.0 * fi[1];
            for j in 0..hz {
                let blk = gi_q * gamma[k][j];
                for r in 0..2 {
                    for c in 0..2 {
                        h[(2 * i + r, 2 * j + c)] += 2.0 * blk[(r, c)];
                    }
                }
            }
        }
    }
    for i in 0..n {
        h[(i, i)] += 2.0 * cfg.w_u;
    }
    // Increments: u_k − u_{k−1} = w_k − w_{k−1} + (u_ref,k − u_ref,k−1).
    for k in 0..hz {
        for ch in 0..2 {
            let i = 2 * k + ch;
            if k == 0 {
                if let Some(up) = u_prev {
                    let prev = if ch == 0 { up.v } else { up.omega };
                    let off = u_ref[0][ch] - prev;
                    h[(i, i)] += 2.0 * cfg.w_du;
                    f[i] += 2.0 * cfg.w_du * off;
                }
            } else {
                let j = i - 2;
                let off = u_ref[k][ch] - u_ref[k - 1][ch];
                h[(i, i)] += 2.0 * cfg.w_du;
                h[(j, j)] += 2.0 * cfg.w_du;
                h[(i, j)] -= 2.0 * cfg.w_du;
                h[(j, i)] -= 2.0 * cfg.w_du;
                f[i] += 2.0 * cfg.w_du * off;
                f[j] -= 2.0 * cfg.w_du * off;
            }
        }
    }
    // Exact symmetry for the solver's check.
    let h = (&h + h.transpose()) * 0.5;

    let bd = &cfg.bounds;
    let mut lb = DVector::zeros(n);
    let mut ub = DVector::zeros(n);
    for k in 0..hz {
        lb[2 * k] = bd.v_min - u_ref[k][0];
        ub[2 * k] = bd.v_max - u_ref[k][0];
        lb[2 * k + 1] = -bd.omega_max - u_ref[k][1];
        ub[2 * k + 1] = bd.omega_max - u_ref[k][1];
    }
    let p = QpProblem::new(h, f).with_bounds(lb, ub);
    let sol = solver.solve(&p)?;
    if sol.status != QpStatus::Optimal {
        return Ok(None);
    }
    let u = ControlInput::new(u_ref[0][0] + sol.x[0], u_ref[0][1] + sol.x[1]);
    Ok(Some(bd.clip(u)))
}
