use crate::dynamics::{dist, ControlInput, PedestrianState, VehicleState};
use crate::{CoreError, Result};

/// Default look-ahead offset of the barrier point ahead of the axle.
pub const DEFAULT_LOOKAHEAD: f64 = 0.5;

/// Barrier decay rate, safe distance, sample time and their discrete images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    pub kappa: f64,
    pub ds: f64,
    pub ts: f64,
    /// `e^{−κ Ts}`.
    pub mu: f64,
    /// `(1 − μ)/κ`.
    pub c: f64,
    /// Distance `d` from the vehicle reference point to the barrier point.
    pub lookahead: f64,
}

impl BarrierParams {
    pub fn new(kappa: f64, ds: f64, ts: f64) -> Result<Self> {
        if !(ds.is_finite() && ds > 0.0) {
            return Err(CoreError::InvalidParameter(format!("Ds = {ds}")));
        }
        let (mu, c) = derive_discrete(kappa, ts)?;
        Ok(Self { kappa, ds, ts, mu, c, lookahead: DEFAULT_LOOKAHEAD })
    }

    pub fn with_lookahead(mut self, d: f64) -> Result<Self> {
        if !(d.is_finite() && d >= 0.0) {
            return Err(CoreError::InvalidParameter(format!("look-ahead = {d}")));
        }
        self.lookahead = d;
        Ok(self)
    }
}

/// `μ = e^{−κ Ts}`, `c = (1 − μ)/κ`.
pub fn derive_discrete(kappa: f64, ts: f64) -> Result<(f64, f64)> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(CoreError::InvalidParameter(format!("kappa = {kappa}")));
    }
    if !(ts.is_finite() && ts > 0.0) {
        return Err(CoreError::InvalidParameter(format!("Ts = {ts}")));
    }
    let x = kappa * ts;
    let mu = (-x).exp();
    // -expm1 avoids cancellation when κTs is small.
    let c = -(-x).exp_m1() / kappa;
    Ok((mu, c))
}

/// `h = ‖veh − obs‖ − Ds`.
pub fn barrier_value(veh: [f64; 2], obs: [f64; 2], ds: f64) -> f64 {
    dist(veh, obs) - ds
}

/// Residual `r(u) = gᵀu + q`, affine in `u = (v, ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineResidual {
    pub g: [f64; 2],
    pub q: f64,
    /// Barrier value at the look-ahead point.
    pub h: f64,
}

impl AffineResidual {
    pub fn eval(&self, u: ControlInput) -> f64 {
        self.g[0] * u.v + self.g[1] * u.omega + self.q
    }

    /// Smallest value over the input box (attained at a corner).
    pub fn min_over_box(&self, b: &crate::dynamics::InputBounds) -> f64 {
        let v = if self.g[0] >= 0.0 { b.v_min } else { b.v_max };
        self.g[0] * v - self.g[1].abs() * b.omega_max + self.q
    }
}

/// Look-ahead point `p + d(cos θ, sin θ)`.
pub fn lookahead_point(pos: [f64; 2], theta: f64, d: f64) -> [f64; 2] {
    [pos[0] + d * theta.cos(), pos[1] + d * theta.sin()]
}

/// Affine residual for a vehicle at `pos` with heading `theta` against an
/// obstacle at `obs` moving with `obs_vel`.
pub fn residual_affine(
    pos: [f64; 2],
    theta: f64,
    obs: [f64; 2],
    obs_vel: [f64; 2],
    bp: &BarrierParams,
) -> Result<AffineResidual> {
    let pc = lookahead_point(pos, theta, bp.lookahead);
    let diff = [pc[0] - obs[0], pc[1] - obs[1]];
    let norm = diff[0].hypot(diff[1]);
    if !norm.is_finite() {
        return Err(CoreError::NonFinite("residual"));
    }
    if norm == 0.0 {
        return Err(CoreError::DegenerateGeometry);
    }
    let n = [diff[0] / norm, diff[1] / norm];
    let (s, c) = theta.sin_cos();
    let h = norm - bp.ds;
    Ok(AffineResidual {
        g: [n[0] * c + n[1] * s, bp.lookahead * (-n[0] * s + n[1] * c)],
        q: bp.kappa * h - (n[0] * obs_vel[0] + n[1] * obs_vel[1]),
        h,
    })
}

/// `r = ḣ(x, u) + κ h(x)` for the look-ahead barrier.
pub fn residual(
    veh: &VehicleState,
    obs: &PedestrianState,
    u: ControlInput,
    bp: &BarrierParams,
) -> Result<f64> {
    Ok(residual_affine(veh.position(), veh.theta, obs.position(), obs.velocity(), bp)?.eval(u))
}

/// Loss `Z = −r`.
pub fn loss(r: f64) -> f64 {
    -r
}

/// Guaranteed lower bound `μ h_k + c r_k` on `h_{k+1}`.
pub fn one_step_bound(h: f64, r: f64, bp: &BarrierParams) -> f64 {
    bp.mu * h + bp.c * r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_examples() {
        let (mu, c) = derive_discrete(1.0, 0.02).unwrap();
        assert!((mu - 0.980199).abs() < 1e-6 && (c - 0.019801).abs() < 1e-6);
        let (mu, c) = derive_discrete(50.0, 1.0).unwrap();
        assert!(mu < 1e-20 && (c - 0.02).abs() < 1e-15);
        let (mu, c) = derive_discrete(1.0, std::f64::consts::LN_2).unwrap();
        assert!((mu - 0.5).abs() < 1e-15 && (c - 0.5).abs() < 1e-15);
        assert!(derive_discrete(0.0, 1.0).is_err());
        assert!(derive_discrete(1.0, -1.0).is_err());
    }

    #[test]
    fn barrier_examples() {
        assert_eq!(barrier_value([0.0, 0.0], [5.0, 0.0], 3.0), 2.0);
        assert_eq!(barrier_value([1.0, 1.0], [1.0, 1.0], 3.0), -3.0);
        assert_eq!(barrier_value([3.0, 4.0], [0.0, 0.0], 3.0), 2.0);
    }

    #[test]
    fn loss_flips_sign() {
        assert_eq!(loss(4.5), -4.5);
        assert_eq!(loss(0.0), 0.0);
        assert_eq!(loss(-1.2), 1.2);
    }

    #[test]
    fn one_step_examples() {
        let mut bp = BarrierParams::new(1.0, 3.0, std::f64::consts::LN_2).unwrap();
        assert!((one_step_bound(1.0, 0.0, &bp) - 0.5).abs() < 1e-15);
        bp.mu = 0.9802;
        bp.c = 0.0198;
        assert!((one_step_bound(0.0, 1.0, &bp) - 0.0198).abs() < 1e-15);
        assert!((one_step_bound(2.0, -3.8, &bp) - 1.88516).abs() < 1e-9);
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let bp = BarrierParams::new(1.0, 3.0, 0.02).unwrap();
        let veh = VehicleState::new(0.0, 0.0, 0.0);
        let obs = PedestrianState::new(0.5, 0.0, 0.0, 0.0);
        assert_eq!(
            residual(&veh, &obs, ControlInput::new(1.0, 0.0), &bp),
            Err(CoreError::DegenerateGeometry)
        );
    }
}
