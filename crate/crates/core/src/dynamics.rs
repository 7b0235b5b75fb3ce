use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use crate::{CoreError, Result};

/// Wrap an angle into `(−π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can round to exactly 2π for tiny negative inputs.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Planar pose of the ego vehicle. Speed is a command, not a state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// The admissible input box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for InputBounds {
    fn default() -> Self {
        Self { v_min: 0.0, v_max: 8.0, omega_max: 0.5 }
    }
}

impl InputBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_min.is_finite()
            && self.v_max.is_finite()
            && self.omega_max.is_finite()
            && self.v_min <= self.v_max
            && self.omega_max >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidParameter(format!("input bounds {self:?}")))
        }
    }

    pub fn clip(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            v: u.v.clamp(self.v_min, self.v_max),
            omega: u.omega.clamp(-self.omega_max, self.omega_max),
        }
    }

    pub fn contains(&self, u: ControlInput, tol: f64) -> bool {
        u.v >= self.v_min - tol
            && u.v <= self.v_max + tol
            && u.omega.abs() <= self.omega_max + tol
    }

    /// The four corners, in a fixed order.
    pub fn corners(&self) -> [ControlInput; 4] {
        let (a, b, w) = (self.v_min, self.v_max, self.omega_max);
        [
            ControlInput::new(a, -w),
            ControlInput::new(a, w),
            ControlInput::new(b, -w),
            ControlInput::new(b, w),
        ]
    }
}

/// `sin(x)/x` and `(1 − cos x)/x`, accurate near zero.
fn arc_factors(x: f64) -> (f64, f64) {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        (1.0 - x2 / 6.0 + x2 * x2 / 120.0, x / 2.0 - x * x2 / 24.0)
    } else {
        (x.sin() / x, (1.0 - x.cos()) / x)
    }
}

/// Exact zero-order-hold step of `ẋ = v cosθ, ẏ = v sinθ, θ̇ = ω`.
pub fn step_unicycle(s: VehicleState, u: ControlInput, ts: f64) -> Result<VehicleState> {
    if !s.is_finite() || !u.v.is_finite() || !u.omega.is_finite() || !ts.is_finite() {
        return Err(CoreError::NonFinite("step_unicycle"));
    }
    if ts <= 0.0 {
        return Err(CoreError::InvalidParameter(format!("Ts = {ts}")));
    }
    let dth = u.omega * ts;
    let (s1, c1) = arc_factors(dth);
    let (sin, cos) = s.theta.sin_cos();
    let dist = u.v * ts;
    Ok(VehicleState {
        x: s.x + dist * (cos * s1 - sin * c1),
        y: s.y + dist * (sin * s1 + cos * c1),
        theta: normalize_angle(s.theta + dth),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PedestrianState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl PedestrianState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.vx, self.vy]
    }
}

/// Constant-velocity update.
pub fn step_pedestrian(p: PedestrianState, ts: f64) -> Result<PedestrianState> {
    let all = [p.x, p.y, p.vx, p.vy, ts];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("step_pedestrian"));
    }
    if ts <= 0.0 {
        return Err(CoreError::InvalidParameter(format!("Ts = {ts}")));
    }
    Ok(PedestrianState { x: p.x + p.vx * ts, y: p.y + p.vy * ts, ..p })
}

/// Where a point projects onto a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    pub distance: f64,
    pub segment: usize,
    /// Arclength of the foot point.
    pub s: f64,
    pub foot: [f64; 2],
}

/// A polyline with cumulative arclength.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    waypoints: Vec<[f64; 2]>,
    arclength: Vec<f64>,
}

impl ReferencePath {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(CoreError::InvalidPath("need at least two waypoints".into()));
        }
        if waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("reference path"));
        }
        let mut arclength = Vec::with_capacity(waypoints.len());
        arclength.push(0.0);
        for (i, w) in waypoints.windows(2).enumerate() {
            let len = dist(w[0], w[1]);
            if len <= 0.0 {
                return Err(CoreError::InvalidPath(format!(
                    "waypoints {i} and {} coincide",
                    i + 1
                )));
            }
            arclength.push(arclength[i] + len);
        }
        Ok(Self { waypoints, arclength })
    }

    /// Straight path from the origin along +x.
    pub fn straight(length: f64) -> Result<Self> {
        Self::new(vec![[0.0, 0.0], [length, 0.0]])
    }

    /// Two-column `x,y` CSV with a header row.
    pub fn from_csv_reader<R: Read>(rdr: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(rdr);
        let mut pts = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| CoreError::PathIo(e.to_string()))?;
            if rec.len() != 2 {
                return Err(CoreError::PathIo(format!(
                    "row {}: expected 2 columns, found {}",
                    line + 1,
                    rec.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| CoreError::PathIo(format!("row {}: {s:?}: {e}", line + 1)))
            };
            pts.push([parse(&rec[0])?, parse(&rec[1])?]);
        }
        Self::new(pts)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| CoreError::PathIo(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.waypoints
    }

    pub fn arclength(&self) -> &[f64] {
        &self.arclength
    }

    pub fn length(&self) -> f64 {
        *self.arclength.last().unwrap()
    }

    pub fn num_segments(&self) -> usize {
        self.waypoints.len() - 1
    }

    /// Unit tangent and heading of segment `i`.
    pub fn segment_heading(&self, i: usize) -> f64 {
        let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Nearest point on the polyline; ties go to the lower segment.
    pub fn project(&self, pos: [f64; 2]) -> PathProjection {
        let mut best = PathProjection { distance: f64::INFINITY, segment: 0, s: 0.0, foot: pos };
        for i in 0..self.num_segments() {
            let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
            let len = self.arclength[i + 1] - self.arclength[i];
            let d = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
            let t = ((pos[0] - a[0]) * d[0] + (pos[1] - a[1]) * d[1]).clamp(0.0, len);
            let foot = [a[0] + t * d[0], a[1] + t * d[1]];
            let e = dist(pos, foot);
            if e < best.distance {
                best = PathProjection { distance: e, segment: i, s: self.arclength[i] + t, foot };
            }
        }
        best
    }

    /// Point and heading at arclength `s`, clamped to the path; beyond the end
    /// the last segment is extended.
    pub fn sample(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.max(0.0);
        let i = match self.arclength.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i.min(self.num_segments() - 1),
            Err(i) => i.saturating_sub(1).min(self.num_segments() - 1),
        };
        let a = self.waypoints[i];
        let th = self.segment_heading(i);
        let t = s - self.arclength[i];
        ([a[0] + t * th.cos(), a[1] + t * th.sin()], th)
    }
}

/// Unsigned distance to the polyline and the nearest segment index.
pub fn cross_track_error(path: &ReferencePath, pos: [f64; 2]) -> (f64, usize) {
    let p = path.project(pos);
    (p.distance, p.segment)
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
