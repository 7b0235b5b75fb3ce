//! One closed-loop run: measure, plan, filter, step the truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use riskgate_core::barrier::{barrier_value, lookahead_point, BarrierParams};
use riskgate_core::dynamics::{
    cross_track_error, step_unicycle, ControlInput, PedestrianState, ReferencePath, VehicleState,
};
use riskgate_core::filters::{
    adaptive_cvar_filter, cvar_cbf_filter, rcbf_filter, FilterConfig, FilterKind, FilterResult, MeasuredScene,
    ObstacleSamples, StochasticScene,
};
use riskgate_core::monitor::MonitorState;
use riskgate_core::mpc::{mpc_nominal, MpcConfig};
use riskgate_core::qp::QpSolver;
use riskgate_core::supervisor::{supervise_tick, FilterMode, SupervisorConfig};

use crate::config::{Method, ScenarioConfig};
use crate::metrics::RunMetrics;
use crate::sampling::{gaussian_offset, sample_obstacle, sample_vehicle, uniform_offset};
use crate::SimError;

/// Everything observed and decided in one control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    /// True pose `[x, y, θ]`.
    pub vehicle: [f64; 3],
    pub measured: [f64; 3],
    pub peds_true: Vec<[f64; 2]>,
    pub peds_measured: Vec<[f64; 2]>,
    pub u_nom: [f64; 2],
    pub mpc_fallback: bool,
    pub u_applied: [f64; 2],
    /// `"rcbf"` or `"cvar"`: the family of the filter whose result was used.
    pub mode: String,
    pub feasible: bool,
    /// Relaxed-CBF probe feasibility under a supervisor.
    pub probe_feasible: Option<bool>,
    pub nu: f64,
    pub r_min: f64,
    pub bad: Option<bool>,
    pub m: Option<usize>,
    pub epsilon_used: Option<f64>,
    pub both_infeasible: bool,
    pub solve_time_ms: f64,
    /// Nearest true centre distance; absent without pedestrians.
    pub min_dist: Option<f64>,
    /// True distance counted toward MDP (a pedestrian is near).
    pub avoiding: bool,
    pub h_true: Option<f64>,
    /// Mean, min and max of `h` over the sampled pairs.
    pub h_band: Option<[f64; 3]>,
    pub cte: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub metrics: RunMetrics,
    pub trace: Option<Vec<StepRecord>>,
}

#[derive(Debug, Clone)]
struct Walker {
    state: PedestrianState,
    /// Unit crossing direction.
    dir: [f64; 2],
    speed: f64,
    start_s: f64,
    walked: f64,
    span: f64,
}

impl Walker {
    fn walking(&self) -> bool {
        self.state.vx != 0.0 || self.state.vy != 0.0
    }

    /// Starts the walk once the vehicle reaches the trigger point.
    fn trigger(&mut self, vehicle_s: f64) {
        if self.walked == 0.0 && !self.walking() && vehicle_s >= self.start_s && self.speed > 0.0 {
            self.state.vx = self.dir[0] * self.speed;
            self.state.vy = self.dir[1] * self.speed;
        }
    }

    fn advance(&mut self, ts: f64) {
        if self.walking() {
            let step = (self.speed * ts).min(self.span - self.walked);
            self.state.x += self.dir[0] * step;
            self.state.y += self.dir[1] * step;
            self.walked += step;
            if self.walked >= self.span {
                self.state.vx = 0.0;
                self.state.vy = 0.0;
            }
        }
    }
}

fn spawn_pedestrians(cfg: &ScenarioConfig, path: &ReferencePath, rng: &mut ChaCha8Rng) -> Vec<Walker> {
    (0..cfg.n_pedestrians)
        .map(|j| {
            let js: f64 = rng.random();
            let jv: f64 = rng.random();
            let jw: f64 = rng.random();
            let s = ScenarioConfig::ped_value(&cfg.ped_s, j) + cfg.ped_jitter * (2.0 * js - 1.0);
            let speed = (ScenarioConfig::ped_value(&cfg.ped_speed, j) + cfg.ped_speed_jitter * (2.0 * jv - 1.0)).max(0.0);
            let side = ScenarioConfig::ped_value(&cfg.ped_side, j).signum();
            let side = if side == 0.0 { 1.0 } else { side };
            let (foot, heading) = path.sample(s);
            let normal = [-heading.sin(), heading.cos()];
            let start = [foot[0] + side * cfg.ped_lateral * normal[0], foot[1] + side * cfg.ped_lateral * normal[1]];
            Walker {
                state: PedestrianState::new(start[0], start[1], 0.0, 0.0),
                dir: [-side * normal[0], -side * normal[1]],
                speed,
                start_s: s - ScenarioConfig::ped_value(&cfg.ped_trigger, j),
                walked: 0.0,
                span: (cfg.ped_span + cfg.ped_span_jitter * (2.0 * jw - 1.0)).max(0.0),
            }
        })
        .collect()
}

// One per episode, so the size difference does not matter.
#[allow(clippy::large_enum_variant)]
enum Controller {
    Single(FilterConfig),
    Supervised(SupervisorConfig, MonitorState),
}

struct TickFilter {
    u: ControlInput,
    result: FilterResult,
    mode: FilterMode,
    probe_feasible: Option<bool>,
    bad: Option<bool>,
    m: Option<usize>,
    both_infeasible: bool,
    time_ms: f64,
}

fn filter_tick(
    ctl: &mut Controller,
    method: Method,
    u_nom: ControlInput,
    measured: &MeasuredScene,
    stochastic: &StochasticScene,
    bp: &BarrierParams,
    solver: &mut QpSolver,
) -> Result<TickFilter, SimError> {
    match ctl {
        Controller::Single(fc) => {
            let result = match method {
                Method::Rcbf => rcbf_filter(u_nom, measured, fc, bp, solver)?,
                Method::Accbf => adaptive_cvar_filter(u_nom, stochastic, fc, bp, solver)?,
                _ => cvar_cbf_filter(u_nom, stochastic, fc, bp, solver)?,
            };
            let mode = if method == Method::Rcbf { FilterMode::Rcbf } else { FilterMode::Cvar };
            Ok(TickFilter {
                u: result.u_safe,
                time_ms: result.solve_time_ms,
                probe_feasible: (method == Method::Rcbf).then_some(result.feasible),
                result,
                mode,
                bad: None,
                m: None,
                both_infeasible: false,
            })
        }
        Controller::Supervised(sc, monitor) => {
            let out = supervise_tick(measured, stochastic, u_nom, sc, monitor, solver)?;
            let mut time_ms = out.probe.solve_time_ms;
            if out.mode_used == FilterMode::Cvar {
                time_ms += out.result.solve_time_ms;
            }
            Ok(TickFilter {
                u: out.u_applied,
                mode: out.mode_used,
                probe_feasible: Some(out.probe.feasible),
                bad: Some(out.bad),
                m: Some(out.m),
                both_infeasible: out.both_infeasible,
                result: out.result,
                time_ms,
            })
        }
    }
}

/// `h` at the look-ahead point for every sampled pair, minimised over
/// pedestrians; returns mean, min and max.
fn h_band(scene: &StochasticScene, bp: &BarrierParams) -> Option<[f64; 3]> {
    if scene.obstacles.is_empty() {
        return None;
    }
    let p = scene.obstacles[0].positions.len();
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut n = 0usize;
    for pi in 0..p {
        for v in &scene.vehicle_samples {
            let pc = lookahead_point(*v, scene.heading, bp.lookahead);
            let h = scene
                .obstacles
                .iter()
                .map(|o| barrier_value(pc, o.positions[pi], bp.ds))
                .fold(f64::INFINITY, f64::min);
            sum += h;
            lo = lo.min(h);
            hi = hi.max(h);
            n += 1;
        }
    }
    Some([sum / n as f64, lo, hi])
}

/// Simulates run `run_index` of `cfg` on `path` with seed `cfg.seed + run_index`.
pub fn run_episode(
    cfg: &ScenarioConfig,
    path: &ReferencePath,
    run_index: usize,
    keep_trace: bool,
) -> Result<Episode, SimError> {
    let seed = cfg.seed.wrapping_add(run_index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bp = cfg.barrier_params()?;
    let mpc_cfg: MpcConfig = cfg.mpc_config();
    let mut ctl = match cfg.method.trigger() {
        Some(t) => {
            let sc = cfg.supervisor_config(t)?;
            let mon = MonitorState::new(sc.budget.w);
            Controller::Supervised(sc, mon)
        }
        None => {
            let kind = match cfg.method {
                Method::Rcbf => FilterKind::Rcbf,
                Method::Ccbf => FilterKind::CcbfHard,
                Method::Accbf => FilterKind::Accbf,
                _ => FilterKind::Rccbf,
            };
            Controller::Single(cfg.filter_config(kind)?)
        }
    };
    let mut solver = QpSolver::default();

    let mut walkers = spawn_pedestrians(cfg, path, &mut rng);
    let (start, heading0) = path.sample(0.0);
    let mut vehicle = VehicleState::new(start[0], start[1], heading0);
    let hold = ((cfg.ped_noise_hold / cfg.ts).round() as usize).max(1);
    let near = 2.0 * cfg.ped_trigger.iter().cloned().fold(0.0, f64::max);

    let mut ped_offsets = vec![[0.0, 0.0]; walkers.len()];
    let mut u_prev: Option<ControlInput> = None;
    let mut trace = keep_trace.then(Vec::new);

    let mut acc = RunAccumulator { min_dist: f64::INFINITY, ..Default::default() };
    let mut completed = false;
    let mut collided = false;
    let goal = path.length() - cfg.goal_tolerance;

    for k in 0..cfg.max_steps {
        let s_vehicle = path.project(vehicle.position()).s;
        for w in walkers.iter_mut() {
            w.trigger(s_vehicle);
        }

        let dists: Vec<f64> = walkers
            .iter()
            .map(|w| (w.state.x - vehicle.x).hypot(w.state.y - vehicle.y))
            .collect();
        let min_dist = dists.iter().cloned().reduce(f64::min);

        // Measurement channels.
        let vm = gaussian_offset(vehicle.position(), cfg.sigma_v, &mut rng);
        let measured_vehicle = VehicleState::new(vm[0], vm[1], vehicle.theta);
        if k % hold == 0 {
            for off in ped_offsets.iter_mut() {
                *off = uniform_offset([0.0, 0.0], cfg.sigma_o, &mut rng);
            }
        }
        let measured_peds: Vec<PedestrianState> = walkers
            .iter()
            .zip(&ped_offsets)
            .map(|(w, o)| PedestrianState::new(w.state.x + o[0], w.state.y + o[1], w.state.vx, w.state.vy))
            .collect();

        let mpc = mpc_nominal(&measured_vehicle, path, &mpc_cfg, u_prev, &mut solver)?;

        // Samples are drawn every tick so the stream does not depend on mode.
        let vehicle_samples = sample_vehicle(measured_vehicle.position(), cfg.sigma_v, cfg.q_samples, &mut rng);
        let obstacles: Vec<ObstacleSamples> = measured_peds
            .iter()
            .map(|p| ObstacleSamples {
                positions: sample_obstacle(p.position(), cfg.sigma_o, cfg.p_samples, &mut rng),
                velocity: p.velocity(),
            })
            .collect();
        let stochastic = StochasticScene { heading: measured_vehicle.theta, vehicle_samples, obstacles };
        let measured = MeasuredScene { vehicle: measured_vehicle, pedestrians: measured_peds };

        let tick = filter_tick(&mut ctl, cfg.method, mpc.u, &measured, &stochastic, &bp, &mut solver)?;
        let (cte, _) = cross_track_error(path, vehicle.position());
        let avoiding = dists.iter().any(|&d| d <= near);
        acc.push(&tick, cte, min_dist.filter(|_| avoiding));

        if let Some(tr) = trace.as_mut() {
            let pc = lookahead_point(vehicle.position(), vehicle.theta, bp.lookahead);
            let h_true = walkers
                .iter()
                .map(|w| barrier_value(pc, w.state.position(), bp.ds))
                .reduce(f64::min);
            tr.push(StepRecord {
                k,
                t: k as f64 * cfg.ts,
                vehicle: [vehicle.x, vehicle.y, vehicle.theta],
                measured: [measured.vehicle.x, measured.vehicle.y, measured.vehicle.theta],
                peds_true: walkers.iter().map(|w| w.state.position()).collect(),
                peds_measured: measured.pedestrians.iter().map(|p| p.position()).collect(),
                u_nom: [mpc.u.v, mpc.u.omega],
                mpc_fallback: mpc.fallback,
                u_applied: [tick.u.v, tick.u.omega],
                mode: match tick.mode {
                    FilterMode::Rcbf => "rcbf".into(),
                    FilterMode::Cvar => "cvar".into(),
                },
                feasible: tick.result.feasible,
                probe_feasible: tick.probe_feasible,
                nu: tick.result.nu,
                r_min: tick.result.r_min,
                bad: tick.bad,
                m: tick.m,
                epsilon_used: tick.result.epsilon_used,
                both_infeasible: tick.both_infeasible,
                solve_time_ms: tick.time_ms,
                min_dist,
                avoiding,
                h_true,
                h_band: h_band(&stochastic, &bp),
                cte,
            });
        }
        acc.mpc_fallbacks += mpc.fallback as usize;

        // The terminal tick is still recorded so the trace alone settles
        // every metric; its command is never applied.
        if let Some(d) = min_dist {
            acc.min_dist = acc.min_dist.min(d);
            if d < cfg.collision_distance {
                collided = true;
                break;
            }
        }
        if s_vehicle >= goal {
            completed = true;
            break;
        }

        vehicle = step_unicycle(vehicle, tick.u, cfg.ts)?;
        u_prev = Some(tick.u);
        for w in walkers.iter_mut() {
            w.advance(cfg.ts);
        }
    }

    let metrics = acc.finish(cfg, run_index, seed, collided, completed);
    Ok(Episode { metrics, trace })
}

#[derive(Default)]
struct RunAccumulator {
    steps: usize,
    min_dist: f64,
    avoid_dist: Option<f64>,
    infeasible: usize,
    probe_infeasible: usize,
    probe_seen: bool,
    ct_sum: f64,
    ct_max: f64,
    cte_sum: f64,
    cvar_steps: usize,
    both_infeasible: usize,
    mpc_fallbacks: usize,
}

impl RunAccumulator {
    fn push(&mut self, t: &TickFilter, cte: f64, avoid: Option<f64>) {
        self.steps += 1;
        self.infeasible += (!t.result.feasible) as usize;
        if let Some(p) = t.probe_feasible {
            self.probe_seen = true;
            self.probe_infeasible += (!p) as usize;
        }
        self.ct_sum += t.time_ms;
        self.ct_max = self.ct_max.max(t.time_ms);
        self.cte_sum += cte;
        self.cvar_steps += (t.mode == FilterMode::Cvar) as usize;
        self.both_infeasible += t.both_infeasible as usize;
        if let Some(d) = avoid {
            self.avoid_dist = Some(self.avoid_dist.map_or(d, |a| a.min(d)));
        }
    }

    fn finish(self, cfg: &ScenarioConfig, run: usize, seed: u64, collided: bool, completed: bool) -> RunMetrics {
        let n = self.steps.max(1) as f64;
        RunMetrics {
            run,
            seed,
            method: cfg.method,
            sigma_o: cfg.sigma_o,
            n_pedestrians: cfg.n_pedestrians,
            delta: cfg.delta,
            success: !collided,
            completed,
            steps: self.steps,
            min_dist: self.min_dist,
            avoid_dist: self.avoid_dist,
            infeasible_rate: self.infeasible as f64 / n,
            probe_infeasible_rate: self.probe_seen.then(|| self.probe_infeasible as f64 / n),
            mean_ct_ms: self.ct_sum / n,
            max_ct_ms: self.ct_max,
            mean_cte: self.cte_sum / n,
            cvar_rate: self.cvar_steps as f64 / n,
            both_infeasible_steps: self.both_infeasible,
            mpc_fallbacks: self.mpc_fallbacks,
        }
    }
}
