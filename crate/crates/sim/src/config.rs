//! Scenario configuration and its flat `key = value` file format.
//!
//! One setting per line, `#` starts a comment, list values are comma
//! separated. Every key is optional; unset keys keep the defaults below.
//! Lists given per pedestrian broadcast when they hold a single value.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use riskgate_core::barrier::BarrierParams;
use riskgate_core::dynamics::{InputBounds, ReferencePath};
use riskgate_core::filters::{FilterConfig, FilterKind};
use riskgate_core::monitor::RiskBudgetConfig;
use riskgate_core::mpc::MpcConfig;
use riskgate_core::supervisor::{SupervisorConfig, Trigger};

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Rcbf,
    Ccbf,
    Accbf,
    Rccbf,
    Ft,
    Qt,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Rcbf, Method::Ccbf, Method::Accbf, Method::Rccbf, Method::Ft, Method::Qt];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rcbf => "rcbf",
            Method::Ccbf => "ccbf",
            Method::Accbf => "accbf",
            Method::Rccbf => "rccbf",
            Method::Ft => "ft",
            Method::Qt => "qt",
        }
    }

    pub fn trigger(self) -> Option<Trigger> {
        match self {
            Method::Ft => Some(Trigger::Feasibility),
            Method::Qt => Some(Trigger::Quality),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SimError::Config(format!("unknown method '{s}' (rcbf|ccbf|accbf|rccbf|ft|qt)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub method: Method,
    pub seed: u64,
    /// Control period [s].
    pub ts: f64,
    pub max_steps: usize,
    /// Straight path length when no path file is given [m].
    pub path_length: f64,
    pub path_file: Option<PathBuf>,
    /// The run ends once the vehicle projects this close to the path end [m].
    pub goal_tolerance: f64,
    /// Vehicle plus pedestrian radius: centres closer than this collide [m].
    pub collision_distance: f64,

    pub n_pedestrians: usize,
    /// Arclength at which each pedestrian crosses [m].
    pub ped_s: Vec<f64>,
    /// Starting side: +1 left of the path, −1 right.
    pub ped_side: Vec<f64>,
    pub ped_speed: Vec<f64>,
    /// Along-path distance from the crossing at which the walk starts [m].
    pub ped_trigger: Vec<f64>,
    pub ped_lateral: f64,
    /// Distance each pedestrian walks before standing still [m]; equal to
    /// `ped_lateral` they stop on the path, twice it they cross fully.
    pub ped_span: f64,
    pub ped_span_jitter: f64,
    /// Half-width of the uniform jitter on each crossing point [m].
    pub ped_jitter: f64,
    pub ped_speed_jitter: f64,

    pub sigma_v: f64,
    pub sigma_o: f64,
    /// How long one pedestrian measurement error persists [s]. Zero redraws
    /// it every tick.
    pub ped_noise_hold: f64,
    pub p_samples: usize,
    pub q_samples: usize,

    pub kappa: f64,
    /// Safety buffer between the two bodies [m].
    pub ds: f64,
    pub lookahead: f64,
    pub window: usize,
    pub budget: usize,
    pub delta: f64,
    /// Risk cap; derived from the window certificate when unset.
    pub nu_bar: Option<f64>,
    pub rho_nu: f64,
    pub epsilon: f64,
    pub epsilon_ladder: Vec<f64>,
    pub bounds: InputBounds,
    pub mpc: MpcConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let filt = FilterConfig::default();
        Self {
            method: Method::Ft,
            seed: 1,
            ts: 0.02,
            max_steps: 4000,
            path_length: 110.0,
            path_file: None,
            goal_tolerance: 1.0,
            collision_distance: 2.8,
            n_pedestrians: 3,
            ped_s: vec![30.0, 55.0, 80.0],
            ped_side: vec![1.0, -1.0, 1.0],
            ped_speed: vec![1.4],
            ped_trigger: vec![25.0],
            ped_lateral: 8.0,
            ped_span: 5.0,
            ped_span_jitter: 1.5,
            ped_jitter: 2.0,
            ped_speed_jitter: 0.2,
            sigma_v: 0.1,
            sigma_o: 5.0,
            ped_noise_hold: 0.5,
            p_samples: 10,
            q_samples: 10,
            kappa: 1.0,
            ds: 3.0,
            lookahead: riskgate_core::barrier::DEFAULT_LOOKAHEAD,
            window: 5,
            budget: 1,
            delta: 1.0,
            nu_bar: None,
            rho_nu: filt.rho_nu,
            epsilon: filt.epsilon,
            epsilon_ladder: filt.epsilon_ladder,
            bounds: InputBounds::default(),
            mpc: MpcConfig::default(),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, SimError> {
    v.trim()
        .parse()
        .map_err(|_| SimError::Config(format!("{key}: cannot parse '{}'", v.trim())))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>, SimError> {
    v.split(',').map(|x| num(key, x)).collect()
}

impl ScenarioConfig {
    /// Defaults overridden by the settings in `text`.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            SimError::Config(m) => SimError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // Relative path files resolve against the config's directory.
        if let (Some(p), Some(dir)) = (cfg.path_file.as_ref(), path.parent()) {
            if p.is_relative() {
                cfg.path_file = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), SimError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SimError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| SimError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), SimError> {
        match key {
            "method" => self.method = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "ts" => self.ts = num(key, v)?,
            "max_steps" => self.max_steps = num(key, v)?,
            "path_length" => self.path_length = num(key, v)?,
            "path_file" => self.path_file = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "goal_tolerance" => self.goal_tolerance = num(key, v)?,
            "collision_distance" => self.collision_distance = num(key, v)?,
            "n_pedestrians" => self.n_pedestrians = num(key, v)?,
            "ped_s" => self.ped_s = list(key, v)?,
            "ped_side" => self.ped_side = list(key, v)?,
            "ped_speed" => self.ped_speed = list(key, v)?,
            "ped_trigger" => self.ped_trigger = list(key, v)?,
            "ped_lateral" => self.ped_lateral = num(key, v)?,
            "ped_span" => self.ped_span = num(key, v)?,
            "ped_span_jitter" => self.ped_span_jitter = num(key, v)?,
            "ped_jitter" => self.ped_jitter = num(key, v)?,
            "ped_speed_jitter" => self.ped_speed_jitter = num(key, v)?,
            "sigma_v" => self.sigma_v = num(key, v)?,
            "sigma_o" => self.sigma_o = num(key, v)?,
            "ped_noise_hold" => self.ped_noise_hold = num(key, v)?,
            "p_samples" => self.p_samples = num(key, v)?,
            "q_samples" => self.q_samples = num(key, v)?,
            "kappa" => self.kappa = num(key, v)?,
            "ds" => self.ds = num(key, v)?,
            "lookahead" => self.lookahead = num(key, v)?,
            "window" => self.window = num(key, v)?,
            "budget" => self.budget = num(key, v)?,
            "delta" => self.delta = num(key, v)?,
            "nu_bar" => {
                self.nu_bar = if v.eq_ignore_ascii_case("auto") { None } else { Some(num(key, v)?) }
            }
            "rho_nu" => self.rho_nu = num(key, v)?,
            "epsilon" => self.epsilon = num(key, v)?,
            "epsilon_ladder" => self.epsilon_ladder = list(key, v)?,
            "v_min" => self.bounds.v_min = num(key, v)?,
            "v_max" => self.bounds.v_max = num(key, v)?,
            "omega_max" => self.bounds.omega_max = num(key, v)?,
            "mpc_horizon" => self.mpc.horizon = num(key, v)?,
            "mpc_w_pos" => self.mpc.w_pos = num(key, v)?,
            "mpc_w_head" => self.mpc.w_head = num(key, v)?,
            "mpc_w_u" => self.mpc.w_u = num(key, v)?,
            "mpc_w_du" => self.mpc.w_du = num(key, v)?,
            "mpc_ts" => self.mpc.ts = num(key, v)?,
            "v_ref" => self.mpc.v_ref = num(key, v)?,
            _ => return Err(SimError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Per-pedestrian value `j` of a broadcastable list.
    pub fn ped_value(list: &[f64], j: usize) -> f64 {
        if list.len() == 1 {
            list[0]
        } else {
            list[j]
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(1..=3).contains(&self.n_pedestrians) && self.n_pedestrians != 0 {
            return bad(format!("n_pedestrians = {} (0..=3)", self.n_pedestrians));
        }
        for (name, l) in [
            ("ped_s", &self.ped_s),
            ("ped_side", &self.ped_side),
            ("ped_speed", &self.ped_speed),
            ("ped_trigger", &self.ped_trigger),
        ] {
            if l.is_empty() || (l.len() != 1 && l.len() < self.n_pedestrians) {
                return bad(format!("{name} has {} entries for {} pedestrians", l.len(), self.n_pedestrians));
            }
            if l.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.p_samples == 0 || self.q_samples == 0 {
            return bad("p_samples and q_samples must be at least 1".into());
        }
        for (name, x) in [
            ("sigma_v", self.sigma_v),
            ("sigma_o", self.sigma_o),
            ("ped_noise_hold", self.ped_noise_hold),
            ("ped_jitter", self.ped_jitter),
            ("ped_speed_jitter", self.ped_speed_jitter),
            ("ped_lateral", self.ped_lateral),
            ("ped_span", self.ped_span),
            ("ped_span_jitter", self.ped_span_jitter),
            ("goal_tolerance", self.goal_tolerance),
            ("collision_distance", self.collision_distance),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return bad(format!("{name} = {x} must be finite and non-negative"));
            }
        }
        if !(self.ts.is_finite() && self.ts > 0.0) || self.max_steps == 0 {
            return bad(format!("ts = {}, max_steps = {}", self.ts, self.max_steps));
        }
        if self.path_file.is_none() && !(self.path_length.is_finite() && self.path_length > 0.0) {
            return bad(format!("path_length = {}", self.path_length));
        }
        self.mpc.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.filter_config(FilterKind::Rccbf)?.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.budget_config()?;
        Ok(())
    }

    /// The barrier keeps centres `ds` beyond touching, so its radius is the
    /// buffer plus both body radii.
    pub fn barrier_params(&self) -> Result<BarrierParams, SimError> {
        BarrierParams::new(self.kappa, self.ds + self.collision_distance, self.ts)
            .and_then(|b| b.with_lookahead(self.lookahead))
            .map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn budget_config(&self) -> Result<RiskBudgetConfig, SimError> {
        let bp = self.barrier_params()?;
        let mut cfg = RiskBudgetConfig::derived(self.window, self.budget, self.delta, &bp)
            .map_err(|e| SimError::Config(e.to_string()))?;
        if let Some(nu) = self.nu_bar {
            cfg.nu_bar = nu;
            cfg.validate().map_err(|e| SimError::Config(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn filter_config(&self, kind: FilterKind) -> Result<FilterConfig, SimError> {
        let nu_bar = self.budget_config()?.nu_bar;
        Ok(FilterConfig {
            rho_nu: self.rho_nu,
            epsilon: self.epsilon,
            // An unbounded cap only matters to the relaxed CVaR filter.
            nu_bar: if nu_bar.is_finite() { nu_bar } else { f64::MAX },
            kind,
            epsilon_ladder: self.epsilon_ladder.clone(),
            bounds: self.bounds,
        })
    }

    pub fn supervisor_config(&self, trigger: Trigger) -> Result<SupervisorConfig, SimError> {
        Ok(SupervisorConfig {
            trigger,
            rcbf: self.filter_config(FilterKind::Rcbf)?,
            cvar: self.filter_config(FilterKind::Rccbf)?,
            budget: self.budget_config()?,
            barrier: self.barrier_params()?,
        })
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig { bounds: self.bounds, ..self.mpc }
    }

    pub fn reference_path(&self) -> Result<ReferencePath, SimError> {
        match &self.path_file {
            Some(p) => ReferencePath::from_csv(p).map_err(|e| SimError::Config(e.to_string())),
            None => ReferencePath::straight(self.path_length).map_err(|e| SimError::Config(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let nu = cfg.budget_config().unwrap().nu_bar;
        assert!((nu - 3.8).abs() < 0.05);
    }

    #[test]
    fn parses_keys_comments_and_lists() {
        let cfg = ScenarioConfig::parse(
            "# scenario\nmethod = qt\nsigma_o = 3   # box\nped_s = 10, 20\nn_pedestrians = 2\nnu_bar = auto\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Qt);
        assert_eq!(cfg.sigma_o, 3.0);
        assert_eq!(cfg.ped_s, vec![10.0, 20.0]);
        assert_eq!(cfg.nu_bar, None);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ScenarioConfig::parse("colour = red").is_err());
        assert!(ScenarioConfig::parse("sigma_o").is_err());
        assert!(ScenarioConfig::parse("sigma_o = lots").is_err());
        let err = ScenarioConfig::parse("a\n\nsigma_o = x").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn validation_catches_inconsistency() {
        let mut cfg = ScenarioConfig { n_pedestrians: 3, ped_s: vec![1.0, 2.0], ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg.ped_s = vec![5.0];
        cfg.validate().unwrap();
        assert!(ScenarioConfig { p_samples: 0, ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { sigma_o: -1.0, ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { budget: 9, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("cbf".parse::<Method>().is_err());
    }
}
