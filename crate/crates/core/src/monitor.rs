//! Bad-step bookkeeping and the window certificate.
//!
//! Over a window of `W` steps with at most `M` bad steps, the comparison
//! recursion `h_{j+1} ≥ μ h_j + c r_j` with good steps `r ≥ δ` and bad steps
//! `r ≥ −ν̄` keeps the terminal barrier nonnegative iff
//! `μ^M (1 − μ^{W−M}) δ ≥ (1 − μ^M) ν̄`.

use crate::barrier::BarrierParams;
use crate::{CoreError, Result};

/// Largest window accepted by [`brute_force_window_min`].
pub const MAX_BRUTE_FORCE_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBudgetConfig {
    pub w: usize,
    pub m: usize,
    pub delta: f64,
    pub nu_bar: f64,
    pub mu: f64,
    pub c: f64,
}

impl RiskBudgetConfig {
    /// Config whose cap is the largest one the certificate admits.
    pub fn derived(w: usize, m: usize, delta: f64, bp: &BarrierParams) -> Result<Self> {
        let nu_bar = nu_cap(w, m, delta, bp.mu)?;
        let cfg = Self { w, m, delta, nu_bar, mu: bp.mu, c: bp.c };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.m > self.w {
            return Err(CoreError::InvalidParameter(format!(
                "window W = {}, budget M = {}",
                self.w, self.m
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(CoreError::InvalidParameter(format!("delta = {}", self.delta)));
        }
        if self.nu_bar.is_nan() || self.nu_bar < 0.0 {
            return Err(CoreError::InvalidParameter(format!("nu_bar = {}", self.nu_bar)));
        }
        check_mu(self.mu)?;
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(CoreError::InvalidParameter(format!("c = {}", self.c)));
        }
        Ok(())
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu < 1.0 {
        Ok(())
    } else {
        Err(CoreError::InvalidParameter(format!("mu = {mu} outside (0, 1)")))
    }
}

/// Largest admissible cap `δ μ^M (1 − μ^{W−M}) / (1 − μ^M)`.
///
/// `M = 0` has no bad steps to bound and returns `+∞`; `M = W` returns 0.
pub fn nu_cap(w: usize, m: usize, delta: f64, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    if w == 0 || m > w {
        return Err(CoreError::InvalidParameter(format!("W = {w}, M = {m}")));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(CoreError::InvalidParameter(format!("delta = {delta}")));
    }
    if m == 0 {
        return Ok(f64::INFINITY);
    }
    if m == w {
        return Ok(0.0);
    }
    let mu_m = mu.powi(m as i32);
    Ok(delta * mu_m * (1.0 - mu.powi((w - m) as i32)) / (1.0 - mu_m))
}

/// `μ^M (1 − μ^{W−M}) δ ≥ (1 − μ^M) ν̄`, up to rounding, so the cap from
/// [`nu_cap`] always passes its own certificate.
pub fn certificate_holds(w: usize, m: usize, delta: f64, nu_bar: f64, mu: f64) -> bool {
    let mu_m = mu.powi(m as i32);
    let lhs = mu_m * (1.0 - mu.powi(w.saturating_sub(m) as i32)) * delta;
    let rhs = (1.0 - mu_m) * nu_bar;
    // 0·∞ for M = 0 with an infinite cap: no bad steps, nothing to bound.
    let rhs = if rhs.is_nan() { 0.0 } else { rhs };
    lhs >= rhs - CERTIFICATE_RTOL * lhs.abs().max(rhs.abs())
}

const CERTIFICATE_RTOL: f64 = 1e-12;

/// `Σ_{l=lo}^{hi−1} μ^l`.
fn geometric(mu: f64, lo: usize, hi: usize) -> f64 {
    (lo..hi).map(|l| mu.powi(l as i32)).sum()
}

/// Worst-case terminal value `μ^W h0 + c[δ Σ_{l=M}^{W−1} μ^l − ν̄ Σ_{l=0}^{M−1} μ^l]`.
pub fn worst_case_terminal_bound(h0: f64, cfg: &RiskBudgetConfig) -> f64 {
    cfg.mu.powi(cfg.w as i32) * h0 + worst_case_window_deposit(cfg)
}

/// The same bound with the `μ^W h0 ≥ 0` term dropped.
pub fn worst_case_window_deposit(cfg: &RiskBudgetConfig) -> f64 {
    let good = cfg.delta * geometric(cfg.mu, cfg.m, cfg.w);
    let bad = if cfg.m == 0 { 0.0 } else { cfg.nu_bar * geometric(cfg.mu, 0, cfg.m) };
    cfg.c * (good - bad)
}

/// Exhaustive minimum of `h_{j+1} = μ h_j + c v_j` over every placement of at
/// most `M` bad steps (`v = −ν̄`) among `W` (others `v = δ`).
///
/// Returns the minimum and its placement (`true` = bad). Among equal minima
/// the first placement in mask order wins.
pub fn brute_force_window_min(
    h0: f64,
    w: usize,
    m: usize,
    delta: f64,
    nu_bar: f64,
    mu: f64,
    c: f64,
) -> Result<(f64, Vec<bool>)> {
    if w == 0 || w > MAX_BRUTE_FORCE_WINDOW {
        return Err(CoreError::InvalidParameter(format!(
            "W = {w} outside 1..={MAX_BRUTE_FORCE_WINDOW}"
        )));
    }
    if m > w {
        return Err(CoreError::InvalidParameter(format!("M = {m} > W = {w}")));
    }
    let mut best = (f64::INFINITY, 0u32);
    for mask in 0u32..(1u32 << w) {
        if mask.count_ones() as usize > m {
            continue;
        }
        let mut h = h0;
        for j in 0..w {
            let v = if mask & (1 << j) != 0 { -nu_bar } else { delta };
            h = mu * h + c * v;
        }
        if h < best.0 {
            best = (h, mask);
        }
    }
    let placement = (0..w).map(|j| best.1 & (1 << j) != 0).collect();
    Ok((best.0, placement))
}

/// `b_k = 1` iff `ν_k > ν̄` or `r_min,k < δ`.
pub fn classify_step(nu: f64, r_min: f64, cfg: &RiskBudgetConfig) -> bool {
    nu > cfg.nu_bar || r_min < cfg.delta
}

/// Ring of the last `W` bad-step bits and their count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorState {
    ring: Vec<bool>,
    /// Slot holding the oldest bit.
    head: usize,
    m: usize,
    k: u64,
}

impl MonitorState {
    /// All-zero ring: the first `W` steps count only observed bad steps.
    pub fn new(w: usize) -> Self {
        assert!(w >= 1, "window must be at least one step");
        Self { ring: vec![false; w], head: 0, m: 0, k: 0 }
    }

    /// Ring contents from oldest to newest.
    pub fn from_bits(bits: &[bool]) -> Self {
        assert!(!bits.is_empty(), "window must be at least one step");
        Self {
            ring: bits.to_vec(),
            head: 0,
            m: bits.iter().filter(|&&b| b).count(),
            k: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.m
    }

    pub fn steps(&self) -> u64 {
        self.k
    }

    pub fn window(&self) -> usize {
        self.ring.len()
    }

    /// Bits from oldest to newest.
    pub fn bits(&self) -> Vec<bool> {
        let w = self.ring.len();
        (0..w).map(|i| self.ring[(self.head + i) % w]).collect()
    }
}

/// `m_k = m_{k−1} + b_k − b_{k−W}`; returns the new count.
pub fn window_update(st: &mut MonitorState, b: bool) -> usize {
    let evicted = st.ring[st.head];
    st.ring[st.head] = b;
    st.head = (st.head + 1) % st.ring.len();
    st.m = st.m + b as usize - evicted as usize;
    st.k += 1;
    st.m
}
