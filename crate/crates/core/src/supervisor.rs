//! Switching between the relaxed CBF and the relaxed CVaR-CBF.
//!
//! Every tick first solves the relaxed CBF on measured states. Its slack and
//! residual feed the bad-step monitor whatever mode ends up applied, so the
//! bad-step stream does not depend on the trigger.

use riskgate_qp::QpSolver;

use crate::barrier::BarrierParams;
use crate::dynamics::ControlInput;
use crate::filters::{cvar_cbf_filter, rcbf_filter, FilterConfig, FilterResult, MeasuredScene, StochasticScene};
use crate::monitor::{classify_step, window_update, MonitorState, RiskBudgetConfig};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterMode {
    Rcbf = 0,
    Cvar = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trigger {
    /// Switch when the relaxed CBF loses feasibility and the budget is spent.
    Feasibility,
    /// Switch whenever the budget is spent.
    Quality,
}

/// CVaR iff `a = 0 ∧ m ≥ M`. The two combinations the rule leaves open,
/// `a = 0 ∧ m < M` and `a = 1 ∧ m ≥ M`, stay on the relaxed CBF.
pub fn ft_mode(feasible: bool, m: usize, budget: usize) -> FilterMode {
    if !feasible && m >= budget {
        FilterMode::Cvar
    } else {
        FilterMode::Rcbf
    }
}

/// CVaR iff `m ≥ M`.
pub fn qt_mode(m: usize, budget: usize) -> FilterMode {
    if m >= budget {
        FilterMode::Cvar
    } else {
        FilterMode::Rcbf
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorConfig {
    pub trigger: Trigger,
    /// Relaxed CBF settings (its `kind` is ignored).
    pub rcbf: FilterConfig,
    /// CVaR filter settings, normally the relaxed CVaR-CBF.
    pub cvar: FilterConfig,
    pub budget: RiskBudgetConfig,
    pub barrier: BarrierParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub mode_used: FilterMode,
    /// Result of the filter whose command was applied.
    pub result: FilterResult,
    /// The relaxed-CBF probe solved at the start of the tick.
    pub probe: FilterResult,
    pub bad: bool,
    pub m: usize,
    pub u_applied: ControlInput,
    /// CVaR mode was selected and both its solve and the probe were
    /// infeasible.
    pub both_infeasible: bool,
}

/// One supervised control tick. The stochastic scene is only read in CVaR
/// mode.
pub fn supervise_tick(
    measured: &MeasuredScene,
    stochastic: &StochasticScene,
    u_nom: ControlInput,
    cfg: &SupervisorConfig,
    monitor: &mut MonitorState,
    solver: &mut QpSolver,
) -> Result<TickOutcome> {
    let probe = rcbf_filter(u_nom, measured, &cfg.rcbf, &cfg.barrier, solver)?;
    let bad = classify_step(probe.nu, probe.r_min, &cfg.budget);
    let m = window_update(monitor, bad);
    let mode = match cfg.trigger {
        Trigger::Feasibility => ft_mode(probe.feasible, m, cfg.budget.m),
        Trigger::Quality => qt_mode(m, cfg.budget.m),
    };
    let result = match mode {
        FilterMode::Rcbf => probe.clone(),
        FilterMode::Cvar => cvar_cbf_filter(u_nom, stochastic, &cfg.cvar, &cfg.barrier, solver)?,
    };
    // A failed CVaR solve still yields its least-violating command; that is
    // what the selected controller asks for, so it is applied and flagged.
    let both_infeasible = mode == FilterMode::Cvar && !result.feasible && !probe.feasible;
    let u_applied = result.u_safe;
    Ok(TickOutcome { mode_used: mode, u_applied, result, probe, bad, m, both_infeasible })
}
