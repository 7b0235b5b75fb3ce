//! Per-run metrics and their success-conditioned aggregates.

use crate::config::Method;

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run: usize,
    pub seed: u64,
    pub method: Method,
    pub sigma_o: f64,
    pub n_pedestrians: usize,
    pub delta: f64,
    /// True clearance never dropped below the collision distance.
    pub success: bool,
    /// Reached the end of the path within the step cap.
    pub completed: bool,
    pub steps: usize,
    /// Smallest true centre distance over the run; infinite without
    /// pedestrians.
    pub min_dist: f64,
    /// Smallest true distance while some pedestrian was near; the MDP basis.
    pub avoid_dist: Option<f64>,
    /// Share of ticks whose applied filter was infeasible.
    pub infeasible_rate: f64,
    /// Share of ticks whose relaxed-CBF probe was infeasible, where one ran.
    pub probe_infeasible_rate: Option<f64>,
    pub mean_ct_ms: f64,
    pub max_ct_ms: f64,
    pub mean_cte: f64,
    pub cvar_rate: f64,
    pub both_infeasible_steps: usize,
    pub mpc_fallbacks: usize,
}

/// Means are over successful runs only; `None` when nothing qualifies.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub runs: usize,
    pub successes: usize,
    pub completed: usize,
    pub sr: f64,
    pub mdp: Option<f64>,
    pub ir: Option<f64>,
    pub ir_probe: Option<f64>,
    pub ct_ms: Option<f64>,
    pub cte: Option<f64>,
    pub cvar_rate: Option<f64>,
}

fn mean<I: Iterator<Item = f64>>(it: I) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(runs: &[RunMetrics]) -> AggregateMetrics {
    let ok: Vec<&RunMetrics> = runs.iter().filter(|r| r.success).collect();
    AggregateMetrics {
        runs: runs.len(),
        successes: ok.len(),
        completed: runs.iter().filter(|r| r.completed).count(),
        sr: if runs.is_empty() { 0.0 } else { ok.len() as f64 / runs.len() as f64 },
        mdp: mean(ok.iter().filter_map(|r| r.avoid_dist)),
        ir: mean(ok.iter().map(|r| r.infeasible_rate)),
        ir_probe: mean(ok.iter().filter_map(|r| r.probe_infeasible_rate)),
        ct_ms: mean(ok.iter().map(|r| r.mean_ct_ms)),
        cte: mean(ok.iter().map(|r| r.mean_cte)),
        cvar_rate: mean(ok.iter().map(|r| r.cvar_rate)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(success: bool, d: f64, ir: f64, ct: f64, cte: f64) -> RunMetrics {
        RunMetrics {
            run: 0,
            seed: 0,
            method: Method::Ft,
            sigma_o: 5.0,
            n_pedestrians: 1,
            delta: 1.0,
            success,
            completed: true,
            steps: 10,
            min_dist: d,
            avoid_dist: Some(d),
            infeasible_rate: ir,
            probe_infeasible_rate: Some(ir),
            mean_ct_ms: ct,
            max_ct_ms: ct,
            mean_cte: cte,
            cvar_rate: 0.5,
            both_infeasible_steps: 0,
            mpc_fallbacks: 0,
        }
    }

    #[test]
    fn three_successes_one_failure() {
        let runs = [
            run(true, 6.0, 0.1, 2.0, 1.0),
            run(true, 7.0, 0.2, 4.0, 2.0),
            run(false, 1.0, 0.9, 90.0, 9.0),
            run(true, 8.0, 0.3, 6.0, 3.0),
        ];
        let a = aggregate(&runs);
        assert_eq!(a.successes, 3);
        assert_eq!(a.sr, 0.75);
        assert!((a.mdp.unwrap() - 7.0).abs() < 1e-12);
        assert!((a.ir.unwrap() - 0.2).abs() < 1e-12);
        assert!((a.ct_ms.unwrap() - 4.0).abs() < 1e-12);
        assert!((a.cte.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_successes_reports_absent_means() {
        let a = aggregate(&[run(false, 1.0, 0.5, 1.0, 1.0)]);
        assert_eq!(a.sr, 0.0);
        assert_eq!(a.mdp, None);
        assert_eq!(a.cte, None);
        let empty = aggregate(&[]);
        assert_eq!((empty.runs, empty.sr, empty.ir), (0, 0.0, None));
    }

    #[test]
    fn single_run_aggregate_is_the_run() {
        let r = run(true, 6.5, 0.25, 3.0, 1.5);
        let a = aggregate(std::slice::from_ref(&r));
        assert_eq!(a.mdp, r.avoid_dist);
        assert_eq!(a.ir, Some(r.infeasible_rate));
        assert_eq!(a.ct_ms, Some(r.mean_ct_ms));
        assert_eq!(a.cte, Some(r.mean_cte));
    }
}
