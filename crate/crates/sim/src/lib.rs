//! Closed-loop pedestrian-crossing simulations for the riskgate filters.
//!
//! A run drives a unicycle along a reference path with an MPC, passes each
//! nominal command through the configured safety filter or supervisor and
//! steps the true vehicle and pedestrians. Runs are independent and seeded
//! by `base_seed + run_index`, so a batch parallelises without changing any
//! result.

use std::path::PathBuf;

use rayon::prelude::*;

pub mod config;
pub mod episode;
pub mod metrics;
pub mod output;
pub mod sampling;

pub use config::{Method, ScenarioConfig};
pub use episode::{run_episode, Episode, StepRecord};
pub use metrics::{aggregate, AggregateMetrics, RunMetrics};
pub use output::emit_results;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] riskgate_core::CoreError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
}

impl SimError {
    pub fn is_config(&self) -> bool {
        matches!(self, SimError::Config(_))
    }
}

/// A batch of runs in run order.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub runs: Vec<RunMetrics>,
    /// `(run, seed, records)` for every run when traces were requested.
    pub traces: Vec<(usize, u64, Vec<StepRecord>)>,
    /// The first run's records, kept for the plot series.
    pub plot_trace: Option<Vec<StepRecord>>,
}

impl MonteCarlo {
    pub fn aggregate(&self) -> AggregateMetrics {
        aggregate(&self.runs)
    }
}

/// Runs `n_runs` episodes of `cfg` on the rayon pool.
pub fn monte_carlo(cfg: &ScenarioConfig, n_runs: usize, keep_traces: bool) -> Result<MonteCarlo, SimError> {
    if n_runs == 0 {
        return Err(SimError::Config("runs must be at least 1".into()));
    }
    cfg.validate()?;
    let path = cfg.reference_path()?;
    let episodes: Vec<Episode> = (0..n_runs)
        .into_par_iter()
        .map(|i| run_episode(cfg, &path, i, keep_traces || i == 0))
        .collect::<Result<_, _>>()?;
    let mut runs = Vec::with_capacity(n_runs);
    let mut traces = Vec::new();
    let mut plot_trace = None;
    for (i, ep) in episodes.into_iter().enumerate() {
        if let Some(t) = ep.trace {
            if i == 0 {
                plot_trace = Some(t.clone());
            }
            if keep_traces {
                traces.push((ep.metrics.run, ep.metrics.seed, t));
            }
        }
        runs.push(ep.metrics);
    }
    Ok(MonteCarlo { runs, traces, plot_trace })
}
