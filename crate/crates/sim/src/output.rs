//! Result files.
//!
//! `runs.csv` carries nothing timing-dependent, so it is byte-identical for
//! a given config and seed. Solve times go to `timing.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::episode::StepRecord;
use crate::metrics::{aggregate, RunMetrics};
use crate::{MonteCarlo, SimError};

pub const RUNS_HEADER: [&str; 17] = [
    "run",
    "seed",
    "method",
    "sigma_o",
    "n_pedestrians",
    "delta",
    "success",
    "completed",
    "steps",
    "min_dist",
    "avoid_dist",
    "infeasible_rate",
    "probe_infeasible_rate",
    "mean_cte",
    "cvar_rate",
    "both_infeasible_steps",
    "mpc_fallbacks",
];

pub const TIMING_HEADER: [&str; 5] = ["run", "seed", "method", "mean_ct_ms", "max_ct_ms"];

pub const SUMMARY_HEADER: [&str; 14] = [
    "method",
    "sigma_o",
    "n_pedestrians",
    "delta",
    "runs",
    "successes",
    "completed",
    "sr",
    "mdp",
    "ir",
    "ir_probe",
    "ct_ms",
    "cte",
    "cvar_rate",
];

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SimError + '_ {
    move |e| SimError::Io { path: path.to_path_buf(), source: e }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SimError + '_ {
    move |e| SimError::Csv { path: path.to_path_buf(), message: e.to_string() }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn runs_row(r: &RunMetrics) -> Vec<String> {
    vec![
        r.run.to_string(),
        r.seed.to_string(),
        r.method.to_string(),
        r.sigma_o.to_string(),
        r.n_pedestrians.to_string(),
        r.delta.to_string(),
        r.success.to_string(),
        r.completed.to_string(),
        r.steps.to_string(),
        r.min_dist.to_string(),
        opt(r.avoid_dist),
        r.infeasible_rate.to_string(),
        opt(r.probe_infeasible_rate),
        r.mean_cte.to_string(),
        r.cvar_rate.to_string(),
        r.both_infeasible_steps.to_string(),
        r.mpc_fallbacks.to_string(),
    ]
}

/// Summary rows grouped by (method, σ_o, pedestrians, δ) in first-seen order.
pub fn summary_rows(runs: &[RunMetrics]) -> Vec<Vec<String>> {
    let mut keys: Vec<(String, String, usize, String)> = Vec::new();
    for r in runs {
        let k = (r.method.to_string(), r.sigma_o.to_string(), r.n_pedestrians, r.delta.to_string());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let group: Vec<RunMetrics> = runs
                .iter()
                .filter(|r| {
                    r.method.to_string() == k.0
                        && r.sigma_o.to_string() == k.1
                        && r.n_pedestrians == k.2
                        && r.delta.to_string() == k.3
                })
                .cloned()
                .collect();
            let a = aggregate(&group);
            vec![
                k.0,
                k.1,
                k.2.to_string(),
                k.3,
                a.runs.to_string(),
                a.successes.to_string(),
                a.completed.to_string(),
                a.sr.to_string(),
                opt(a.mdp),
                opt(a.ir),
                opt(a.ir_probe),
                opt(a.ct_ms),
                opt(a.cte),
                opt(a.cvar_rate),
            ]
        })
        .collect()
}

#[derive(Serialize)]
struct TraceLine<'a> {
    run: usize,
    seed: u64,
    #[serde(flatten)]
    record: &'a StepRecord,
}

/// Writes every result file under `out_dir`, creating it if needed.
pub fn emit_results(out_dir: &Path, mc: &MonteCarlo) -> Result<(), SimError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let runs: Vec<Vec<String>> = mc.runs.iter().map(runs_row).collect();
    write_csv(&out_dir.join("runs.csv"), &RUNS_HEADER, &runs)?;
    let timing: Vec<Vec<String>> = mc
        .runs
        .iter()
        .map(|r| {
            vec![r.run.to_string(), r.seed.to_string(), r.method.to_string(), r.mean_ct_ms.to_string(), r.max_ct_ms.to_string()]
        })
        .collect();
    write_csv(&out_dir.join("timing.csv"), &TIMING_HEADER, &timing)?;
    write_csv(&out_dir.join("summary.csv"), &SUMMARY_HEADER, &summary_rows(&mc.runs))?;

    if !mc.traces.is_empty() {
        let path = out_dir.join("trace.jsonl");
        let f = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(f);
        for (run, seed, trace) in &mc.traces {
            for rec in trace {
                let line = serde_json::to_string(&TraceLine { run: *run, seed: *seed, record: rec })
                    .map_err(|e| SimError::Csv { path: path.clone(), message: e.to_string() })?;
                writeln!(w, "{line}").map_err(io_err(&path))?;
            }
        }
        w.flush().map_err(io_err(&path))?;
    }

    if let Some(trace) = &mc.plot_trace {
        write_plotdata(&out_dir.join("plotdata"), trace)?;
    }
    Ok(())
}

/// Trajectory, sampled `h` band and true-state `h` of one run.
pub fn write_plotdata(dir: &Path, trace: &[StepRecord]) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let traj: Vec<Vec<String>> = trace
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.t.to_string(),
                r.vehicle[0].to_string(),
                r.vehicle[1].to_string(),
                r.vehicle[2].to_string(),
                r.mode.clone(),
            ]
        })
        .collect();
    write_csv(&dir.join("trajectory.csv"), &["k", "t", "x", "y", "theta", "mode"], &traj)?;
    let band: Vec<Vec<String>> = trace
        .iter()
        .filter_map(|r| {
            r.h_band.map(|b| vec![r.k.to_string(), r.t.to_string(), b[0].to_string(), b[1].to_string(), b[2].to_string()])
        })
        .collect();
    write_csv(&dir.join("h_band.csv"), &["k", "t", "h_mean", "h_min", "h_max"], &band)?;
    let truth: Vec<Vec<String>> = trace
        .iter()
        .filter_map(|r| r.h_true.map(|h| vec![r.k.to_string(), r.t.to_string(), h.to_string()]))
        .collect();
    write_csv(&dir.join("h_true.csv"), &["k", "t", "h_true"], &truth)
}

/// Reads `runs.csv` and `timing.csv` back into run metrics.
pub fn read_runs(dir: &Path) -> Result<Vec<RunMetrics>, SimError> {
    let runs_path: PathBuf = dir.join("runs.csv");
    let timing_path: PathBuf = dir.join("timing.csv");
    let mut rr = csv::Reader::from_path(&runs_path).map_err(csv_err(&runs_path))?;
    let mut tr = csv::Reader::from_path(&timing_path).map_err(csv_err(&timing_path))?;
    let bad = |p: &Path, what: &str| SimError::Csv { path: p.to_path_buf(), message: format!("bad field {what}") };
    let mut out = Vec::new();
    for (row, trow) in rr.records().zip(tr.records()) {
        let row = row.map_err(csv_err(&runs_path))?;
        let trow = trow.map_err(csv_err(&timing_path))?;
        let f = |i: usize| -> Result<f64, SimError> { row[i].parse().map_err(|_| bad(&runs_path, RUNS_HEADER[i])) };
        let of = |i: usize| -> Result<Option<f64>, SimError> {
            if row[i].is_empty() {
                Ok(None)
            } else {
                f(i).map(Some)
            }
        };
        let u = |i: usize| -> Result<usize, SimError> { row[i].parse().map_err(|_| bad(&runs_path, RUNS_HEADER[i])) };
        let b = |i: usize| -> Result<bool, SimError> { row[i].parse().map_err(|_| bad(&runs_path, RUNS_HEADER[i])) };
        let tf = |i: usize| -> Result<f64, SimError> { trow[i].parse().map_err(|_| bad(&timing_path, TIMING_HEADER[i])) };
        out.push(RunMetrics {
            run: u(0)?,
            seed: row[1].parse().map_err(|_| bad(&runs_path, "seed"))?,
            method: row[2].parse()?,
            sigma_o: f(3)?,
            n_pedestrians: u(4)?,
            delta: f(5)?,
            success: b(6)?,
            completed: b(7)?,
            steps: u(8)?,
            min_dist: f(9)?,
            avoid_dist: of(10)?,
            infeasible_rate: f(11)?,
            probe_infeasible_rate: of(12)?,
            mean_cte: f(13)?,
            cvar_rate: f(14)?,
            both_infeasible_steps: u(15)?,
            mpc_fallbacks: u(16)?,
            mean_ct_ms: tf(3)?,
            max_ct_ms: tf(4)?,
        });
    }
    Ok(out)
}
