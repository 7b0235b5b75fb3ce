use std::fs;
use std::path::Path;

use riskgate_sim::output::{read_runs, summary_rows, RUNS_HEADER, SUMMARY_HEADER, TIMING_HEADER};
use riskgate_sim::{emit_results, monte_carlo, Method, MonteCarlo, ScenarioConfig};

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_owned).collect()
}

fn small(method: Method) -> ScenarioConfig {
    ScenarioConfig { method, n_pedestrians: 1, path_length: 45.0, ped_s: vec![25.0], ..ScenarioConfig::default() }
}

#[test]
fn empty_batch_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let mc = MonteCarlo { runs: vec![], traces: vec![], plot_trace: None };
    emit_results(dir.path(), &mc).unwrap();
    assert_eq!(lines(&dir.path().join("runs.csv")), vec![RUNS_HEADER.join(",")]);
    assert_eq!(lines(&dir.path().join("timing.csv")), vec![TIMING_HEADER.join(",")]);
    assert_eq!(lines(&dir.path().join("summary.csv")), vec![SUMMARY_HEADER.join(",")]);
    assert!(!dir.path().join("trace.jsonl").exists());
    assert!(!dir.path().join("plotdata").exists());
}

#[test]
fn one_run_one_row_and_plot_series() {
    let dir = tempfile::tempdir().unwrap();
    let mc = monte_carlo(&small(Method::Qt), 1, true).unwrap();
    emit_results(dir.path(), &mc).unwrap();
    assert_eq!(lines(&dir.path().join("runs.csv")).len(), 2);
    assert_eq!(lines(&dir.path().join("summary.csv")).len(), 2);
    let steps = mc.runs[0].steps;
    assert_eq!(lines(&dir.path().join("trace.jsonl")).len(), steps);
    let pd = dir.path().join("plotdata");
    assert_eq!(lines(&pd.join("trajectory.csv")).len(), steps + 1);
    assert_eq!(lines(&pd.join("h_band.csv")).len(), steps + 1);
    assert_eq!(lines(&pd.join("h_true.csv")).len(), steps + 1);

    // Every trace line carries the run and the record fields.
    let first: serde_json::Value = serde_json::from_str(&lines(&dir.path().join("trace.jsonl"))[0]).unwrap();
    assert_eq!(first["run"], 0);
    assert_eq!(first["k"], 0);
    assert!(first["h_band"].is_array());
}

#[test]
fn summary_round_trips_through_runs_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = monte_carlo(&small(Method::Rcbf), 3, false).unwrap().runs;
    let mut qt = small(Method::Qt);
    qt.sigma_o = 2.0;
    runs.extend(monte_carlo(&qt, 2, false).unwrap().runs);
    let mc = MonteCarlo { runs, traces: vec![], plot_trace: None };
    emit_results(dir.path(), &mc).unwrap();

    let back = read_runs(dir.path()).unwrap();
    assert_eq!(back, mc.runs);
    let recomputed = summary_rows(&back);
    let mut rdr = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let emitted: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(emitted.len(), 2);
    assert_eq!(recomputed.len(), emitted.len());
    for (a, b) in recomputed.iter().zip(&emitted) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(p), Ok(q)) => assert!((p - q).abs() <= 1e-9, "{x} vs {y}"),
                _ => assert_eq!(x, y),
            }
        }
    }
}

#[test]
fn runs_csv_is_byte_identical_on_replay() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small(Method::Ft);
    emit_results(a.path(), &monte_carlo(&cfg, 2, false).unwrap()).unwrap();
    emit_results(b.path(), &monte_carlo(&cfg, 2, false).unwrap()).unwrap();
    assert_eq!(fs::read(a.path().join("runs.csv")).unwrap(), fs::read(b.path().join("runs.csv")).unwrap());
}

#[test]
fn unwritable_output_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let mc = MonteCarlo { runs: vec![], traces: vec![], plot_trace: None };
    let err = emit_results(&blocker.join("out"), &mc).unwrap_err();
    assert!(!err.is_config());
    assert!(err.to_string().contains("file"), "{err}");
}
