use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use riskgate_sim::{emit_results, monte_carlo, Method, ScenarioConfig, SimError};

#[derive(Parser)]
#[command(name = "riskgate", version, about = "Risk-budgeted CBF switching: Monte-Carlo pedestrian crossings")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a batch of episodes and write the result files.
    Run {
        /// Flat key = value scenario file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long = "sigma-o")]
        sigma_o: Option<f64>,
        #[arg(long)]
        peds: Option<usize>,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write trace.jsonl with every tick of every run.
        #[arg(long)]
        trace: bool,
        /// Extra overrides, `key=value`, applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn build_config(
    config: Option<PathBuf>,
    method: Option<String>,
    sigma_o: Option<f64>,
    peds: Option<usize>,
    seed: Option<u64>,
    set: &[String],
) -> Result<ScenarioConfig, SimError> {
    let mut cfg = match config {
        Some(p) => ScenarioConfig::from_file(&p)?,
        None => ScenarioConfig::default(),
    };
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| SimError::Config(format!("--set expects key=value, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(m) = method {
        cfg.method = m.parse::<Method>()?;
    }
    if let Some(s) = sigma_o {
        cfg.sigma_o = s;
    }
    if let Some(n) = peds {
        cfg.n_pedestrians = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Cmd::Run { config, method, sigma_o, peds, runs, seed, out, trace, set } = cli.cmd;
    let cfg = match build_config(config, method, sigma_o, peds, seed, &set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = monte_carlo(&cfg, runs, trace).and_then(|mc| emit_results(&out, &mc).map(|_| mc));
    match result {
        Ok(mc) => {
            let a = mc.aggregate();
            let show = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
            println!(
                "{} sigma_o={} peds={} runs={}: SR={:.3} MDP={} IR={} CT={}ms CTE={} CVaR={}",
                cfg.method,
                cfg.sigma_o,
                cfg.n_pedestrians,
                a.runs,
                a.sr,
                show(a.mdp),
                show(a.ir),
                show(a.ct_ms),
                show(a.cte),
                show(a.cvar_rate)
            );
            ExitCode::SUCCESS
        }
        Err(e) if e.is_config() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
