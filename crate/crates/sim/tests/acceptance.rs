//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. `RISKGATE_ACCEPT_RUNS` overrides the Monte-Carlo run count (100).

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskgate_core::barrier::BarrierParams;
use riskgate_core::dynamics::{ControlInput, InputBounds, PedestrianState, VehicleState};
use riskgate_core::filters::{
    cvar_cbf_filter, cvar_estimate, rcbf_filter, FilterConfig, FilterKind, MeasuredScene, ObstacleSamples,
    StochasticScene,
};
use riskgate_core::monitor::{
    brute_force_window_min, certificate_holds, nu_cap, worst_case_terminal_bound, RiskBudgetConfig,
};
use riskgate_core::qp::{kkt_report, QpProblem, QpSolver, QpStatus};
use riskgate_sim::{emit_results, monte_carlo, AggregateMetrics, Method, ScenarioConfig};

struct Suite {
    failed: Vec<String>,
}

impl Suite {
    fn check(&mut self, id: &str, what: &str, ok: bool, detail: String) {
        println!("{} {id:<3} {what}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(id.to_owned());
        }
    }
}

fn bp() -> BarrierParams {
    BarrierParams::new(1.0, 3.0, 0.02).unwrap()
}

// ------------------------------------------------------------------ 1

fn cap_reproduction(s: &mut Suite) {
    let mu = bp().mu;
    let cases = [(1.0, 3.80, 0.05), (0.1, 0.38, 0.005), (2.0, 7.6, 0.1)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (delta, want, tol) in cases {
        let got = nu_cap(5, 1, delta, mu).unwrap();
        ok &= (got - want).abs() <= tol;
        detail.push(format!("delta={delta} -> {got:.4}"));
    }
    s.check("1", "risk cap", ok, detail.join(", "));
}

// ------------------------------------------------------------------ 2

fn random_budget(rng: &mut ChaCha8Rng, w_max: usize) -> (usize, usize, f64, f64, f64) {
    let w = rng.random_range(2..=w_max);
    let m = rng.random_range(1..w);
    let mu = rng.random_range(0.5..0.9999);
    let delta = rng.random_range(0.01..5.0);
    let c = rng.random_range(0.001..1.0);
    (w, m, mu, delta, c)
}

/// Scalar recursion over an explicit residual sequence.
fn recurse(h0: f64, mu: f64, c: f64, r: &[f64]) -> f64 {
    r.iter().fold(h0, |h, &v| mu * h + c * v)
}

fn certificate_soundness(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut unsound, mut loose) = (f64::INFINITY, 0, 0);
    for _ in 0..10_000 {
        let (w, m, mu, delta, c) = random_budget(&mut rng, 10);
        let nu_bar = nu_cap(w, m, delta, mu).unwrap();
        if !certificate_holds(w, m, delta, nu_bar, mu) {
            unsound += 1;
        }
        // Extreme sequences: every placement of ≤ M bad steps at the bounds.
        let h0 = rng.random_range(0.0..5.0);
        let (min, _) = brute_force_window_min(h0, w, m, delta, nu_bar, mu, c).unwrap();
        worst = worst.min(min);
        // Random admissible sequences: good r ≥ δ, bad r ≥ −ν̄.
        for _ in 0..5 {
            let mut bad: Vec<bool> = (0..w).map(|j| j < m).collect();
            for j in (1..w).rev() {
                bad.swap(j, rng.random_range(0..=j));
            }
            let k = rng.random_range(0..=m);
            let mut seen = 0;
            let r: Vec<f64> = bad
                .iter()
                .map(|&b| {
                    let b = b && {
                        seen += 1;
                        seen <= k
                    };
                    let slack = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..2.0) };
                    if b {
                        -nu_bar + slack
                    } else {
                        delta + slack
                    }
                })
                .collect();
            worst = worst.min(recurse(h0, mu, c, &r));
        }
        // Tightness: a slightly larger cap admits a violating sequence from 0.
        let inflated = nu_bar * 1.001;
        let (min, _) = brute_force_window_min(0.0, w, m, delta, inflated, mu, c).unwrap();
        if min >= 0.0 || certificate_holds(w, m, delta, inflated, mu) {
            loose += 1;
        }
    }
    s.check(
        "2",
        "window certificate",
        worst >= -1e-9 && unsound == 0 && loose == 0,
        format!("10000 configs, min terminal h {worst:.3e}, unsound {unsound}, not tight {loose}"),
    );
}

// ------------------------------------------------------------------ 3

fn worst_case_oracle(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut err, mut misplaced, mut cases) = (0.0f64, 0, 0);
    for w in 2..=8 {
        for m in 1..w {
            for _ in 0..20 {
                let mu = rng.random_range(0.5..0.9999);
                let delta = rng.random_range(0.01..5.0);
                let nu_bar = rng.random_range(0.01..5.0);
                let c = rng.random_range(0.001..1.0);
                let h0 = rng.random_range(0.0..5.0);
                let cfg = RiskBudgetConfig { w, m, delta, nu_bar, mu, c };
                let (min, placement) = brute_force_window_min(h0, w, m, delta, nu_bar, mu, c).unwrap();
                err = err.max((min - worst_case_terminal_bound(h0, &cfg)).abs());
                if placement.iter().enumerate().any(|(j, &b)| b != (j >= w - m)) {
                    misplaced += 1;
                }
                cases += 1;
            }
        }
    }
    s.check(
        "3",
        "worst-case placement",
        err <= 1e-12 && misplaced == 0,
        format!("{cases} cases, max |brute - closed form| {err:.2e}, non-trailing argmin {misplaced}"),
    );
}

// ------------------------------------------------------------------ 4

/// Sorted tail average with a fractional boundary weight.
fn tail_average(z: &[f64], eps: f64) -> f64 {
    let mut z = z.to_vec();
    z.sort_by(|a, b| b.total_cmp(a));
    let mass = (1.0 - eps) * z.len() as f64;
    let (mut left, mut acc) = (mass, 0.0);
    for &zi in &z {
        let take = left.min(1.0);
        if take <= 0.0 {
            break;
        }
        acc += take * zi;
        left -= take;
    }
    acc / mass
}

/// Smallest sample with empirical CDF at least ε.
fn value_at_risk(z: &[f64], eps: f64) -> f64 {
    let mut z = z.to_vec();
    z.sort_by(f64::total_cmp);
    let i = z.iter().enumerate().position(|(i, _)| (i + 1) as f64 >= eps * z.len() as f64 - 1e-12);
    z[i.unwrap_or(z.len() - 1)]
}

fn cvar_equivalence(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut err, mut below_var) = (0.0f64, 0);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=200);
        let eps = rng.random_range(0.001..0.999);
        let z: Vec<f64> = if rng.random_bool(0.2) {
            // Heavy ties.
            (0..n).map(|_| rng.random_range(-3..3) as f64).collect()
        } else {
            (0..n).map(|_| rng.random_range(-50.0..50.0)).collect()
        };
        let (cv, _) = cvar_estimate(&z, eps).unwrap();
        err = err.max((cv - tail_average(&z, eps)).abs());
        if cv < value_at_risk(&z, eps) - 1e-12 {
            below_var += 1;
        }
    }
    s.check(
        "4",
        "CVaR estimator",
        err <= 1e-9 && below_var == 0,
        format!("10000 sets, max |estimate - tail average| {err:.2e}, CVaR < VaR {below_var}"),
    );
}

// ------------------------------------------------------------------ 5

fn unit_problems() -> Vec<(&'static str, QpProblem)> {
    let slack = QpProblem::new(dmatrix![1.0, 0.0; 0.0, 2.0], dvector![-1.0, 0.0])
        .with_inequalities(dmatrix![-1.0, -1.0], dvector![-2.0])
        .with_bounds(dvector![f64::NEG_INFINITY, 0.0], dvector![f64::INFINITY, f64::INFINITY]);
    let mut fixed = slack.clone();
    fixed.lb[1] = 0.25;
    fixed.ub[1] = 0.25;
    let mut v = vec![
        ("slack", slack),
        ("projection", QpProblem::new(DMatrix::identity(3, 3), dvector![-0.3, 2.0, -7.5])),
        (
            "semidefinite",
            QpProblem::new(dmatrix![2.0, 0.0; 0.0, 0.0], dvector![0.0, 1.0])
                .with_inequalities(dmatrix![-1.0, -1.0], dvector![-1.0])
                .with_bounds(dvector![f64::NEG_INFINITY, 0.0], dvector![f64::INFINITY, f64::INFINITY]),
        ),
        ("fixed", fixed),
        ("epigraph", epigraph_problem()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        v.push(("random", random_problem(&mut rng)));
    }
    v
}

/// Sample-average tail constraint in epigraph form, 100 scenarios.
fn epigraph_problem() -> QpProblem {
    let s = 100;
    let n = 4 + s;
    let mut h = DMatrix::zeros(n, n);
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = 100.0;
    let mut f = DVector::zeros(n);
    f[0] = -5.0;
    f[1] = -0.1;
    let mut a = DMatrix::zeros(1 + s, n);
    let mut b = DVector::zeros(1 + s);
    a[(0, 3)] = 1.0;
    a[(0, 2)] = -1.0;
    for i in 0..s {
        a[(0, 4 + i)] = 1.0 / (0.05 * s as f64);
        a[(1 + i, 0)] = 0.9 - 0.01 * (i % 7) as f64;
        a[(1 + i, 1)] = -0.3 * (i as f64 * 0.37).sin();
        a[(1 + i, 3)] = -1.0;
        a[(1 + i, 4 + i)] = -1.0;
        b[1 + i] = 2.0 + 0.05 * i as f64;
    }
    let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n, f64::INFINITY);
    (lb[0], ub[0], lb[1], ub[1], lb[2], ub[2]) = (0.0, 8.0, -0.5, 0.5, 0.0, 3.8);
    for i in 0..s {
        lb[4 + i] = 0.0;
    }
    QpProblem::new(h, f).with_inequalities(a, b).with_bounds(lb, ub)
}

/// Convex QP with a known strictly feasible point.
fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
    let n: usize = rng.random_range(1..12);
    let m = rng.random_range(0..15);
    let rank = n.saturating_sub(2).max(1);
    let bm = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-1.0..1.0));
    let h = bm.transpose() * bm;
    let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let b = &a * &x0 + DVector::from_fn(m, |_, _| rng.random_range(0.1..1.1));
    QpProblem::new(h, f)
        .with_inequalities(a, b)
        .with_bounds(DVector::from_element(n, -2.0), DVector::from_element(n, 2.0))
}

fn qp_checks(s: &mut Suite) {
    let mut solver = QpSolver::default();
    let mut bad = Vec::new();
    let problems = unit_problems();
    for (name, p) in &problems {
        let sol = solver.solve(p).unwrap();
        let rep = kkt_report(p, &sol.x, &sol.multipliers);
        let ok = sol.status == QpStatus::Optimal
            && rep.primal <= 1e-8
            && rep.dual <= 1e-8
            && rep.stationarity <= 1e-6
            && rep.complementarity <= 1e-6;
        if !ok {
            bad.push(format!("{name} {rep:?}"));
        }
    }
    // The relaxed filter on the scalar scene: g = (1, 0), offset −2, ρ = 1.
    let scene = MeasuredScene {
        vehicle: VehicleState::new(0.0, 0.0, 0.0),
        pedestrians: vec![PedestrianState::new(0.5 - 4.0, 0.0, 3.0, 0.0)],
    };
    let cfg = FilterConfig {
        rho_nu: 1.0,
        kind: FilterKind::Rcbf,
        bounds: InputBounds { v_min: -100.0, v_max: 100.0, omega_max: 100.0 },
        ..FilterConfig::default()
    };
    let r = rcbf_filter(ControlInput::new(1.0, 0.0), &scene, &cfg, &bp(), &mut solver).unwrap();
    let hand = (r.u_safe.v - 5.0 / 3.0).abs().max(r.u_safe.omega.abs()).max((r.nu - 1.0 / 3.0).abs());
    s.check(
        "5",
        "QP KKT and hand example",
        bad.is_empty() && hand <= 1e-6,
        format!(
            "{} problems, {} outside KKT bounds{}; (u, nu) = ({:.9}, {:.9})",
            problems.len(),
            bad.len(),
            bad.first().map(|b| format!(" e.g. {b}")).unwrap_or_default(),
            r.u_safe.v,
            r.nu
        ),
    );
}

// ------------------------------------------------------------------ 6

fn single_sample_identity(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut solver = QpSolver::default();
    let cfg = FilterConfig { nu_bar: 1e9, ..FilterConfig::default() };
    let mut err = 0.0f64;
    for _ in 0..100 {
        let veh = VehicleState::new(0.0, rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
        let ped = PedestrianState::new(
            rng.random_range(4.0..15.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let u_nom = ControlInput::new(rng.random_range(0.0..8.0), rng.random_range(-0.5..0.5));
        let det = MeasuredScene { vehicle: veh, pedestrians: vec![ped] };
        let sto = StochasticScene {
            heading: veh.theta,
            vehicle_samples: vec![veh.position()],
            obstacles: vec![ObstacleSamples { positions: vec![ped.position()], velocity: ped.velocity() }],
        };
        let a = rcbf_filter(u_nom, &det, &cfg, &bp(), &mut solver).unwrap();
        let b = cvar_cbf_filter(u_nom, &sto, &cfg, &bp(), &mut solver).unwrap();
        err = err.max((a.u_safe.v - b.u_safe.v).abs()).max((a.u_safe.omega - b.u_safe.omega).abs());
    }
    s.check("6", "single-sample identity", err <= 1e-6, format!("100 scenes, max command gap {err:.2e}"));
}

// ------------------------------------------------------------------ 7, 8

fn batch(method: Method, delta: f64, runs: usize) -> AggregateMetrics {
    let cfg = ScenarioConfig { method, delta, ..ScenarioConfig::default() };
    let t0 = Instant::now();
    let a = monte_carlo(&cfg, runs, false).unwrap().aggregate();
    let opt = |x: Option<f64>| x.map_or("-".to_owned(), |v| format!("{v:.3}"));
    println!(
        "     {:<6} delta={delta:<4} SR={:.3} MDP={} IR={} CT={}ms CTE={} CVaR={}  [{:.0}s]",
        method.to_string(),
        a.sr,
        opt(a.mdp),
        opt(a.ir),
        opt(a.ct_ms),
        opt(a.cte),
        opt(a.cvar_rate),
        t0.elapsed().as_secs_f64()
    );
    a
}

fn lt(a: Option<f64>, b: Option<f64>) -> bool {
    matches!((a, b), (Some(a), Some(b)) if a < b)
}

fn le(a: Option<f64>, b: Option<f64>) -> bool {
    matches!((a, b), (Some(a), Some(b)) if a <= b)
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".to_owned(), |v| format!("{v:.3}"))
}

fn table_trends(s: &mut Suite, runs: usize) -> BTreeMap<Method, AggregateMetrics> {
    println!("     {runs} runs per method, 3 pedestrians, sigma_v=0.1, sigma_o=5");
    let t: BTreeMap<Method, AggregateMetrics> = Method::ALL.iter().map(|&m| (m, batch(m, 1.0, runs))).collect();
    let g = |m: Method| &t[&m];

    let r = g(Method::Rcbf).sr;
    let others = Method::ALL.iter().filter(|&&m| m != Method::Rcbf);
    s.check(
        "7a",
        "SR(R-CBF) is the minimum",
        others.clone().all(|&m| g(m).sr >= r),
        format!(
            "R-CBF {r:.2}; {}",
            others.map(|&m| format!("{m} {:.2}", g(m).sr)).collect::<Vec<_>>().join(" ")
        ),
    );
    let hi = [Method::Ccbf, Method::Rccbf, Method::Qt];
    s.check(
        "7b",
        "SR >= 0.90 for C-CBF, RC-CBF, QT",
        hi.iter().all(|&m| g(m).sr >= 0.9),
        hi.iter().map(|&m| format!("{m} {:.2}", g(m).sr)).collect::<Vec<_>>().join(" "),
    );
    let ft = g(Method::Ft).mdp;
    s.check(
        "7c",
        "MDP(C-CBF), MDP(RC-CBF) > MDP(FT)",
        lt(ft, g(Method::Ccbf).mdp) && lt(ft, g(Method::Rccbf).mdp),
        format!("FT {} C-CBF {} RC-CBF {}", opt(ft), opt(g(Method::Ccbf).mdp), opt(g(Method::Rccbf).mdp)),
    );
    let (a, b, c) = (g(Method::Ft).cte, g(Method::Qt).cte, g(Method::Rccbf).cte);
    s.check(
        "7d",
        "CTE(FT) <= CTE(QT) <= CTE(RC-CBF)",
        le(a, b) && le(b, c),
        format!("FT {} QT {} RC-CBF {}", opt(a), opt(b), opt(c)),
    );
    let (a, b, c) = (g(Method::Ft).ct_ms, g(Method::Qt).ct_ms, g(Method::Rccbf).ct_ms);
    s.check(
        "7e",
        "CT(FT), CT(QT) < CT(RC-CBF)",
        lt(a, c) && lt(b, c),
        format!("FT {}ms QT {}ms RC-CBF {}ms", opt(a), opt(b), opt(c)),
    );
    t
}

fn delta_trends(s: &mut Suite, runs: usize, at_one: &BTreeMap<Method, AggregateMetrics>) {
    let mut rows = Vec::new();
    for delta in [0.1, 1.0, 2.0] {
        let (ft, qt) = if delta == 1.0 {
            (at_one[&Method::Ft].clone(), at_one[&Method::Qt].clone())
        } else {
            (batch(Method::Ft, delta, runs), batch(Method::Qt, delta, runs))
        };
        rows.push((delta, ft, qt));
    }
    let rate = |a: &AggregateMetrics| a.cvar_rate.unwrap_or(0.0);
    let monotone = rows.windows(2).all(|w| rate(&w[0].2) <= rate(&w[1].2));
    let above = rows.iter().all(|(_, ft, qt)| rate(qt) > rate(ft));
    let sr = rows.iter().all(|(_, ft, qt)| qt.sr >= ft.sr);
    let detail = rows
        .iter()
        .map(|(d, ft, qt)| format!("delta={d}: CVaR FT {:.3} QT {:.3}, SR FT {:.2} QT {:.2}", rate(ft), rate(qt), ft.sr, qt.sr))
        .collect::<Vec<_>>()
        .join("; ");
    s.check("8", "trigger-rate and SR trends in delta", monotone && above && sr, detail);
}

// ------------------------------------------------------------------ 9

fn determinism(s: &mut Suite) {
    let mut same = true;
    for method in [Method::Rcbf, Method::Rccbf, Method::Ft, Method::Qt] {
        let cfg = ScenarioConfig { method, seed: 99, ..ScenarioConfig::default() };
        let bytes: Vec<Vec<u8>> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                emit_results(dir.path(), &monte_carlo(&cfg, 3, false).unwrap()).unwrap();
                std::fs::read(dir.path().join("runs.csv")).unwrap()
            })
            .collect();
        same &= bytes[0] == bytes[1];
    }
    s.check("9", "byte-identical replay", same, "runs.csv for rcbf, rccbf, ft, qt, 3 runs each".to_owned());
}

fn main() {
    let runs = std::env::var("RISKGATE_ACCEPT_RUNS").ok().and_then(|v| v.parse().ok()).unwrap_or(100);
    let mut s = Suite { failed: Vec::new() };
    cap_reproduction(&mut s);
    certificate_soundness(&mut s);
    worst_case_oracle(&mut s);
    cvar_equivalence(&mut s);
    qp_checks(&mut s);
    single_sample_identity(&mut s);
    determinism(&mut s);
    let t = table_trends(&mut s, runs);
    delta_trends(&mut s, runs, &t);
    if s.failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failed {}", s.failed.join(", "));
        std::process::exit(1);
    }
}
