use proptest::prelude::*;
use riskgate_core::barrier::BarrierParams;
use riskgate_core::monitor::{
    brute_force_window_min, certificate_holds, nu_cap, window_update, worst_case_terminal_bound,
    worst_case_window_deposit, MonitorState, RiskBudgetConfig,
};

#[test]
fn published_caps() {
    let bp = BarrierParams::new(1.0, 3.0, 0.02).unwrap();
    let cap = |delta| nu_cap(5, 1, delta, bp.mu).unwrap();
    assert!((cap(1.0) - 3.80).abs() <= 0.05, "{}", cap(1.0));
    assert!((cap(0.1) - 0.38).abs() <= 0.005, "{}", cap(0.1));
    assert!((cap(2.0) - 7.6).abs() <= 0.1, "{}", cap(2.0));
    // Independent evaluation of the geometric-sum form.
    let mu = (-0.02f64).exp();
    let good: f64 = (1..5).map(|l| mu.powi(l)).sum();
    assert!((cap(1.0) - good).abs() < 1e-12);
}

#[test]
fn derived_config_is_tight() {
    let bp = BarrierParams::new(1.0, 3.0, 0.02).unwrap();
    let cfg = RiskBudgetConfig::derived(5, 1, 1.0, &bp).unwrap();
    assert!(worst_case_window_deposit(&cfg).abs() < 1e-15);
    assert!(certificate_holds(cfg.w, cfg.m, cfg.delta, cfg.nu_bar, cfg.mu));
    assert!(!certificate_holds(cfg.w, cfg.m, cfg.delta, cfg.nu_bar * (1.0 + 1e-6), cfg.mu));
}

#[test]
fn ten_step_stream_matches_direct_sum() {
    let bits = [true, false, true, true, false, false, false, true, false, true];
    let mut st = MonitorState::new(4);
    for (k, &b) in bits.iter().enumerate() {
        let m = window_update(&mut st, b);
        let lo = (k + 1).saturating_sub(4);
        let direct = bits[lo..=k].iter().filter(|&&x| x).count();
        assert_eq!(m, direct, "step {k}");
    }
}

/// Lemma oracle over random configs and every `W ≤ 8`.
#[test]
fn enumeration_matches_closed_form_bound() {
    let mut seed = 0x9e3779b97f4a7c15u64;
    let mut rnd = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64
    };
    for w in 1..=8usize {
        for m in 1..w {
            for _ in 0..20 {
                let mu = 0.05 + 0.9 * rnd();
                let c = 0.1 + rnd();
                let delta = 0.01 + 2.0 * rnd();
                let nu_bar = 5.0 * rnd();
                let h0 = 3.0 * rnd();
                let cfg = RiskBudgetConfig { w, m, delta, nu_bar, mu, c };
                let (min, at) = brute_force_window_min(h0, w, m, delta, nu_bar, mu, c).unwrap();
                let closed = worst_case_terminal_bound(h0, &cfg);
                assert!((min - closed).abs() < 1e-12, "W={w} M={m}: {min} vs {closed}");
                let trailing: Vec<bool> = (0..w).map(|j| j >= w - m).collect();
                assert_eq!(at, trailing, "W={w} M={m}");
            }
        }
    }
}

proptest! {
    #[test]
    fn window_tracks_naive_sum(w in 1usize..12, bits in prop::collection::vec(any::<bool>(), 0..80)) {
        let mut st = MonitorState::new(w);
        let mut hist = Vec::new();
        for b in bits {
            hist.push(b);
            let m = window_update(&mut st, b);
            let lo = hist.len().saturating_sub(w);
            prop_assert_eq!(m, hist[lo..].iter().filter(|&&x| x).count());
            prop_assert_eq!(st.bits().iter().filter(|&&x| x).count(), m);
            prop_assert!(m <= w);
        }
    }

    #[test]
    fn cap_makes_certificate_an_equality(w in 2usize..15, m_frac in 0.0..1.0f64, mu in 0.01..0.99f64, delta in 0.01..5.0f64) {
        let m = 1 + ((w - 1) as f64 * m_frac) as usize;
        let m = m.min(w - 1);
        let cap = nu_cap(w, m, delta, mu).unwrap();
        let mu_m = mu.powi(m as i32);
        let lhs = mu_m * (1.0 - mu.powi((w - m) as i32)) * delta;
        let rhs = (1.0 - mu_m) * cap;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        prop_assert!(certificate_holds(w, m, delta, cap, mu));
        prop_assert!(!certificate_holds(w, m, delta, cap * (1.0 + 1e-6), mu));
    }

    /// The undropped bound is never weaker than the dropped one.
    #[test]
    fn undropped_bound_dominates(h0 in 0.0..10.0f64, w in 1usize..10, mu in 0.01..0.99f64, delta in 0.01..3.0f64, nu in 0.0..5.0f64) {
        let cfg = RiskBudgetConfig { w, m: w / 2, delta, nu_bar: nu, mu, c: 0.3 };
        prop_assert!(worst_case_terminal_bound(h0, &cfg) >= worst_case_window_deposit(&cfg));
    }
}
