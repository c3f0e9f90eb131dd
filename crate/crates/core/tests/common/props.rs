//! Property checks driven through proptest's runner so they can be reported
//! individually by the acceptance target as well as asserted by `properties.rs`.

use proptest::prelude::any;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2g_core::comms::ba_generate;
use v2g_core::grid_env::{sample_ev_profile, EvProfile, FleetConfig, GridConfig, GridEnv, StepRecord};
use v2g_core::replay::{ReplayBuffer, Transition};
use v2g_core::rng::stream;

const TOL: f64 = 1e-9;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn fleet(seed: u64, n: usize) -> Vec<EvProfile> {
    let mut rng = stream(seed, 1);
    (0..n)
        .map(|_| sample_ev_profile(&mut rng, &FleetConfig::default()).unwrap())
        .collect()
}

/// One day under arbitrary (often out-of-range) actions.
/// Each entry holds the SoCs before and after the step and its record.
type DayLog = Vec<(Vec<f64>, Vec<f64>, StepRecord)>;

fn play_day(seed: u64, n: usize, action_seed: u64) -> (GridEnv, DayLog) {
    let profiles = fleet(seed, n);
    let mut env = GridEnv::new(&GridConfig::default(), profiles, 6).unwrap();
    let mut env_rng = stream(seed, 2);
    let mut act_rng = ChaCha8Rng::seed_from_u64(action_seed);
    env.reset(&mut env_rng);
    let mut out = Vec::new();
    while !env.is_done() {
        let socs: Vec<f64> = env.evs().iter().map(|e| e.soc).collect();
        let actions: Vec<f64> = env
            .evs()
            .iter()
            .map(|e| if e.plugged { act_rng.random_range(-40.0..40.0) } else { 0.0 })
            .collect();
        let rec = env.step(&actions, &mut env_rng).unwrap();
        let after: Vec<f64> = env.evs().iter().map(|e| e.soc).collect();
        out.push((socs, after, rec));
    }
    (env, out)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn soc_bounds() -> Result<(), String> {
    runner(64)
        .run(&(any::<u64>(), 1usize..8, any::<u64>()), |(seed, n, aseed)| {
            let profiles = fleet(seed, n);
            let mut env = GridEnv::new(&GridConfig::default(), profiles.clone(), 6).unwrap();
            let mut env_rng = stream(seed, 2);
            let mut act_rng = ChaCha8Rng::seed_from_u64(aseed);
            env.reset(&mut env_rng);
            while !env.is_done() {
                let actions: Vec<f64> = (0..n).map(|_| act_rng.random_range(-40.0..40.0)).collect();
                let plugged: Vec<bool> = env.evs().iter().map(|e| e.plugged).collect();
                let rec = env.step(&actions, &mut env_rng).unwrap();
                for (i, ev) in env.evs().iter().enumerate() {
                    check((0.0..=1.0).contains(&ev.soc), || format!("soc {} out of [0,1]", ev.soc))?;
                    let f = rec.flows[i];
                    check(f <= profiles[i].a_max_charge + TOL && f >= -profiles[i].a_max_discharge - TOL, || {
                        format!("flow {f} exceeds rate limits")
                    })?;
                    check(plugged[i] || f == 0.0, || "unplugged agent exchanged power".into())?;
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn energy_balance() -> Result<(), String> {
    runner(64)
        .run(&(any::<u64>(), 1usize..8, any::<u64>()), |(seed, n, aseed)| {
            let (env, steps) = play_day(seed, n, aseed);
            let profiles = env.profiles();
            for (before, after, rec) in &steps {
                let charge: f64 = rec.flows.iter().filter(|f| **f > 0.0).sum();
                let discharge: f64 = rec.flows.iter().filter(|f| **f < 0.0).map(|f| -f).sum();
                check((charge - rec.total_charge).abs() < TOL, || "charge total".into())?;
                check((discharge - rec.total_discharge).abs() < TOL, || "discharge total".into())?;
                let served = (rec.base_load + charge - discharge).max(0.0);
                check((rec.renewable_used + rec.p_grid - served).abs() < TOL, || {
                    format!("supply {} + {} != demand {served}", rec.renewable_used, rec.p_grid)
                })?;
                check(
                    (rec.renewable_used + rec.curtailment - rec.renewable_available).abs() < TOL,
                    || "renewable split".into(),
                )?;
                check(rec.p_grid >= 0.0 && rec.renewable_used >= 0.0, || "negative supply".into())?;
                // battery side: stored energy change matches the grid-side flow through the efficiency
                for (i, f) in rec.flows.iter().enumerate() {
                    if *f == 0.0 || !rec.active[i] {
                        continue;
                    }
                    let p = &profiles[i];
                    let stored = if *f > 0.0 { f * p.eta_charge } else { f / p.eta_discharge };
                    let delta = (after[i] - before[i]) * p.battery_capacity;
                    check((delta - stored).abs() < 1e-7, || format!("stored {delta} kWh, flow implies {stored}"))?;
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn determinism() -> Result<(), String> {
    runner(32)
        .run(&(any::<u64>(), 1usize..6, any::<u64>()), |(seed, n, aseed)| {
            let (_, a) = play_day(seed, n, aseed);
            let (_, b) = play_day(seed, n, aseed);
            check(a == b, || "same seed gave different trajectories".into())
        })
        .map_err(|e| e.to_string())
}

fn tagged(tag: usize) -> Transition {
    let env = GridEnv::new(&GridConfig::default(), fleet(0, 1), 6).unwrap();
    Transition {
        obs: env.observe_all(),
        actions: vec![tag as f64],
        rewards: vec![0.0],
        next_obs: env.observe_all(),
        done: vec![false],
        grid: env.grid_context(),
        next_grid: env.grid_context(),
    }
}

pub fn replay_fifo() -> Result<(), String> {
    runner(64)
        .run(&(1usize..40, 0usize..120), |(cap, pushes)| {
            let mut buf = ReplayBuffer::new(cap).unwrap();
            for t in 0..pushes {
                buf.push(tagged(t)).unwrap();
            }
            check(buf.len() == pushes.min(cap), || "length".into())?;
            let kept: Vec<usize> = buf.iter().map(|t| t.actions[0] as usize).collect();
            let expect: Vec<usize> = (pushes.saturating_sub(cap)..pushes).collect();
            check(kept == expect, || format!("kept {kept:?}, expected {expect:?}"))
        })
        .map_err(|e| e.to_string())
}

pub fn replay_sampling() -> Result<(), String> {
    runner(64)
        .run(&(1usize..50, 1usize..60, any::<u64>()), |(len, k, seed)| {
            let mut buf = ReplayBuffer::new(100).unwrap();
            for t in 0..len {
                buf.push(tagged(t)).unwrap();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match buf.sample_indices(k, &mut rng) {
                Ok(idx) => {
                    check(k <= len, || "sampled more than stored".into())?;
                    check(idx.len() == k && idx.iter().all(|i| *i < len), || "index range".into())
                }
                Err(_) => check(k > len, || "sampling failed on a large enough buffer".into()),
            }
        })
        .map_err(|e| e.to_string())?;
    // uniformity: chi-square over 10 slots
    let mut buf = ReplayBuffer::new(10).unwrap();
    for t in 0..10 {
        buf.push(tagged(t)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut counts = [0usize; 10];
    let draws = 20_000;
    for _ in 0..draws {
        counts[buf.sample_indices(1, &mut rng).unwrap()[0]] += 1;
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    // 9 degrees of freedom, p = 0.001
    if chi2 < 27.88 {
        Ok(())
    } else {
        Err(format!("chi-square {chi2:.2} rejects uniform sampling"))
    }
}

pub fn ba_edges() -> Result<(), String> {
    runner(128)
        .run(&(1usize..6, 0usize..5, 0usize..60, any::<u64>()), |(m, extra, grow, seed)| {
            let m0 = m + extra;
            let n = m0 + grow;
            let topo = ba_generate(n, m0, m, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let expect = m0 * (m0 - 1) / 2 + (n - m0) * m;
            check(topo.edge_count() == expect, || format!("{} edges, expected {expect}", topo.edge_count()))?;
            check(topo.is_connected(), || "disconnected".into())?;
            check((0..n).all(|v| !topo.has_edge(v, v)), || "self loop".into())
        })
        .map_err(|e| e.to_string())
}

pub fn all() -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("soc_bounds", soc_bounds()),
        ("energy_balance", energy_balance()),
        ("determinism", determinism()),
        ("replay_fifo", replay_fifo()),
        ("replay_sampling", replay_sampling()),
        ("ba_edge_count", ba_edges()),
    ]
}
