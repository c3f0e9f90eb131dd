//! Fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod props;

use v2g_core::global_model::{GlobalModel, ModelConfig, ModelMode, NoiseTable, Snapshot};
use v2g_core::grid_env::{Dist, EvProfile, GridConfig, GridEnv, Observation};
use v2g_core::reward::{agent_rewards, RewardConfig};
use v2g_core::rng::stream;

pub fn quiet_grid() -> GridConfig {
    let mut g = GridConfig::default();
    g.base_load.noise_std = 0.0;
    g.renewable.noise_std = 0.0;
    g
}

pub fn fixed_ev(capacity: f64, rate: f64, departure: f64, soc0: f64, target: f64, w_soc: f64) -> EvProfile {
    EvProfile {
        battery_capacity: capacity,
        a_max_charge: rate,
        a_max_discharge: rate,
        eta_charge: 0.93,
        eta_discharge: 0.9,
        arrival_hour_dist: Dist::fixed(0.0),
        departure_hour_dist: Dist::fixed(departure),
        trip_energy_dist: Dist::fixed(0.0),
        initial_soc_dist: Dist::fixed(soc0),
        soc_target: target,
        w_soc,
    }
}

/// Two EVs, no exogenous noise, both plugged from hour 0.
pub fn toy_profiles() -> Vec<EvProfile> {
    vec![
        fixed_ev(40.0, 7.0, 11.0, 0.45, 0.8, 0.5),
        fixed_ev(60.0, 11.0, 17.0, 0.7, 0.6, 0.3),
    ]
}

pub fn oracle_model(grid: &GridConfig, profiles: &[EvProfile], reward: &RewardConfig) -> GlobalModel {
    let cfg = ModelConfig {
        mode: ModelMode::Oracle,
        fidelity_noise: 0.0,
    };
    GlobalModel::new(&cfg, grid, profiles, reward).unwrap()
}

/// A deterministic policy that depends on every observation field it is likely to matter on.
pub fn toy_policy(agent: usize, o: &Observation) -> f64 {
    let sign = if agent.is_multiple_of(2) { 1.0 } else { -1.0 };
    6.0 * (o.soc_target - o.soc) + sign * 2.0 * (o.renewable_available - o.base_load) + 0.1 * o.t_etd
}

/// Steps a cloned environment: `joint` first, then `policy` on the clone's observations.
pub fn env_clone_returns(
    env: &GridEnv,
    joint: &[f64],
    k: usize,
    gamma: f64,
    reward: &RewardConfig,
    policy: impl Fn(usize, &Observation) -> f64,
) -> Vec<f64> {
    let mut env = env.clone();
    let mut rng = stream(999, 0);
    let n = env.n_agents();
    let w: Vec<f64> = env.profiles().iter().map(|p| p.w_soc).collect();
    let mut per_step: Vec<Vec<f64>> = Vec::new();
    for j in 0..k {
        if env.is_done() {
            break;
        }
        let actions: Vec<f64> = if j == 0 {
            joint.to_vec()
        } else {
            let obs = env.observe_all();
            (0..n)
                .map(|i| if obs[i].is_plugged() { policy(i, &obs[i]) } else { 0.0 })
                .collect()
        };
        let rec = env.step(&actions, &mut rng).unwrap();
        per_step.push(agent_rewards(&rec, &w, reward));
    }
    (0..n)
        .map(|i| {
            let r: Vec<f64> = per_step.iter().map(|s| s[i]).collect();
            v2g_core::global_model::discounted_sum(&r, gamma)
        })
        .collect()
}

/// Largest absolute gap between model rollouts and the env-clone oracle, over
/// every start hour of one toy day and the given horizons.
pub fn rollout_oracle_gap(horizons: &[usize], gamma: f64) -> f64 {
    let grid = quiet_grid();
    let profiles = toy_profiles();
    let reward = RewardConfig::default();
    let model = oracle_model(&grid, &profiles, &reward);
    let mut env = GridEnv::new(&grid, profiles, reward.window).unwrap();
    let mut rng = stream(5, 0);
    env.reset(&mut rng);
    let policy = |i: usize, o: &Observation| toy_policy(i, o);
    let mut worst: f64 = 0.0;
    let mut hour = 0;
    while !env.is_done() {
        let obs = env.observe_all();
        let snap = Snapshot::from_observations(&env.grid_context(), &obs);
        let joint: Vec<f64> = (0..obs.len())
            .map(|i| if obs[i].is_plugged() { 4.0 - hour as f64 * 0.5 } else { 0.0 })
            .collect();
        for &k in horizons {
            let noise = NoiseTable::zeros(1, k);
            let predicted = model.rollout(&snap, &joint, k, gamma, &policy, &noise).unwrap();
            let truth = env_clone_returns(&env, &joint, k, gamma, &reward, policy);
            for (p, t) in predicted.iter().zip(&truth) {
                worst = worst.max((p - t).abs());
            }
        }
        env.step(&joint, &mut rng).unwrap();
        hour += 1;
    }
    worst
}
