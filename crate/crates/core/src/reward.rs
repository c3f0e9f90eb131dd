//! Hierarchical reward: a shared grid-level term blended with each agent's
//! local SoC-satisfaction and revenue terms.

use serde::{Deserialize, Serialize};

use crate::grid_env::{EvState, StepRecord, DT_HOURS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight of the shared global term, in `[0, 1]`.
    pub w_global: f64,
    /// Scale of the p_grid variance penalty (per kW²).
    pub alpha: f64,
    /// Scale of the renewable utilisation bonus.
    pub beta: f64,
    pub c_success: f64,
    pub c_fail: f64,
    /// Length of the trailing p_grid window (steps).
    pub window: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_global: 0.5,
            alpha: 0.05,
            beta: 10.0,
            c_success: 10.0,
            c_fail: 10.0,
            window: 6,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("reward: {m}")));
        if !(0.0..=1.0).contains(&self.w_global) {
            return bad("w_global must lie in [0, 1]");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be >= 0");
        }
        if !(self.c_success > 0.0 && self.c_fail > 0.0) {
            return bad("c_success and c_fail must be > 0");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        Ok(())
    }
}

/// Population variance; zero for a single element.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Shared grid term: `-alpha * Var(window) + beta * used / available`.
/// With nothing available the utilisation ratio counts as 1.
pub fn global_reward(p_grid_window: &[f64], used: f64, available: f64, cfg: &RewardConfig) -> f64 {
    let ratio = if available > 0.0 { used / available } else { 1.0 };
    -cfg.alpha * population_variance(p_grid_window) + cfg.beta * ratio
}

/// Money earned over `dt` hours. `a` follows the action convention (positive
/// charges the EV), so the sold power is `-a`.
pub fn revenue_reward(price: f64, a: f64, dt: f64) -> f64 {
    let p_flow = -a;
    price * p_flow * dt
}

/// `+c_success` if the departing EV reached its target, else `-c_fail`.
pub fn soc_terminal_reward(ev: &EvState, soc_target: f64, cfg: &RewardConfig) -> Result<f64> {
    if !ev.departed_this_episode {
        return Err(Error::NotDeparting(0));
    }
    Ok(if ev.soc >= soc_target {
        cfg.c_success
    } else {
        -cfg.c_fail
    })
}

pub fn local_reward(terminal: f64, revenue: f64, w_soc: f64) -> f64 {
    w_soc * terminal + (1.0 - w_soc) * revenue
}

pub fn combine(r_global: f64, r_local: f64, w_global: f64) -> f64 {
    w_global * r_global + (1.0 - w_global) * r_local
}

/// Per-agent rewards for one step. Agents that were away during the step get
/// nothing; a departing agent's terminal component lands on its last step.
pub fn agent_rewards(record: &StepRecord, w_soc: &[f64], cfg: &RewardConfig) -> Vec<f64> {
    let g = global_reward(
        &record.p_grid_window,
        record.renewable_used * DT_HOURS,
        record.renewable_available * DT_HOURS,
        cfg,
    );
    let mut terminal = vec![0.0; record.flows.len()];
    for d in &record.departures {
        let ev = EvState {
            soc: d.final_soc,
            plugged: false,
            t_etd: 0.0,
            departed_this_episode: true,
        };
        terminal[d.agent] = soc_terminal_reward(&ev, d.soc_target, cfg).expect("departed");
    }
    record
        .flows
        .iter()
        .enumerate()
        .map(|(i, &flow)| {
            if !record.active[i] {
                return 0.0;
            }
            let rev = revenue_reward(record.price, flow, DT_HOURS);
            combine(g, local_reward(terminal[i], rev, w_soc[i]), cfg.w_global)
        })
        .collect()
}
