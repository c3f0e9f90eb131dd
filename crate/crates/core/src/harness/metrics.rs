use serde::{Deserialize, Serialize};

use crate::grid_env::{Departure, StepRecord, DT_HOURS};
use crate::learners::Algorithm;
use crate::reward::{population_variance, revenue_reward};

/// `100 · Σ renewable_used / Σ renewable_available`; 0 when nothing was
/// available.
pub fn utilisation(records: &[StepRecord]) -> f64 {
    let used: f64 = records.iter().map(|r| r.renewable_used * DT_HOURS).sum();
    let avail: f64 = records.iter().map(|r| r.renewable_available * DT_HOURS).sum();
    if avail > 0.0 {
        100.0 * used / avail
    } else {
        0.0
    }
}

/// Percentage of departures at or above target; 0 with no departures.
pub fn success_rate(departures: &[Departure]) -> f64 {
    if departures.is_empty() {
        return 0.0;
    }
    let ok = departures.iter().filter(|d| d.success()).count();
    100.0 * ok as f64 / departures.len() as f64
}

/// Total owner income: revenue over every agent and step.
pub fn aggregated_revenue(records: &[StepRecord]) -> f64 {
    records
        .iter()
        .flat_map(|r| r.flows.iter().map(move |&a| revenue_reward(r.price, a, DT_HOURS)))
        .sum()
}

/// Mean over episodes of the population variance of each day's p_grid.
pub fn fossil_variance(days: &[Vec<f64>]) -> f64 {
    mean(days.iter().map(|d| population_variance(d)))
}

/// Mean over episodes of each day's total grid energy (kWh).
pub fn fossil_energy(days: &[Vec<f64>]) -> f64 {
    mean(days.iter().map(|d| d.iter().sum::<f64>() * DT_HOURS))
}

pub(crate) fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Headline numbers of one run, computed on the evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub algorithm: Algorithm,
    pub n_agents: usize,
    pub episodes: usize,
    pub seed: u64,
    pub eval_episodes: usize,
    pub renewable_utilisation_pct: f64,
    pub owner_goal_success_rate_pct: f64,
    pub departures: usize,
    pub aggregated_user_revenue: f64,
    pub fossil_variance: f64,
    pub fossil_energy: f64,
    pub messages_total: u64,
    pub messages_per_step: f64,
    pub messages_per_agent_per_step: f64,
    pub max_node_share_pct: f64,
    pub node_share_gini: f64,
    pub node_share_pct: Vec<f64>,
    pub final_mean_reward: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(used: f64, avail: f64) -> StepRecord {
        StepRecord {
            step: 0,
            price: 0.6542,
            base_load: 0.0,
            renewable_available: avail,
            renewable_used: used,
            p_grid: 0.0,
            curtailment: 0.0,
            total_charge: 0.0,
            total_discharge: 0.0,
            flows: vec![],
            active: vec![],
            departures: vec![],
            p_grid_window: vec![],
        }
    }

    #[test]
    fn utilisation_examples() {
        assert_eq!(utilisation(&[rec(3.0, 3.0), rec(1.0, 1.0)]), 100.0);
        assert_eq!(utilisation(&[rec(0.0, 5.0)]), 0.0);
        assert_eq!(utilisation(&[rec(1.0, 2.0), rec(2.0, 4.0), rec(3.0, 6.0)]), 50.0);
    }

    #[test]
    fn success_examples() {
        let d = |soc: f64| Departure {
            agent: 0,
            final_soc: soc,
            soc_target: 0.8,
        };
        assert_eq!(success_rate(&[d(0.9), d(0.8)]), 100.0);
        assert_eq!(success_rate(&[d(0.1)]), 0.0);
        assert_eq!(success_rate(&[d(0.9), d(0.9), d(0.9), d(0.1)]), 75.0);
    }

    #[test]
    fn revenue_examples() {
        assert_eq!(aggregated_revenue(&[rec(0.0, 0.0)]), 0.0);
        let mut r = rec(0.0, 0.0);
        r.flows = vec![-2.0];
        assert!((aggregated_revenue(&[r.clone()]) - 1.3084).abs() < 1e-12);
        let mut back = r.clone();
        back.flows = vec![2.0];
        assert_eq!(aggregated_revenue(&[back, r]), 0.0);
    }

    #[test]
    fn fossil_examples() {
        let days = vec![vec![1.0, 3.0], vec![2.0, 2.0]];
        assert_eq!(fossil_variance(&days), 0.5);
        assert_eq!(fossil_energy(&days), 4.0);
    }
}
