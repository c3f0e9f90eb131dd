use std::path::Path;

use serde::Deserialize;

use super::metrics::mean;
use super::output::{DepartureRow, SummaryFile, TrainingRow};
use crate::grid_env::{StepRow, DT_HOURS, STEPS_PER_EPISODE};
use crate::reward::population_variance;
use crate::{Error, Result};

/// One recomputed summary field.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub field: &'static str,
    pub reported: f64,
    pub recomputed: f64,
}

impl CheckItem {
    pub fn ok(&self) -> bool {
        let scale = self.reported.abs().max(self.recomputed.abs()).max(1.0);
        (self.reported - self.recomputed).abs() <= 1e-9 * scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn all_ok(&self) -> bool {
        self.items.iter().all(CheckItem::ok)
    }
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Deserialize)]
struct LoadRow {
    originated: u64,
}

/// Recomputes every summary field from the CSV outputs in `dir`.
pub fn check_outputs(dir: &Path) -> Result<CheckReport> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: SummaryFile = serde_json::from_str(&text)?;
    let s = &file.summary;
    let stability: Vec<StepRow> = read_csv(&dir.join("stability.csv"))?;
    let training: Vec<TrainingRow> = read_csv(&dir.join("training.csv"))?;
    let eval: Vec<StepRow> = read_csv(&dir.join("evaluation.csv"))?;
    let deps: Vec<DepartureRow> = read_csv(&dir.join("departures.csv"))?;
    let load: Vec<LoadRow> = read_csv(&dir.join("network_load.csv"))?;

    let days: Vec<Vec<f64>> = (0..s.eval_episodes)
        .map(|e| eval.iter().filter(|r| r.episode == e).map(|r| r.p_grid).collect())
        .collect();
    let used: f64 = eval.iter().map(|r| r.renewable_used).sum();
    let avail: f64 = eval.iter().map(|r| r.renewable_available).sum();
    let revenue: f64 = eval
        .iter()
        .map(|r| r.price * (r.total_discharge - r.total_charge) * DT_HOURS)
        .sum();
    let successes = deps.iter().filter(|d| d.final_soc >= d.soc_target).count();
    let total_msgs: u64 = load.iter().map(|r| r.originated).sum();
    let steps = (s.episodes * STEPS_PER_EPISODE) as f64;
    let per_step = total_msgs as f64 / steps;

    let items = vec![
        CheckItem {
            field: "stability_rows",
            reported: steps,
            recomputed: stability.len() as f64,
        },
        CheckItem {
            field: "training_rows",
            reported: s.episodes as f64,
            recomputed: training.len() as f64,
        },
        CheckItem {
            field: "evaluation_rows",
            reported: (s.eval_episodes * STEPS_PER_EPISODE) as f64,
            recomputed: eval.len() as f64,
        },
        CheckItem {
            field: "renewable_utilisation_pct",
            reported: s.renewable_utilisation_pct,
            recomputed: if avail > 0.0 { 100.0 * used / avail } else { 0.0 },
        },
        CheckItem {
            field: "owner_goal_success_rate_pct",
            reported: s.owner_goal_success_rate_pct,
            recomputed: if deps.is_empty() {
                0.0
            } else {
                100.0 * successes as f64 / deps.len() as f64
            },
        },
        CheckItem {
            field: "departures",
            reported: s.departures as f64,
            recomputed: deps.len() as f64,
        },
        CheckItem {
            field: "aggregated_user_revenue",
            reported: s.aggregated_user_revenue,
            recomputed: revenue,
        },
        CheckItem {
            field: "fossil_variance",
            reported: s.fossil_variance,
            recomputed: mean(days.iter().map(|d| population_variance(d))),
        },
        CheckItem {
            field: "fossil_energy",
            reported: s.fossil_energy,
            recomputed: mean(days.iter().map(|d| d.iter().sum::<f64>() * DT_HOURS)),
        },
        CheckItem {
            field: "messages_total",
            reported: s.messages_total as f64,
            recomputed: total_msgs as f64,
        },
        CheckItem {
            field: "messages_per_step",
            reported: s.messages_per_step,
            recomputed: per_step,
        },
        CheckItem {
            field: "final_mean_reward",
            reported: s.final_mean_reward,
            recomputed: training.last().map_or(0.0, |t| t.mean_reward),
        },
    ];
    let report = CheckReport { items };
    if let Some(bad) = report.items.iter().find(|i| !i.ok()) {
        return Err(Error::CheckFailed(format!(
            "{}: summary has {}, CSVs give {}",
            bad.field, bad.reported, bad.recomputed
        )));
    }
    Ok(report)
}
