use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::mean;
use super::output::write_csv;
use super::{run_experiment, ExperimentConfig, MetricsSummary, SweepParam};
use crate::learners::Algorithm;
use crate::parallel::{self, Execution};
use crate::{Error, Result};

/// Means over the seeds of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub algorithm: Algorithm,
    pub seeds: usize,
    pub renewable_utilisation_pct: f64,
    pub owner_goal_success_rate_pct: f64,
    pub aggregated_user_revenue: f64,
    pub fossil_variance: f64,
    pub fossil_energy: f64,
}

/// Runs every `(value, seed)` pair as an independent job. Seeds are
/// `base + value_index · 1000 + s`. Writes `sweep.csv` (means) and
/// `sweep_runs.csv` (one row per run) when `out` is given.
pub fn sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    seeds_per_point: usize,
    out: Option<&Path>,
    exec: Execution,
) -> Result<(Vec<SweepRow>, Vec<MetricsSummary>)> {
    if values.is_empty() || seeds_per_point == 0 {
        return Err(Error::InvalidConfig("sweep needs values and at least one seed".into()));
    }
    let base = cfg.seed()?;
    let mut jobs = Vec::new();
    for (vi, &v) in values.iter().enumerate() {
        for s in 0..seeds_per_point {
            let mut c = param.apply(cfg, v)?;
            c.seed = Some(base + vi as u64 * 1000 + s as u64);
            c.sweep = None;
            c.validate()?;
            jobs.push(c);
        }
    }
    let runs: Vec<MetricsSummary> = parallel::map(&jobs, exec, |c| {
        run_experiment(c, None, Execution::Sequential).map(|o| o.summary)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let rows: Vec<SweepRow> = values
        .iter()
        .enumerate()
        .map(|(vi, &v)| {
            let pts = &runs[vi * seeds_per_point..(vi + 1) * seeds_per_point];
            let m = |f: fn(&MetricsSummary) -> f64| mean(pts.iter().map(f));
            SweepRow {
                param: param.name().to_string(),
                value: v,
                algorithm: cfg.algorithm,
                seeds: seeds_per_point,
                renewable_utilisation_pct: m(|s| s.renewable_utilisation_pct),
                owner_goal_success_rate_pct: m(|s| s.owner_goal_success_rate_pct),
                aggregated_user_revenue: m(|s| s.aggregated_user_revenue),
                fossil_variance: m(|s| s.fossil_variance),
                fossil_energy: m(|s| s.fossil_energy),
            }
        })
        .collect();

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("sweep.csv"), &rows)?;
        #[derive(Serialize)]
        struct RunRow {
            value: f64,
            seed: u64,
            algorithm: Algorithm,
            renewable_utilisation_pct: f64,
            owner_goal_success_rate_pct: f64,
            aggregated_user_revenue: f64,
            fossil_variance: f64,
            fossil_energy: f64,
        }
        let detail: Vec<RunRow> = runs
            .iter()
            .enumerate()
            .map(|(j, s)| RunRow {
                value: values[j / seeds_per_point],
                seed: s.seed,
                algorithm: s.algorithm,
                renewable_utilisation_pct: s.renewable_utilisation_pct,
                owner_goal_success_rate_pct: s.owner_goal_success_rate_pct,
                aggregated_user_revenue: s.aggregated_user_revenue,
                fossil_variance: s.fossil_variance,
                fossil_energy: s.fossil_energy,
            })
            .collect();
        write_csv(&dir.join("sweep_runs.csv"), &detail)?;
    }
    Ok((rows, runs))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 99.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            algorithm: Algorithm::Il,
            n_agents: 2,
            episodes: 1,
            seed: Some(5),
            eval_episodes: 1,
            ..Default::default()
        };
        c.learner.minibatch_k = 4;
        c.learner.gate_multiplier = 1;
        c
    }

    #[test]
    fn singleton_sweep_equals_single_run() {
        let cfg = tiny();
        let (rows, runs) = sweep(&cfg, SweepParam::WRevenue, &[0.5], 1, None, Execution::Sequential).unwrap();
        let single = run_experiment(&SweepParam::WRevenue.apply(&cfg, 0.5).unwrap(), None, Execution::Sequential)
            .unwrap()
            .summary;
        assert_eq!(runs[0], single);
        assert_eq!(rows[0].renewable_utilisation_pct, single.renewable_utilisation_pct);
    }

    #[test]
    fn two_values_give_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (rows, _) = sweep(&tiny(), SweepParam::WRevenue, &[0.2, 0.8], 2, Some(dir.path()), Execution::Parallel).unwrap();
        assert_eq!(rows.len(), 2);
        let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }
}
