use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, ExperimentConfig, MetricsSummary, RunOutcome};
use crate::comms;
use crate::grid_env::Departure;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub episode: usize,
    /// Episode reward summed over steps, averaged over agents.
    pub mean_reward: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub train_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureRow {
    pub episode: usize,
    pub agent: usize,
    pub final_soc: f64,
    pub soc_target: f64,
    pub success: bool,
}

impl DepartureRow {
    pub fn new(episode: usize, d: &Departure) -> Self {
        Self {
            episode,
            agent: d.agent,
            final_soc: d.final_soc,
            soc_target: d.soc_target,
            success: d.success(),
        }
    }
}

/// `summary.json`: the metrics plus the exact config that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub summary: MetricsSummary,
    pub config: ExperimentConfig,
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(super) fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &RunOutcome, checkpoints: &[Checkpoint]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join("stability.csv"), &run.stability)?;
    write_csv(&dir.join("evaluation.csv"), &run.evaluation)?;
    write_csv(&dir.join("departures.csv"), &run.departures)?;
    write_csv(&dir.join("training.csv"), &run.training)?;
    let load = dir.join("network_load.csv");
    let f = fs::File::create(&load).map_err(|e| Error::io(&load, e))?;
    comms::write_network_load(f, &run.network, &run.messages)?;
    let scaling = dir.join("messages_vs_n.csv");
    let f = fs::File::create(&scaling).map_err(|e| Error::io(&scaling, e))?;
    comms::write_scaling(f, &run.scaling)?;
    let summary = SummaryFile {
        summary: run.summary.clone(),
        config: cfg.clone(),
    };
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    if !checkpoints.is_empty() {
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        for c in checkpoints {
            let p = ck.join(format!("episode_{:04}.json", c.episode));
            fs::write(&p, serde_json::to_string(c)?).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}
