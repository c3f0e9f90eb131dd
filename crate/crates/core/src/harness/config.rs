use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comms::CommsConfig;
use crate::global_model::ModelConfig;
use crate::grid_env::{FleetConfig, GridConfig};
use crate::learners::{Algorithm, LearnerConfig};
use crate::reward::RewardConfig;
use crate::{Error, Result};

/// Parameter varied by a sensitivity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Revenue weight of the local reward, `1 − w_soc`.
    WRevenue,
    WGlobal,
    KPrime,
    FidelityNoise,
    NAgents,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::WRevenue => "w_revenue",
            SweepParam::WGlobal => "w_global",
            SweepParam::KPrime => "k_prime",
            SweepParam::FidelityNoise => "fidelity_noise",
            SweepParam::NAgents => "n_agents",
        }
    }

    /// Applies `value` to a copy of `cfg`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        let whole = || -> Result<usize> {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} needs a whole number, got {value}", self.name())))
            }
        };
        match self {
            SweepParam::WRevenue => c.fleet.w_soc = 1.0 - value,
            SweepParam::WGlobal => c.reward.w_global = value,
            SweepParam::KPrime => c.learner.k_prime = whole()?,
            SweepParam::FidelityNoise => c.model.fidelity_noise = value,
            SweepParam::NAgents => c.n_agents = whole()?,
        }
        Ok(c)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::WRevenue,
            SweepParam::WGlobal,
            SweepParam::KPrime,
            SweepParam::FidelityNoise,
            SweepParam::NAgents,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep parameter `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    #[serde(default = "default_seeds_per_point")]
    pub seeds_per_point: usize,
}

fn default_seeds_per_point() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub n_agents: usize,
    pub episodes: usize,
    /// Required; there is no implicit seed.
    pub seed: Option<u64>,
    pub eval_episodes: usize,
    /// Write a checkpoint every this many episodes (0 disables).
    pub checkpoint_every: usize,
    /// Also account messages at these fleet sizes for `messages_vs_n.csv`.
    pub scaling_sizes: Vec<usize>,
    pub grid: GridConfig,
    pub fleet: FleetConfig,
    pub reward: RewardConfig,
    pub learner: LearnerConfig,
    pub model: ModelConfig,
    pub comms: CommsConfig,
    pub sweep: Option<SweepSpec>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::DtMaddpg,
            n_agents: 10,
            episodes: 300,
            seed: None,
            eval_episodes: 10,
            checkpoint_every: 0,
            scaling_sizes: vec![10, 20, 40, 80],
            grid: GridConfig::default(),
            fleet: FleetConfig::default(),
            reward: RewardConfig::default(),
            learner: LearnerConfig::default(),
            model: ModelConfig::default(),
            comms: CommsConfig::default(),
            sweep: None,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidConfig("a seed is required".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fleet.w_soc) {
            return Err(Error::InvalidConfig("fleet.w_soc must lie in [0, 1]".into()));
        }
        self.grid.resolved()?;
        self.fleet.validate()?;
        self.reward.validate()?;
        self.learner.validate()?;
        self.model.validate()?;
        self.comms.validate()?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() || s.seeds_per_point == 0 {
                return Err(Error::InvalidConfig("sweep needs values and at least one seed".into()));
            }
        }
        Ok(())
    }
}
