//! Collaborative global model: a one-step predictor of the joint grid/fleet
//! state assembled from per-twin battery predictors and a shared grid
//! forecaster, plus the k′-step rollout that yields the value baseline
//! `R_sim = Σ_{j=1..k′} γ^{j−1} r̂_{t+j}`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::grid_env::{
    balance, soc_update, ActionBounds, EvProfile, EvState, ExogenousProfile, GridConfig,
    GridContext, Observation, PricingSchedule, StepRecord, DT_HOURS, STEPS_PER_EPISODE,
};
use crate::reward::{self, RewardConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Cloned environment dynamics, optionally perturbed by fidelity noise.
    #[default]
    Oracle,
    /// Per-twin linear battery models and hourly grid forecasts fit online.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub mode: ModelMode,
    /// Standard deviation (kW) of the noise added to predicted exogenous values.
    pub fidelity_noise: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: ModelMode::Oracle,
            fidelity_noise: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fidelity_noise >= 0.0 && self.fidelity_noise.is_finite()) {
            return Err(Error::InvalidConfig("model: fidelity_noise must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub soc: f64,
    pub t_etd: f64,
    pub plugged: bool,
    pub soc_target: f64,
}

/// Global state as far as the model needs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub grid: GridContext,
    pub agents: Vec<AgentSnapshot>,
}

impl Snapshot {
    /// Rebuilds the global state from the agents' observations plus the shared
    /// grid fields.
    pub fn from_observations(grid: &GridContext, obs: &[Observation]) -> Self {
        Self {
            grid: grid.clone(),
            agents: obs
                .iter()
                .map(|o| AgentSnapshot {
                    soc: o.soc,
                    t_etd: o.t_etd,
                    plugged: o.is_plugged(),
                    soc_target: o.soc_target,
                })
                .collect(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.grid.hour >= STEPS_PER_EPISODE
    }
}

/// Least-squares fit of `Δsoc = c·a⁺ − d·a⁻` with a ridge prior at the
/// nominal lossless coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatteryFit {
    prior_c: f64,
    prior_d: f64,
    sxy_c: f64,
    sxx_c: f64,
    sxy_d: f64,
    sxx_d: f64,
}

/// Prior strength in kW² (one 5 kW sample).
const PRIOR_WEIGHT: f64 = 25.0;

impl BatteryFit {
    fn new(profile: &EvProfile) -> Self {
        let nominal = DT_HOURS / profile.battery_capacity;
        Self {
            prior_c: nominal,
            prior_d: nominal,
            sxy_c: 0.0,
            sxx_c: 0.0,
            sxy_d: 0.0,
            sxx_d: 0.0,
        }
    }

    fn coef_c(&self) -> f64 {
        (self.sxy_c + PRIOR_WEIGHT * self.prior_c) / (self.sxx_c + PRIOR_WEIGHT)
    }

    fn coef_d(&self) -> f64 {
        (self.sxy_d + PRIOR_WEIGHT * self.prior_d) / (self.sxx_d + PRIOR_WEIGHT)
    }

    fn observe(&mut self, a: f64, dsoc: f64) {
        if a > 0.0 {
            self.sxy_c += a * dsoc;
            self.sxx_c += a * a;
        } else if a < 0.0 {
            self.sxy_d += -a * -dsoc;
            self.sxx_d += a * a;
        }
    }
}

/// Hourly running means of observed exogenous values, falling back to the
/// configured profile for hours not yet seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridForecast {
    base_sum: [f64; 24],
    renew_sum: [f64; 24],
    count: [u64; 24],
}

impl GridForecast {
    fn new() -> Self {
        Self {
            base_sum: [0.0; 24],
            renew_sum: [0.0; 24],
            count: [0; 24],
        }
    }
}

/// Standard-normal draws for the exogenous forecasts of each rollout step.
/// Reusing a table across perturbed rollouts gives common random numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    steps: usize,
    /// `samples × steps × 2` (base load, renewable).
    draws: Vec<f64>,
}

impl NoiseTable {
    pub fn zeros(samples: usize, steps: usize) -> Self {
        Self {
            steps,
            draws: vec![0.0; samples * steps * 2],
        }
    }

    pub fn draw<R: Rng + ?Sized>(samples: usize, steps: usize, rng: &mut R) -> Self {
        Self {
            steps,
            draws: (0..samples * steps * 2).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    fn get(&self, sample: usize, step: usize) -> (f64, f64) {
        if step >= self.steps {
            return (0.0, 0.0);
        }
        let i = (sample * self.steps + step) * 2;
        (self.draws[i], self.draws[i + 1])
    }
}

/// Batched deterministic policy used inside rollouts.
pub trait Policy: Sync {
    /// Actions (kW) of `agent` for each observation. Entries for unplugged
    /// observations are ignored by the caller.
    fn act(&self, agent: usize, obs: &[Observation]) -> Vec<f64>;
}

impl<F: Fn(usize, &Observation) -> f64 + Sync> Policy for F {
    fn act(&self, agent: usize, obs: &[Observation]) -> Vec<f64> {
        obs.iter().map(|o| self(agent, o)).collect()
    }
}

/// Joint actions applied at every rollout step: `steps × samples × agents`.
pub type StepActions = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone)]
pub struct RolloutOutput {
    /// `samples × agents` discounted sums.
    pub returns: Vec<Vec<f64>>,
    pub actions: StepActions,
    /// Predicted p_grid after the first step, per sample (NaN when k′ = 0).
    pub first_p_grid: Vec<f64>,
    /// Predicted renewable utilisation ratio of the first step.
    pub first_utilisation: Vec<f64>,
}

/// Where rollout actions after the first step come from.
pub enum ActionSource<'a> {
    Policy(&'a dyn Policy),
    /// Re-evaluate only `agent` with `policy`; everyone else replays `cache`.
    /// Exact when the other agents' observations do not depend on `agent`'s
    /// first action, which holds because the exogenous forecasts and the
    /// other batteries are independent of it.
    Replay {
        cache: &'a StepActions,
        policy: &'a dyn Policy,
        agent: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    mode: ModelMode,
    noise_std: f64,
    pricing: PricingSchedule,
    base_load: ExogenousProfile,
    renewable: ExogenousProfile,
    load_norm: f64,
    renewable_norm: f64,
    reward: RewardConfig,
    profiles: Vec<EvProfile>,
    batteries: Vec<BatteryFit>,
    forecast: GridForecast,
}

impl GlobalModel {
    pub fn new(cfg: &ModelConfig, grid: &GridConfig, profiles: &[EvProfile], reward: &RewardConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = grid.resolved()?;
        Ok(Self {
            mode: cfg.mode,
            noise_std: cfg.fidelity_noise,
            pricing: grid.pricing,
            base_load: grid.base_load,
            renewable: grid.renewable,
            load_norm: grid.load_norm,
            renewable_norm: grid.renewable_norm,
            reward: reward.clone(),
            batteries: profiles.iter().map(BatteryFit::new).collect(),
            profiles: profiles.to_vec(),
            forecast: GridForecast::new(),
        })
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn n_agents(&self) -> usize {
        self.profiles.len()
    }

    pub fn load_norm(&self) -> f64 {
        self.load_norm
    }

    /// Feeds one twin's own battery transition to its learned predictor.
    /// Samples where the SoC clamp bound are skipped.
    pub fn observe_battery(&mut self, agent: usize, soc_before: f64, action: f64, soc_after: f64) {
        if soc_after > 0.0 && soc_after < 1.0 && action != 0.0 {
            self.batteries[agent].observe(action, soc_after - soc_before);
        }
    }

    /// Feeds one observed hour of exogenous values to the shared forecaster.
    pub fn observe_grid(&mut self, hour: usize, base_load: f64, renewable: f64) {
        let h = hour % 24;
        self.forecast.base_sum[h] += base_load;
        self.forecast.renew_sum[h] += renewable;
        self.forecast.count[h] += 1;
    }

    fn forecast(&self, hour: usize) -> (f64, f64) {
        let h = hour % 24;
        match self.mode {
            ModelMode::Learned if self.forecast.count[h] > 0 => {
                let c = self.forecast.count[h] as f64;
                (self.forecast.base_sum[h] / c, self.forecast.renew_sum[h] / c)
            }
            _ => (self.base_load.expected(hour), self.renewable.expected(hour)),
        }
    }

    fn battery(&self, agent: usize, ev: &EvState, a: f64) -> (f64, f64) {
        match self.mode {
            ModelMode::Oracle => {
                let s = soc_update(ev, &self.profiles[agent], a, DT_HOURS).expect("finite action");
                (s.state.soc, s.realized)
            }
            ModelMode::Learned => {
                let fit = &self.batteries[agent];
                let raw = ev.soc + fit.coef_c() * a.max(0.0) - fit.coef_d() * (-a).max(0.0);
                let soc = raw.clamp(0.0, 1.0);
                let realized = if raw != ev.soc { a * (soc - ev.soc) / (raw - ev.soc) } else { 0.0 };
                (soc, realized)
            }
        }
    }

    pub fn observation(&self, snap: &Snapshot, agent: usize) -> Observation {
        let a = &snap.agents[agent];
        Observation {
            soc: a.soc,
            t_etd: if a.plugged { a.t_etd } else { 0.0 },
            soc_target: a.soc_target,
            price_now: self.pricing.price_at(snap.grid.hour),
            renewable_available: snap.grid.renewable_available / self.renewable_norm,
            base_load: snap.grid.base_load / self.load_norm,
            plugged: if a.plugged { 1.0 } else { 0.0 },
        }
    }

    /// Predicts one step. `noise` holds standard-normal draws for the next
    /// hour's base load and renewable forecasts.
    pub fn predict_step(&self, snap: &Snapshot, joint: &[f64], noise: (f64, f64)) -> Result<(Snapshot, Vec<f64>)> {
        let n = self.n_agents();
        if joint.len() != n || snap.agents.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "model has {n} agents, snapshot {} and action {}",
                snap.agents.len(),
                joint.len()
            )));
        }
        let (next, record) = self.advance(snap, joint, noise);
        let w_soc: Vec<f64> = self.profiles.iter().map(|p| p.w_soc).collect();
        Ok((next, reward::agent_rewards(&record, &w_soc, &self.reward)))
    }

    fn advance(&self, snap: &Snapshot, joint: &[f64], noise: (f64, f64)) -> (Snapshot, StepRecord) {
        let n = self.n_agents();
        let mut agents = snap.agents.clone();
        let mut flows = vec![0.0; n];
        let mut active = vec![false; n];
        for i in 0..n {
            let a = &mut agents[i];
            if !a.plugged {
                continue;
            }
            active[i] = true;
            let act = ActionBounds::of(&self.profiles[i]).clamp(joint[i]);
            let ev = EvState {
                soc: a.soc,
                plugged: true,
                t_etd: a.t_etd,
                departed_this_episode: false,
            };
            let (soc, realized) = self.battery(i, &ev, act);
            a.soc = soc;
            flows[i] = realized;
        }
        let total_charge: f64 = flows.iter().filter(|f| **f > 0.0).sum();
        let total_discharge: f64 = flows.iter().filter(|f| **f < 0.0).map(|f| -f).sum();
        let g = &snap.grid;
        let bal = balance(g.base_load, g.renewable_available, total_charge, total_discharge);
        let mut window = g.p_grid_window.clone();
        if window.len() >= self.reward.window {
            window.drain(..window.len() + 1 - self.reward.window);
        }
        window.push(bal.p_grid);

        let mut departures = Vec::new();
        for (i, a) in agents.iter_mut().enumerate() {
            if a.plugged {
                a.t_etd -= DT_HOURS;
                if a.t_etd <= 0.5 * DT_HOURS {
                    a.t_etd = 0.0;
                    a.plugged = false;
                    departures.push(crate::grid_env::Departure {
                        agent: i,
                        final_soc: a.soc,
                        soc_target: a.soc_target,
                    });
                }
            }
        }
        let hour = g.hour + 1;
        let (mut base, mut renew) = self.forecast(hour);
        if hour < STEPS_PER_EPISODE && self.noise_std > 0.0 {
            base = (base + self.noise_std * noise.0).max(0.0);
            renew = (renew + self.noise_std * noise.1).max(0.0);
        }
        let record = StepRecord {
            step: g.hour,
            price: self.pricing.price_at(g.hour),
            base_load: g.base_load,
            renewable_available: g.renewable_available,
            renewable_used: bal.renewable_used,
            p_grid: bal.p_grid,
            curtailment: bal.curtailment,
            total_charge,
            total_discharge,
            flows,
            active,
            departures,
            p_grid_window: window.clone(),
        };
        let next = Snapshot {
            grid: GridContext {
                hour,
                base_load: base,
                renewable_available: renew,
                p_grid_window: window,
            },
            agents,
        };
        (next, record)
    }
}

/// `Σ_j γ^j · r_j`, accumulated in step order like the rollout itself.
pub fn discounted_sum(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut acc = 0.0;
    for r in rewards {
        acc += discount * r;
        discount *= gamma;
    }
    acc
}

impl GlobalModel {
    /// Single-snapshot rollout.
    pub fn rollout(
        &self,
        snap: &Snapshot,
        joint: &[f64],
        k_prime: usize,
        gamma: f64,
        policy: &dyn Policy,
        noise: &NoiseTable,
    ) -> Result<Vec<f64>> {
        let out = self.rollout_batch(
            std::slice::from_ref(snap),
            &[joint.to_vec()],
            k_prime,
            gamma,
            ActionSource::Policy(policy),
            noise,
        )?;
        Ok(out.returns.into_iter().next().expect("one sample"))
    }

    /// Rollouts for a batch of snapshots. Step 1 applies `joint[k]`; later
    /// steps take actions from `source`. Stops early at the end of the day.
    pub fn rollout_batch(
        &self,
        snaps: &[Snapshot],
        joint: &[Vec<f64>],
        k_prime: usize,
        gamma: f64,
        source: ActionSource<'_>,
        noise: &NoiseTable,
    ) -> Result<RolloutOutput> {
        let k = snaps.len();
        let n = self.n_agents();
        if joint.len() != k {
            return Err(Error::ShapeMismatch("one joint action per snapshot required".into()));
        }
        let mut returns = vec![vec![0.0; n]; k];
        let mut actions: StepActions = Vec::with_capacity(k_prime);
        let mut first_p_grid = vec![f64::NAN; k];
        let mut first_utilisation = vec![f64::NAN; k];
        if k_prime == 0 {
            return Ok(RolloutOutput {
                returns,
                actions,
                first_p_grid,
                first_utilisation,
            });
        }
        let w_soc: Vec<f64> = self.profiles.iter().map(|p| p.w_soc).collect();
        let mut cur: Vec<Snapshot> = snaps.to_vec();
        let mut discount = 1.0;
        for j in 0..k_prime {
            let step_actions: Vec<Vec<f64>> = if j == 0 {
                joint.to_vec()
            } else {
                self.policy_actions(&cur, j, &source)
            };
            for s in 0..k {
                if cur[s].is_terminal() {
                    continue;
                }
                let (next, record) = self.advance(&cur[s], &step_actions[s], noise.get(s, j));
                let r = reward::agent_rewards(&record, &w_soc, &self.reward);
                for (acc, ri) in returns[s].iter_mut().zip(&r) {
                    *acc += discount * ri;
                }
                if j == 0 {
                    first_p_grid[s] = record.p_grid;
                    first_utilisation[s] = if record.renewable_available > 0.0 {
                        record.renewable_used / record.renewable_available
                    } else {
                        1.0
                    };
                }
                cur[s] = next;
            }
            actions.push(step_actions);
            discount *= gamma;
        }
        Ok(RolloutOutput {
            returns,
            actions,
            first_p_grid,
            first_utilisation,
        })
    }

    fn policy_actions(&self, cur: &[Snapshot], step: usize, source: &ActionSource<'_>) -> Vec<Vec<f64>> {
        let n = self.n_agents();
        let k = cur.len();
        let mut out = match source {
            ActionSource::Policy(_) => vec![vec![0.0; n]; k],
            ActionSource::Replay { cache, .. } => cache[step].clone(),
        };
        let agents: Vec<usize> = match source {
            ActionSource::Policy(_) => (0..n).collect(),
            ActionSource::Replay { agent, .. } => vec![*agent],
        };
        let policy = match source {
            ActionSource::Policy(p) => *p,
            ActionSource::Replay { policy, .. } => *policy,
        };
        for i in agents {
            let obs: Vec<Observation> = cur.iter().map(|s| self.observation(s, i)).collect();
            let acts = policy.act(i, &obs);
            for s in 0..k {
                out[s][i] = if obs[s].is_plugged() { acts[s] } else { 0.0 };
            }
        }
        out
    }
}
