//! Actor-critic trainers: independent learners (IL), MADDPG and DT-MADDPG.
//!
//! All three share one code path. The composite value of agent i is
//! `Q_i = R_sim,i + Q_res,i`, where `R_sim` comes from global-model rollouts
//! (identically zero for IL and MADDPG) and `Q_res` is the learned critic.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::global_model::{ActionSource, GlobalModel, NoiseTable, Policy, RolloutOutput, Snapshot};
use crate::grid_env::{ActionBounds, Observation, OBS_DIM};
use crate::neural::{adam_step, Activation, AdamConfig, OptState, ParamSet};
use crate::parallel::{self, Execution};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::SimRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Il,
    Maddpg,
    #[serde(alias = "dt-maddpg")]
    DtMaddpg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Il, Algorithm::Maddpg, Algorithm::DtMaddpg];

    pub fn centralised_critic(self) -> bool {
        self != Algorithm::Il
    }

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Il => "il",
            Algorithm::Maddpg => "maddpg",
            Algorithm::DtMaddpg => "dt-maddpg",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "il" => Ok(Algorithm::Il),
            "maddpg" => Ok(Algorithm::Maddpg),
            "dt-maddpg" | "dt" => Ok(Algorithm::DtMaddpg),
            other => Err(Error::InvalidConfig(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub minibatch_k: usize,
    /// Rollout horizon for DT-MADDPG. Ignored (treated as 0) by IL and MADDPG.
    pub k_prime: usize,
    /// Action perturbation (kW) for the finite-difference `∂R_sim/∂a_i`.
    pub fd_step_h: f64,
    pub use_rsim_actor_grad: bool,
    /// Append predicted first-step grid features to the critic input.
    pub critic_sim_features: bool,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub buffer_capacity: usize,
    /// Training starts once the buffer holds `gate_multiplier · K` transitions.
    pub gate_multiplier: usize,
    /// Exploration σ as a fraction of each agent's half action range.
    pub noise_start: f64,
    pub noise_end: f64,
    /// Fraction of the training episodes over which σ anneals linearly.
    pub noise_anneal_frac: f64,
    /// Penalty on the squared actor output pre-activation; keeps tanh out of saturation.
    pub actor_preact_reg: f64,
    /// Global gradient-norm clip for actor and critic updates; 0 disables.
    pub grad_clip_norm: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 0.01,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            minibatch_k: 128,
            k_prime: 4,
            fd_step_h: 0.1,
            use_rsim_actor_grad: true,
            critic_sim_features: false,
            actor_hidden: vec![32, 32],
            critic_hidden: vec![64, 64],
            buffer_capacity: 100_000,
            gate_multiplier: 10,
            noise_start: 0.3,
            noise_end: 0.05,
            noise_anneal_frac: 0.8,
            actor_preact_reg: 1e-3,
            grad_clip_norm: 0.5,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("learner: {m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.minibatch_k == 0 || self.buffer_capacity == 0 {
            return bad("minibatch_k and buffer_capacity must be >= 1");
        }
        if !(self.fd_step_h > 0.0 && self.fd_step_h.is_finite()) {
            return bad("fd_step_h must be > 0");
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden layer widths must be >= 1");
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) {
            return bad("exploration noise must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.noise_anneal_frac) {
            return bad("noise_anneal_frac must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn effective_k_prime(&self, algorithm: Algorithm) -> usize {
        match algorithm {
            Algorithm::DtMaddpg => self.k_prime,
            _ => 0,
        }
    }

    pub fn training_gate(&self) -> usize {
        (self.gate_multiplier * self.minibatch_k).max(self.minibatch_k)
    }

    /// Exploration σ (fraction of the half range) for `episode` of `total`.
    pub fn noise_sigma(&self, episode: usize, total: usize) -> f64 {
        let span = self.noise_anneal_frac * total as f64;
        let frac = if span > 0.0 { (episode as f64 / span).min(1.0) } else { 1.0 };
        self.noise_start + (self.noise_end - self.noise_start) * frac
    }
}

/// The four networks and two optimiser states owned by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNets {
    pub actor: ParamSet,
    pub critic: ParamSet,
    pub target_actor: ParamSet,
    pub target_critic: ParamSet,
    pub actor_opt: OptState,
    pub critic_opt: OptState,
}

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(actor_sizes: &[usize], critic_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let actor = ParamSet::init(actor_sizes, Activation::Relu, Activation::Tanh, rng)?;
        let critic = ParamSet::init(critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor_opt: OptState::new(&actor),
            critic_opt: OptState::new(&critic),
            actor,
            critic,
        })
    }
}

/// Centre and half-width of an agent's action interval.
fn mid_half(b: &ActionBounds) -> (f64, f64) {
    (0.5 * (b.max + b.min), 0.5 * (b.max - b.min))
}

/// Maps a tanh output in [-1, 1] onto `[−a_max_discharge, a_max_charge]`.
pub fn actor_to_action(u: f64, b: &ActionBounds) -> f64 {
    let (mid, half) = mid_half(b);
    mid + half * u
}

/// Decentralised action selection: reads only `o_i` and agent i's actor.
/// `noise_sigma` is a fraction of the half range.
pub fn select_action<R: Rng + ?Sized>(
    nets: &AgentNets,
    obs: &Observation,
    noise_sigma: f64,
    bounds: &ActionBounds,
    rng: &mut R,
) -> Result<f64> {
    if !obs.is_plugged() {
        return Ok(0.0);
    }
    let u = nets.actor.predict(&obs.features(), 1)?[0];
    let mut a = actor_to_action(u, bounds);
    if noise_sigma > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        a += noise_sigma * mid_half(bounds).1 * z;
    }
    Ok(bounds.clamp(a))
}

pub fn composite_q(r_sim: f64, q_res: f64) -> f64 {
    r_sim + q_res
}

pub fn critic_target(r: f64, gamma: f64, r_sim_next: f64, q_res_target_next: f64, done: bool) -> f64 {
    if done {
        r
    } else {
        r + gamma * (r_sim_next + q_res_target_next)
    }
}

/// Deterministic actors evaluated in batch, used for rollouts.
pub struct ActorPolicy<'a> {
    actors: Vec<&'a ParamSet>,
    bounds: &'a [ActionBounds],
}

impl<'a> ActorPolicy<'a> {
    pub fn new(actors: Vec<&'a ParamSet>, bounds: &'a [ActionBounds]) -> Self {
        Self { actors, bounds }
    }
}

impl Policy for ActorPolicy<'_> {
    fn act(&self, agent: usize, obs: &[Observation]) -> Vec<f64> {
        let x: Vec<f64> = obs.iter().flat_map(|o| o.features()).collect();
        let u = self.actors[agent].predict(&x, obs.len()).expect("actor input shape");
        u.into_iter().map(|u| actor_to_action(u, &self.bounds[agent])).collect()
    }
}

/// Layout of the critic input for one algorithm and fleet size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticLayout {
    pub algorithm: Algorithm,
    pub n_agents: usize,
    pub sim_features: bool,
}

pub const SIM_FEATURES: usize = 2;

impl CriticLayout {
    pub fn dim(&self) -> usize {
        if self.algorithm.centralised_critic() {
            self.n_agents * (OBS_DIM + 1) + if self.sim_features { SIM_FEATURES } else { 0 }
        } else {
            OBS_DIM + 1
        }
    }

    /// Column holding agent i's (normalised) action.
    pub fn action_col(&self, agent: usize) -> usize {
        if self.algorithm.centralised_critic() {
            self.n_agents * OBS_DIM + agent
        } else {
            OBS_DIM
        }
    }

    /// Critic inputs for `agent` over a batch. `sim` holds per-sample
    /// summary features when the layout uses them.
    pub fn build(
        &self,
        agent: usize,
        obs: &[&[Observation]],
        actions: &[&[f64]],
        scales: &[f64],
        sim: Option<&[[f64; SIM_FEATURES]]>,
    ) -> Vec<f64> {
        let d = self.dim();
        let mut x = Vec::with_capacity(obs.len() * d);
        for (k, (o, a)) in obs.iter().zip(actions).enumerate() {
            if self.algorithm.centralised_critic() {
                for oi in o.iter() {
                    x.extend_from_slice(&oi.features());
                }
                x.extend(a.iter().zip(scales).map(|(a, s)| a / s));
                if self.sim_features {
                    x.extend_from_slice(&sim.map(|s| s[k]).unwrap_or([0.0; SIM_FEATURES]));
                }
            } else {
                x.extend_from_slice(&o[agent].features());
                x.push(a[agent] / scales[agent]);
            }
        }
        x
    }
}

/// One Adam step on `(1/K)·Σ (y − (R_sim + Q_res(x)))²`. Returns the loss
/// before the step.
pub fn critic_update(
    nets: &mut AgentNets,
    inputs: &[f64],
    r_sim: &[f64],
    targets: &[f64],
    adam: &AdamConfig,
) -> Result<f64> {
    let k = targets.len();
    if r_sim.len() != k || k == 0 {
        return Err(Error::ShapeMismatch(format!(
            "critic update: {k} targets, {} baselines",
            r_sim.len()
        )));
    }
    let (q, cache) = nets.critic.forward_batch(inputs, k)?;
    let mut loss = 0.0;
    let mut dq = vec![0.0; k];
    for j in 0..k {
        let err = targets[j] - composite_q(r_sim[j], q[j]);
        loss += err * err;
        dq[j] = -2.0 * err / k as f64;
    }
    let (grads, _) = nets.critic.backward(&cache, &dq)?;
    adam_step(&mut nets.critic, &grads, &mut nets.critic_opt, adam)?;
    Ok(loss / k as f64)
}

/// Inputs for one agent's actor update.
pub struct ActorBatch<'a> {
    /// `K × OBS_DIM` features of agent i's own observations.
    pub obs: &'a [f64],
    pub plugged: &'a [bool],
    /// Critic inputs with stored actions; agent i's column is overwritten.
    pub critic_inputs: Vec<f64>,
    pub action_col: usize,
    pub scale: f64,
    pub bounds: ActionBounds,
    /// Weight of the `mean z²` penalty on the actor's output pre-activation.
    pub preact_reg: f64,
}

/// `∂R_sim,i/∂a_i` for each sample, given agent i's current actions.
pub type RsimGradient<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

/// Deterministic policy-gradient ascent on `Q_i = R_sim,i + Q_res,i`.
/// `rsim_grad` returns `∂R_sim,i/∂a_i` for the freshly computed actions.
/// Returns the actor loss `−mean Q_res` over plugged samples.
pub fn actor_update(
    nets: &mut AgentNets,
    mut batch: ActorBatch<'_>,
    rsim_grad: Option<RsimGradient<'_>>,
    adam: &AdamConfig,
) -> Result<f64> {
    let k = batch.plugged.len();
    let d = nets.critic.input_dim();
    if batch.obs.len() != k * OBS_DIM || batch.critic_inputs.len() != k * d || batch.action_col >= d {
        return Err(Error::ShapeMismatch("actor update batch is inconsistent".into()));
    }
    let (u, actor_cache) = nets.actor.forward_batch(batch.obs, k)?;
    let actions: Vec<f64> = u.iter().map(|&u| actor_to_action(u, &batch.bounds)).collect();
    for j in 0..k {
        if batch.plugged[j] {
            batch.critic_inputs[j * d + batch.action_col] = actions[j] / batch.scale;
        }
    }
    let (q, critic_cache) = nets.critic.forward_batch(&batch.critic_inputs, k)?;
    let dx = nets.critic.input_gradient(&critic_cache, &vec![1.0; k])?;
    let fd = rsim_grad.map(|f| f(&actions));
    let half = mid_half(&batch.bounds).1;
    let mut du = vec![0.0; k];
    let mut loss = 0.0;
    let mut active = 0usize;
    for j in 0..k {
        if !batch.plugged[j] {
            continue;
        }
        active += 1;
        loss -= q[j];
        let mut g = dx[j * d + batch.action_col] / batch.scale;
        if let Some(fd) = &fd {
            g += fd[j];
        }
        // descend on −Q; da/du = half
        du[j] = -g * half / k as f64;
    }
    let grads = if batch.preact_reg > 0.0 {
        let z = actor_cache.output_pre_activation();
        let dz: Vec<f64> = z.iter().map(|&z| 2.0 * batch.preact_reg * z / k as f64).collect();
        nets.actor.backward_with_output_pre(&actor_cache, &du, &dz)?.0
    } else {
        nets.actor.backward(&actor_cache, &du)?.0
    };
    adam_step(&mut nets.actor, &grads, &mut nets.actor_opt, adam)?;
    Ok(if active > 0 { loss / active as f64 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Owns every agent's networks and runs the centralised training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    algorithm: Algorithm,
    cfg: LearnerConfig,
    layout_sim_features: bool,
    nets: Vec<AgentNets>,
    bounds: Vec<ActionBounds>,
    model_rng: SimRng,
    #[serde(skip)]
    exec: Execution,
}

impl Trainer {
    pub fn new<R: Rng + ?Sized>(
        algorithm: Algorithm,
        cfg: &LearnerConfig,
        bounds: Vec<ActionBounds>,
        init_rng: &mut R,
        model_rng: SimRng,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = bounds.len();
        let layout = CriticLayout {
            algorithm,
            n_agents: n,
            sim_features: cfg.critic_sim_features,
        };
        let mut actor_sizes = vec![OBS_DIM];
        actor_sizes.extend(&cfg.actor_hidden);
        actor_sizes.push(1);
        let mut critic_sizes = vec![layout.dim()];
        critic_sizes.extend(&cfg.critic_hidden);
        critic_sizes.push(1);
        let nets = (0..n)
            .map(|_| AgentNets::new(&actor_sizes, &critic_sizes, init_rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            algorithm,
            cfg: cfg.clone(),
            layout_sim_features: cfg.critic_sim_features,
            nets,
            bounds,
            model_rng,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn nets(&self) -> &[AgentNets] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [AgentNets] {
        &mut self.nets
    }

    pub fn bounds(&self) -> &[ActionBounds] {
        &self.bounds
    }

    pub fn layout(&self) -> CriticLayout {
        CriticLayout {
            algorithm: self.algorithm,
            n_agents: self.nets.len(),
            sim_features: self.layout_sim_features,
        }
    }

    /// Combined checksum over every agent's networks.
    pub fn checksum(&self) -> u64 {
        self.nets.iter().fold(0xcbf29ce484222325u64, |h, n| {
            [&n.actor, &n.critic, &n.target_actor, &n.target_critic]
                .iter()
                .fold(h, |h, p| (h ^ p.checksum()).wrapping_mul(0x100000001b3))
        })
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[Observation], noise_sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
        obs.iter()
            .enumerate()
            .map(|(i, o)| select_action(&self.nets[i], o, noise_sigma, &self.bounds[i], rng))
            .collect()
    }

    /// One training update per environment step: critics, actors, targets.
    /// Returns `None` while the buffer is below the training gate.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        model: &GlobalModel,
        rng: &mut R,
    ) -> Result<Option<TrainStats>> {
        if buffer.len() < self.cfg.training_gate() {
            return Ok(None);
        }
        let k = self.cfg.minibatch_k;
        let idx = buffer.sample_indices(k, rng)?;
        let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i).expect("sampled in range")).collect();
        let n = self.nets.len();
        if batch.iter().any(|t| t.n_agents() != n) {
            return Err(Error::ShapeMismatch("transition agent count differs from trainer".into()));
        }
        let k_prime = self.cfg.effective_k_prime(self.algorithm);
        let gamma = self.cfg.gamma;
        let scales: Vec<f64> = self.bounds.iter().map(ActionBounds::scale).collect();
        let layout = self.layout();

        // Target joint actions at s'.
        let target_actions: Vec<Vec<f64>> = {
            let policy = ActorPolicy::new(self.nets.iter().map(|n| &n.target_actor).collect(), &self.bounds);
            let mut acts = vec![vec![0.0; n]; k];
            for i in 0..n {
                let obs: Vec<Observation> = batch.iter().map(|t| t.next_obs[i]).collect();
                let a = policy.act(i, &obs);
                for j in 0..k {
                    if obs[j].is_plugged() {
                        acts[j][i] = a[j];
                    }
                }
            }
            acts
        };

        // Value baselines.
        let (rsim, rsim_next, noise) = if k_prime > 0 {
            let noise_now = self.noise_table(k, k_prime, model);
            let noise_next = self.noise_table(k, k_prime, model);
            let snaps: Vec<Snapshot> = batch.iter().map(|t| Snapshot::from_observations(&t.grid, &t.obs)).collect();
            let joint: Vec<Vec<f64>> = batch.iter().map(|t| t.actions.clone()).collect();
            let main = ActorPolicy::new(self.nets.iter().map(|n| &n.actor).collect(), &self.bounds);
            let now = model.rollout_batch(&snaps, &joint, k_prime, gamma, ActionSource::Policy(&main), &noise_now)?;
            let next_snaps: Vec<Snapshot> = batch
                .iter()
                .map(|t| Snapshot::from_observations(&t.next_grid, &t.next_obs))
                .collect();
            let target = ActorPolicy::new(self.nets.iter().map(|n| &n.target_actor).collect(), &self.bounds);
            let next = model.rollout_batch(
                &next_snaps,
                &target_actions,
                k_prime,
                gamma,
                ActionSource::Policy(&target),
                &noise_next,
            )?;
            (Some(now), Some(next), Some(noise_now))
        } else {
            (None, None, None)
        };

        let sim_feats = |out: &Option<RolloutOutput>| -> Option<Vec<[f64; SIM_FEATURES]>> {
            out.as_ref().map(|o| {
                o.first_p_grid
                    .iter()
                    .zip(&o.first_utilisation)
                    .map(|(p, u)| [p / model.load_norm(), *u])
                    .collect()
            })
        };
        let feats_now = sim_feats(&rsim);
        let feats_next = sim_feats(&rsim_next);

        let obs: Vec<&[Observation]> = batch.iter().map(|t| t.obs.as_slice()).collect();
        let next_obs: Vec<&[Observation]> = batch.iter().map(|t| t.next_obs.as_slice()).collect();
        let stored: Vec<&[f64]> = batch.iter().map(|t| t.actions.as_slice()).collect();
        let targets_ref: Vec<&[f64]> = target_actions.iter().map(Vec::as_slice).collect();

        // With a centralised critic every agent sees the same inputs.
        let shared_now = layout
            .algorithm
            .centralised_critic()
            .then(|| layout.build(0, &obs, &stored, &scales, feats_now.as_deref()));
        let shared_next = layout
            .algorithm
            .centralised_critic()
            .then(|| layout.build(0, &next_obs, &targets_ref, &scales, feats_next.as_deref()));

        let clip = Some(self.cfg.grad_clip_norm);
        let critic_adam = AdamConfig::with_lr(self.cfg.lr_critic).clipped(clip);
        let actor_adam = AdamConfig::with_lr(self.cfg.lr_actor).clipped(clip);
        let use_fd = k_prime > 0 && self.cfg.use_rsim_actor_grad;
        let h = self.cfg.fd_step_h;

        let old_nets = std::mem::take(&mut self.nets);
        let bounds = &self.bounds;
        let main_actors: Vec<&ParamSet> = old_nets.iter().map(|n| &n.actor).collect();
        let results = parallel::map_range(n, self.exec, |i| -> Result<(AgentNets, TrainStats)> {
            let mut nets = old_nets[i].clone();
            let x_next = match &shared_next {
                Some(x) => x.clone(),
                None => layout.build(i, &next_obs, &targets_ref, &scales, None),
            };
            let q_next = nets.target_critic.predict(&x_next, k)?;
            let r_sim: Vec<f64> = (0..k).map(|j| rsim.as_ref().map_or(0.0, |o| o.returns[j][i])).collect();
            let targets: Vec<f64> = (0..k)
                .map(|j| {
                    let t = batch[j];
                    let r_next = rsim_next.as_ref().map_or(0.0, |o| o.returns[j][i]);
                    critic_target(t.rewards[i], gamma, r_next, q_next[j], t.done[i])
                })
                .collect();
            let x_now = match &shared_now {
                Some(x) => x.clone(),
                None => layout.build(i, &obs, &stored, &scales, None),
            };
            let critic_loss = critic_update(&mut nets, &x_now, &r_sim, &targets, &critic_adam)?;

            let own_obs: Vec<f64> = batch.iter().flat_map(|t| t.obs[i].features()).collect();
            let plugged: Vec<bool> = batch.iter().map(|t| t.obs[i].is_plugged()).collect();
            let actor_batch = ActorBatch {
                obs: &own_obs,
                plugged: &plugged,
                critic_inputs: x_now,
                action_col: layout.action_col(i),
                scale: scales[i],
                bounds: bounds[i],
                preact_reg: self.cfg.actor_preact_reg,
            };
            let fd = |actions: &[f64]| -> Vec<f64> {
                let (Some(base), Some(noise)) = (rsim.as_ref(), noise.as_ref()) else {
                    return vec![0.0; actions.len()];
                };
                rsim_gradient(model, &batch, i, actions, h, k_prime, gamma, &main_actors, bounds, base, noise)
                    .expect("rollout shapes are validated above")
            };
            let actor_loss = if use_fd {
                actor_update(&mut nets, actor_batch, Some(&fd), &actor_adam)?
            } else {
                actor_update(&mut nets, actor_batch, None, &actor_adam)?
            };
            Ok((nets, TrainStats { critic_loss, actor_loss }))
        });

        let mut stats = TrainStats::default();
        let mut new_nets = Vec::with_capacity(n);
        for r in results {
            let (mut nets, s) = r?;
            let tau = self.cfg.tau;
            let (actor, critic) = (nets.actor.clone(), nets.critic.clone());
            nets.target_actor.soft_update(&actor, tau);
            nets.target_critic.soft_update(&critic, tau);
            stats.critic_loss += s.critic_loss / n as f64;
            stats.actor_loss += s.actor_loss / n as f64;
            new_nets.push(nets);
        }
        self.nets = new_nets;
        Ok(Some(stats))
    }

    fn noise_table(&mut self, k: usize, k_prime: usize, model: &GlobalModel) -> NoiseTable {
        if model.noise_std() > 0.0 {
            NoiseTable::draw(k, k_prime, &mut self.model_rng)
        } else {
            NoiseTable::zeros(k, k_prime)
        }
    }
}

/// Central finite difference of agent i's `R_sim` with respect to its first
/// action, reusing the base rollout's noise and the other agents' actions.
#[allow(clippy::too_many_arguments)]
pub fn rsim_gradient(
    model: &GlobalModel,
    batch: &[&Transition],
    agent: usize,
    actions: &[f64],
    h: f64,
    k_prime: usize,
    gamma: f64,
    actors: &[&ParamSet],
    bounds: &[ActionBounds],
    base: &RolloutOutput,
    noise: &NoiseTable,
) -> Result<Vec<f64>> {
    let policy = ActorPolicy::new(actors.to_vec(), bounds);
    let snaps: Vec<Snapshot> = batch.iter().map(|t| Snapshot::from_observations(&t.grid, &t.obs)).collect();
    let shifted = |delta: f64| -> Vec<Vec<f64>> {
        batch
            .iter()
            .zip(actions)
            .map(|(t, a)| {
                let mut j = t.actions.clone();
                j[agent] = a + delta;
                j
            })
            .collect()
    };
    let source = || ActionSource::Replay {
        cache: &base.actions,
        policy: &policy,
        agent,
    };
    let plus = model.rollout_batch(&snaps, &shifted(h), k_prime, gamma, source(), noise)?;
    let minus = model.rollout_batch(&snaps, &shifted(-h), k_prime, gamma, source(), noise)?;
    Ok(plus
        .returns
        .iter()
        .zip(&minus.returns)
        .map(|(p, m)| (p[agent] - m[agent]) / (2.0 * h))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Layer;
    use crate::rng::stream;

    fn bounds() -> ActionBounds {
        ActionBounds { min: -7.0, max: 7.0 }
    }

    fn plugged_obs() -> Observation {
        Observation {
            soc: 0.5,
            t_etd: 4.0,
            soc_target: 0.8,
            price_now: 0.6542,
            renewable_available: 0.3,
            base_load: 0.7,
            plugged: 1.0,
        }
    }

    fn nets(critic_in: usize) -> AgentNets {
        AgentNets::new(&[OBS_DIM, 8, 1], &[critic_in, 8, 1], &mut stream(3, 0)).unwrap()
    }

    #[test]
    fn composite_and_target_examples() {
        assert_eq!(composite_q(1.5, 0.0), 1.5);
        assert_eq!(composite_q(0.0, -0.4), -0.4);
        assert!((composite_q(2.8, -0.3) - 2.5).abs() < 1e-12);
        assert_eq!(critic_target(1.0, 0.9, 5.0, 5.0, true), 1.0);
        assert_eq!(critic_target(1.0, 0.0, 5.0, 5.0, false), 1.0);
        assert!((critic_target(1.0, 0.9, 2.8, 0.2, false) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn noiseless_selection_is_repeatable_and_noisy_draws_stay_in_bounds() {
        let n = nets(OBS_DIM + 1);
        let o = plugged_obs();
        let mut rng = stream(1, 0);
        let a = select_action(&n, &o, 0.0, &bounds(), &mut rng).unwrap();
        assert_eq!(a, select_action(&n, &o, 0.0, &bounds(), &mut rng).unwrap());
        let b = ActionBounds { min: -5.0, max: 9.0 };
        for _ in 0..10_000 {
            let a = select_action(&n, &o, 2.0, &b, &mut rng).unwrap();
            assert!((b.min..=b.max).contains(&a));
        }
        let away = Observation { plugged: 0.0, ..o };
        assert_eq!(select_action(&n, &away, 1.0, &b, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn zero_output_layer_gives_midpoint() {
        let mut n = nets(OBS_DIM + 1);
        let last = n.actor.layers_mut().last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        let b = ActionBounds { min: -4.0, max: 10.0 };
        let a = select_action(&n, &plugged_obs(), 0.0, &b, &mut stream(0, 0)).unwrap();
        assert_eq!(a, 3.0);
    }

    #[test]
    fn zero_critic_on_its_own_targets_has_zero_loss() {
        let mut n = nets(3);
        n.critic.layers_mut().last_mut().unwrap().weights.iter_mut().for_each(|w| *w = 0.0);
        let before = n.critic.clone();
        let x = vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6];
        let r_sim = [1.5, -2.0];
        let loss = critic_update(&mut n, &x, &r_sim, &r_sim, &AdamConfig::with_lr(1e-3)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(n.critic, before);
    }

    #[test]
    fn single_sample_loss_matches_hand_value() {
        // Q_res(x) = 2x + 1 with x = 0.5 gives 2; y = 5, R_sim = 1.
        let critic = ParamSet::from_layers(vec![Layer {
            inputs: 1,
            outputs: 1,
            activation: Activation::Identity,
            weights: vec![2.0],
            bias: vec![1.0],
        }])
        .unwrap();
        let mut n = nets(1);
        n.critic_opt = OptState::new(&critic);
        n.critic = critic;
        let loss = critic_update(&mut n, &[0.5], &[1.0], &[5.0], &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(loss, 4.0);
        // First Adam step moves each parameter by lr against the gradient sign.
        assert!((n.critic.layers()[0].weights[0] - 2.1).abs() < 1e-9);
        assert!((n.critic.layers()[0].bias[0] - 1.1).abs() < 1e-9);
    }

    #[test]
    fn repeated_critic_updates_reduce_loss() {
        let mut n = nets(3);
        let mut rng = stream(8, 0);
        let x: Vec<f64> = (0..96).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.chunks(3).map(|c| c[0] - 2.0 * c[1] + 0.5 * c[2]).collect();
        let r = vec![0.0; 32];
        let adam = AdamConfig::with_lr(1e-2);
        let losses: Vec<f64> = (0..300).map(|_| critic_update(&mut n, &x, &r, &y, &adam).unwrap()).collect();
        assert!(losses[299] < 0.1 * losses[0]);
        let late = &losses[100..];
        assert!(late.windows(50).all(|w| w[49] <= w[0]));
    }

    fn actor_batch<'a>(obs: &'a [f64], plugged: &'a [bool], inputs: Vec<f64>) -> ActorBatch<'a> {
        ActorBatch {
            obs,
            plugged,
            critic_inputs: inputs,
            action_col: OBS_DIM,
            scale: 7.0,
            bounds: bounds(),
            preact_reg: 0.0,
        }
    }

    #[test]
    fn constant_critic_leaves_actor_unchanged() {
        let mut n = nets(OBS_DIM + 1);
        // Zero the critic's first layer so Q does not depend on the input.
        n.critic.layers_mut()[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let before = n.actor.clone();
        let o = plugged_obs().features();
        let mut x = o.to_vec();
        x.push(0.0);
        actor_update(&mut n, actor_batch(&o, &[true], x), None, &AdamConfig::with_lr(1e-2)).unwrap();
        assert_eq!(n.actor, before);
    }

    #[test]
    fn quadratic_objective_pulls_action_towards_its_peak() {
        // Q = −(a − 2)² supplied through the baseline-gradient path.
        let mut n = nets(OBS_DIM + 1);
        n.critic.layers_mut()[0].weights.iter_mut().for_each(|w| *w = 0.0);
        n.actor.layers_mut().last_mut().unwrap().weights.iter_mut().for_each(|w| *w = 0.0);
        let o = plugged_obs().features();
        let act = |n: &AgentNets| actor_to_action(n.actor.predict(&o, 1).unwrap()[0], &bounds());
        assert_eq!(act(&n), 0.0);
        let grad = |a: &[f64]| a.iter().map(|a| -2.0 * (a - 2.0)).collect::<Vec<_>>();
        let mut x = o.to_vec();
        x.push(0.0);
        for _ in 0..50 {
            actor_update(&mut n, actor_batch(&o, &[true], x.clone()), Some(&grad), &AdamConfig::with_lr(1e-3)).unwrap();
        }
        let a = act(&n);
        assert!(a > 0.0 && a < 2.5, "{a}");
    }

    #[test]
    fn unplugged_samples_do_not_move_the_actor() {
        let mut n = nets(OBS_DIM + 1);
        let before = n.actor.clone();
        let o = plugged_obs().features();
        let mut x = o.to_vec();
        x.push(0.3);
        let grad = |a: &[f64]| vec![1.0; a.len()];
        actor_update(&mut n, actor_batch(&o, &[false], x), Some(&grad), &AdamConfig::with_lr(1e-2)).unwrap();
        assert_eq!(n.actor, before);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.label().parse::<Algorithm>().unwrap(), a);
        }
        assert!("ppo".parse::<Algorithm>().is_err());
    }

    #[test]
    fn noise_schedule_anneals_then_holds() {
        let c = LearnerConfig::default();
        assert_eq!(c.noise_sigma(0, 100), 0.3);
        assert!((c.noise_sigma(80, 100) - 0.05).abs() < 1e-12);
        assert!((c.noise_sigma(99, 100) - 0.05).abs() < 1e-12);
    }
}
