//! Experiment orchestration: the training loop tying environment, learners,
//! global model and message accounting together, evaluation, sweeps and the
//! CSV/JSON outputs.

mod check;
mod config;
mod metrics;
mod output;
mod sweep;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use check::{check_outputs, CheckReport};
pub use config::{ExperimentConfig, SweepParam, SweepSpec};
pub use metrics::{aggregated_revenue, fossil_energy, fossil_variance, success_rate, utilisation, MetricsSummary};
pub use output::{DepartureRow, TrainingRow};
pub use sweep::{spearman, sweep, SweepRow};

use crate::comms::{self, load_distribution, MessageLog, Network, ScalingPoint, TrafficModel};
use crate::global_model::{GlobalModel, ModelMode};
use crate::grid_env::{sample_ev_profile, Departure, EvProfile, GridEnv, StepRecord, StepRow};
use crate::learners::Trainer;
use crate::parallel::Execution;
use crate::replay::{ReplayBuffer, Transition};
use crate::reward::agent_rewards;
use crate::rng::{stream, streams, SimRng};
use crate::Result;

/// Everything a run produces, in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: MetricsSummary,
    pub training: Vec<TrainingRow>,
    pub stability: Vec<StepRow>,
    pub evaluation: Vec<StepRow>,
    pub departures: Vec<DepartureRow>,
    pub network: Network,
    pub messages: MessageLog,
    pub scaling: Vec<ScalingPoint>,
    pub trainer_checksum: u64,
}

/// Saved learner state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub episode: usize,
    pub trainer: Trainer,
    pub rng: SimRng,
}

/// Draws the fleet shared by every algorithm run with this seed.
pub fn sample_fleet(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<EvProfile>> {
    let mut rng = stream(seed, streams::FLEET);
    (0..cfg.n_agents).map(|_| sample_ev_profile(&mut rng, &cfg.fleet)).collect()
}

/// Trains for `cfg.episodes` episodes, evaluates greedily and, when `out` is
/// given, writes every output file there. Nothing is written if the config
/// is invalid.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>, exec: Execution) -> Result<RunOutcome> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let profiles = sample_fleet(cfg, seed)?;
    let w_soc: Vec<f64> = profiles.iter().map(|p| p.w_soc).collect();
    let n = profiles.len();

    let mut env = GridEnv::new(&cfg.grid, profiles.clone(), cfg.reward.window)?;
    let mut model = GlobalModel::new(&cfg.model, &cfg.grid, &profiles, &cfg.reward)?;
    let bounds = (0..n).map(|i| env.bounds(i)).collect();
    let mut rng = stream(seed, streams::TRAINER);
    let mut trainer = Trainer::new(cfg.algorithm, &cfg.learner, bounds, &mut rng, stream(seed, streams::MODEL))?
        .with_execution(exec);
    let mut buffer = ReplayBuffer::new(cfg.learner.buffer_capacity)?;
    let network = Network::generate(n, &cfg.comms, &mut stream(seed, streams::TOPOLOGY))?;
    let mut messages = MessageLog::new(network.topology.n());
    let mut env_rng = stream(seed, streams::ENV_TRAIN);

    let mut training = Vec::with_capacity(cfg.episodes);
    let mut stability = Vec::with_capacity(cfg.episodes * crate::grid_env::STEPS_PER_EPISODE);
    let mut checkpoints = Vec::new();
    {
        let mut traffic = TrafficModel::new(&network, cfg.algorithm, cfg.comms.sync_interval);
        let mut global_step = 0usize;
        for episode in 0..cfg.episodes {
            env.reset(&mut env_rng);
            let sigma = cfg.learner.noise_sigma(episode, cfg.episodes);
            let mut reward_sum = 0.0;
            let (mut closs, mut aloss, mut updates) = (0.0, 0.0, 0usize);
            while !env.is_done() {
                let obs = env.observe_all();
                let grid = env.grid_context();
                let actions = trainer.act(&obs, sigma, &mut rng)?;
                let record = env.step(&actions, &mut env_rng)?;
                let rewards = agent_rewards(&record, &w_soc, &cfg.reward);
                reward_sum += rewards.iter().sum::<f64>();
                let next_obs = env.observe_all();
                let done = next_obs.iter().map(|o| !o.is_plugged() || env.is_done()).collect();
                if model.mode() == ModelMode::Learned {
                    for i in 0..n {
                        if record.active[i] {
                            model.observe_battery(i, obs[i].soc, record.flows[i], next_obs[i].soc);
                        }
                    }
                    model.observe_grid(record.step, record.base_load, record.renewable_available);
                }
                stability.push(StepRow::from_record(episode, &record));
                buffer.push(Transition {
                    obs,
                    actions,
                    rewards,
                    next_obs,
                    done,
                    grid,
                    next_grid: env.grid_context(),
                })?;
                if let Some(s) = trainer.train_step(&buffer, &model, &mut rng)? {
                    closs += s.critic_loss;
                    aloss += s.actor_loss;
                    updates += 1;
                }
                traffic.record_step(&mut messages, global_step)?;
                global_step += 1;
            }
            let per = |x: f64| if updates > 0 { x / updates as f64 } else { 0.0 };
            training.push(TrainingRow {
                episode,
                mean_reward: if n > 0 { reward_sum / n as f64 } else { 0.0 },
                critic_loss: per(closs),
                actor_loss: per(aloss),
                train_steps: updates,
            });
            if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0 {
                checkpoints.push(Checkpoint {
                    episode: episode + 1,
                    trainer: trainer.clone(),
                    rng: rng.clone(),
                });
            }
        }
    }

    let (eval_records, eval_departures) = evaluate(cfg, seed, &profiles, &trainer)?;
    let mut evaluation = Vec::new();
    let mut days = Vec::new();
    let mut departures = Vec::new();
    for (e, (recs, deps)) in eval_records.iter().zip(&eval_departures).enumerate() {
        evaluation.extend(recs.iter().map(|r| StepRow::from_record(e, r)));
        days.push(recs.iter().map(|r| r.p_grid).collect::<Vec<_>>());
        departures.extend(deps.iter().map(|d| DepartureRow::new(e, d)));
    }
    let all_records: Vec<StepRecord> = eval_records.into_iter().flatten().collect();
    let all_departures: Vec<Departure> = eval_departures.into_iter().flatten().collect();

    let shares = load_distribution(&messages);
    let per_step = messages.mean_per_step();
    let summary = MetricsSummary {
        algorithm: cfg.algorithm,
        n_agents: n,
        episodes: cfg.episodes,
        seed,
        eval_episodes: cfg.eval_episodes,
        renewable_utilisation_pct: utilisation(&all_records),
        owner_goal_success_rate_pct: success_rate(&all_departures),
        departures: all_departures.len(),
        aggregated_user_revenue: aggregated_revenue(&all_records),
        fossil_variance: fossil_variance(&days),
        fossil_energy: fossil_energy(&days),
        messages_total: messages.total_messages(),
        messages_per_step: per_step,
        messages_per_agent_per_step: if n > 0 { per_step / n as f64 } else { 0.0 },
        max_node_share_pct: shares.iter().copied().fold(0.0, f64::max),
        node_share_gini: comms::gini(&shares),
        node_share_pct: shares,
        final_mean_reward: training.last().map_or(0.0, |t| t.mean_reward),
    };

    let mut scaling = Vec::new();
    let mut sizes = cfg.scaling_sizes.clone();
    if !sizes.contains(&n) {
        sizes.push(n);
    }
    sizes.sort_unstable();
    for &size in &sizes {
        let mut topo_rng = stream(seed, streams::TOPOLOGY);
        scaling.push(comms::scaling_point(
            cfg.algorithm,
            size,
            &cfg.comms,
            cfg.comms.sync_interval * 10,
            &mut topo_rng,
        )?);
    }

    let outcome = RunOutcome {
        summary,
        training,
        stability,
        evaluation,
        departures,
        network,
        messages,
        scaling,
        trainer_checksum: trainer.checksum(),
    };
    if let Some(dir) = out {
        output::write_run(dir, cfg, &outcome, &checkpoints)?;
    }
    Ok(outcome)
}

type EvalResult = (Vec<Vec<StepRecord>>, Vec<Vec<Departure>>);

/// Greedy episodes on the evaluation stream, which every algorithm shares
/// for a given seed.
fn evaluate(cfg: &ExperimentConfig, seed: u64, profiles: &[EvProfile], trainer: &Trainer) -> Result<EvalResult> {
    let mut env = GridEnv::new(&cfg.grid, profiles.to_vec(), cfg.reward.window)?;
    let mut env_rng = stream(seed, streams::ENV_EVAL);
    let mut unused = stream(seed, streams::ENV_EVAL);
    let mut records = Vec::with_capacity(cfg.eval_episodes);
    let mut departures = Vec::with_capacity(cfg.eval_episodes);
    for _ in 0..cfg.eval_episodes {
        env.reset(&mut env_rng);
        let mut recs = Vec::new();
        let mut deps = Vec::new();
        while !env.is_done() {
            let actions = trainer.act(&env.observe_all(), 0.0, &mut unused)?;
            let r = env.step(&actions, &mut env_rng)?;
            deps.extend(r.departures.iter().cloned());
            recs.push(r);
        }
        records.push(recs);
        departures.push(deps);
    }
    Ok((records, departures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Algorithm;

    fn tiny(alg: Algorithm, n: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            algorithm: alg,
            n_agents: n,
            episodes: 2,
            seed: Some(11),
            eval_episodes: 2,
            ..Default::default()
        };
        c.learner.minibatch_k = 4;
        c.learner.gate_multiplier = 2;
        c.learner.k_prime = 2;
        c
    }

    #[test]
    fn smoke_run_writes_consistent_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Algorithm::Il, 1);
        cfg.episodes = 1;
        let out = run_experiment(&cfg, Some(dir.path()), Execution::Sequential).unwrap();
        assert_eq!(out.stability.len(), 24);
        for f in [
            "stability.csv",
            "evaluation.csv",
            "departures.csv",
            "training.csv",
            "network_load.csv",
            "messages_vs_n.csv",
            "summary.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let stab = std::fs::read_to_string(dir.path().join("stability.csv")).unwrap();
        assert_eq!(stab.lines().count(), 1 + 24);
        check_outputs(dir.path()).unwrap();
    }

    #[test]
    fn runs_are_deterministic() {
        for alg in Algorithm::ALL {
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            let cfg = tiny(alg, 3);
            run_experiment(&cfg, Some(a.path()), Execution::Sequential).unwrap();
            run_experiment(&cfg, Some(b.path()), Execution::Parallel).unwrap();
            let ja = std::fs::read(a.path().join("summary.json")).unwrap();
            let jb = std::fs::read(b.path().join("summary.json")).unwrap();
            assert_eq!(ja, jb, "{alg}");
        }
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Algorithm::Il, 2);
        cfg.learner.gamma = 1.5;
        assert!(run_experiment(&cfg, Some(&dir.path().join("out")), Execution::Sequential).is_err());
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn empty_fleet_matches_no_ev_baseline() {
        let cfg = tiny(Algorithm::Il, 0);
        let out = run_experiment(&cfg, None, Execution::Sequential).unwrap();
        // Oracle: replay the evaluation stream without any EVs.
        let mut env = GridEnv::new(&cfg.grid, vec![], cfg.reward.window).unwrap();
        let mut rng = stream(11, streams::ENV_EVAL);
        let (mut used, mut avail) = (0.0, 0.0);
        for _ in 0..cfg.eval_episodes {
            env.reset(&mut rng);
            while !env.is_done() {
                let ctx = env.grid_context();
                avail += ctx.renewable_available;
                used += ctx.renewable_available.min(ctx.base_load);
                env.step(&[], &mut rng).unwrap();
            }
        }
        assert!((out.summary.renewable_utilisation_pct - 100.0 * used / avail).abs() < 1e-9);
    }

    #[test]
    fn checkpoints_are_written_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Algorithm::Maddpg, 2);
        cfg.checkpoint_every = 1;
        let out = run_experiment(&cfg, Some(dir.path()), Execution::Sequential).unwrap();
        let path = dir.path().join("checkpoints").join("episode_0002.json");
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(ck.episode, 2);
        assert_eq!(ck.trainer.checksum(), out.trainer_checksum);
    }
}
