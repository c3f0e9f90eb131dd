use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;
use v2g_core::global_model::GlobalModel;
use v2g_core::grid_env::GridEnv;
use v2g_core::harness::{run_experiment, sample_fleet, ExperimentConfig};
use v2g_core::learners::{Algorithm, Trainer};
use v2g_core::parallel::Execution;
use v2g_core::replay::{ReplayBuffer, Transition};
use v2g_core::reward::agent_rewards;
use v2g_core::rng::{stream, streams};

struct Fixture {
    trainer: Trainer,
    buffer: ReplayBuffer,
    model: GlobalModel,
}

fn fixture(alg: Algorithm, n: usize) -> Fixture {
    let mut cfg = ExperimentConfig {
        algorithm: alg,
        n_agents: n,
        seed: Some(7),
        ..Default::default()
    };
    cfg.learner.minibatch_k = 64;
    let profiles = sample_fleet(&cfg, 7).unwrap();
    let w_soc: Vec<f64> = profiles.iter().map(|p| p.w_soc).collect();
    let mut env = GridEnv::new(&cfg.grid, profiles.clone(), cfg.reward.window).unwrap();
    let model = GlobalModel::new(&cfg.model, &cfg.grid, &profiles, &cfg.reward).unwrap();
    let bounds: Vec<_> = (0..n).map(|i| env.bounds(i)).collect();
    let mut rng = stream(7, streams::TRAINER);
    let trainer = Trainer::new(alg, &cfg.learner, bounds.clone(), &mut rng, stream(7, streams::MODEL)).unwrap();
    let mut buffer = ReplayBuffer::new(cfg.learner.buffer_capacity).unwrap();
    let mut env_rng = stream(7, streams::ENV_TRAIN);
    while buffer.len() < cfg.learner.training_gate() {
        env.reset(&mut env_rng);
        while !env.is_done() {
            let obs = env.observe_all();
            let grid = env.grid_context();
            let actions: Vec<f64> = bounds.iter().map(|b| rng.random_range(b.min..=b.max)).collect();
            let record = env.step(&actions, &mut env_rng).unwrap();
            let rewards = agent_rewards(&record, &w_soc, &cfg.reward);
            let next_obs = env.observe_all();
            let done = next_obs.iter().map(|o| !o.is_plugged() || env.is_done()).collect();
            buffer
                .push(Transition {
                    obs,
                    actions: record.flows.clone(),
                    rewards,
                    next_obs,
                    done,
                    grid,
                    next_grid: env.grid_context(),
                })
                .unwrap();
        }
    }
    Fixture { trainer, buffer, model }
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for alg in Algorithm::ALL {
        let fx = fixture(alg, 10);
        for exec in [Execution::Parallel, Execution::Sequential] {
            group.bench_function(format!("{}/{exec:?}", alg.label()), |b| {
                let mut rng = stream(11, streams::TRAINER);
                b.iter_batched(
                    || fx.trainer.clone().with_execution(exec),
                    |mut t| t.train_step(&fx.buffer, &fx.model, &mut rng).unwrap(),
                    BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

fn short_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    let mut cfg = ExperimentConfig {
        algorithm: Algorithm::DtMaddpg,
        n_agents: 10,
        episodes: 12,
        eval_episodes: 1,
        seed: Some(3),
        ..Default::default()
    };
    cfg.learner.minibatch_k = 16;
    for exec in [Execution::Parallel, Execution::Sequential] {
        group.bench_function(format!("dt-maddpg/{exec:?}"), |b| {
            b.iter(|| run_experiment(&cfg, None, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, train_step, short_run);
criterion_main!(benches);
