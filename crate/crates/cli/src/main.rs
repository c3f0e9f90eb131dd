use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use v2g_core::harness::{self, ExperimentConfig, SweepParam};
use v2g_core::learners::Algorithm;
use v2g_core::parallel::Execution;

#[derive(Parser)]
#[command(name = "v2g", version, about = "Multi-agent V2G coordination experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm, evaluate it and write all outputs.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat runs over a list of parameter values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Seeds per sweep point.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Recompute summary.json fields from the CSVs in an output directory.
    Check {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// il, maddpg or dt-maddpg
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, Execution)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(a) = &self.algo {
            cfg.algorithm = a.parse::<Algorithm>()?;
        }
        if let Some(n) = self.agents {
            cfg.n_agents = n;
        }
        if let Some(m) = self.episodes {
            cfg.episodes = m;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.out.is_some() {
            cfg.out_dir = self.out.clone();
        }
        cfg.validate()?;
        let exec = if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        Ok((cfg, exec))
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { common } => {
            let (cfg, exec) = common.load()?;
            let out = cfg.out_dir.clone();
            let run = harness::run_experiment(&cfg, out.as_deref(), exec)?;
            println!("{}", serde_json::to_string_pretty(&run.summary)?);
        }
        Command::Sweep {
            common,
            param,
            values,
            seeds,
        } => {
            let (cfg, exec) = common.load()?;
            let spec = cfg.sweep.clone();
            let param = match (param, &spec) {
                (Some(p), _) => p.parse::<SweepParam>()?,
                (None, Some(s)) => s.param,
                (None, None) => bail!("no sweep parameter given (use --param or a [sweep] table)"),
            };
            let values = values
                .or_else(|| spec.as_ref().map(|s| s.values.clone()))
                .context("no sweep values given")?;
            let seeds = seeds.or(spec.map(|s| s.seeds_per_point)).unwrap_or(5);
            let (rows, _) = harness::sweep(&cfg, param, &values, seeds, cfg.out_dir.as_deref(), exec)?;
            for r in rows {
                println!(
                    "{}={:<6} {:<10} util {:>7.3}%  success {:>7.3}%  revenue {:>10.3}  fossil var {:>9.3}",
                    r.param,
                    r.value,
                    r.algorithm,
                    r.renewable_utilisation_pct,
                    r.owner_goal_success_rate_pct,
                    r.aggregated_user_revenue,
                    r.fossil_variance
                );
            }
        }
        Command::Check { out } => {
            let report = harness::check_outputs(&out)?;
            for i in &report.items {
                println!("ok  {:<28} {}", i.field, i.reported);
            }
        }
    }
    Ok(())
}
