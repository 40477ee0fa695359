//! `microdata`: build behavior archives, adapt to damage, run Bayesian
//! optimization and cart-pole learning from the command line.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 on configuration or I/O
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use microdata_core::harness::{
    cmd_adapt, cmd_bo, cmd_episode, cmd_eval, cmd_map_build, load_config, resolve_out_dir, AdaptRunConfig, BoRunConfig,
    EpisodeRunConfig, EvalConfig, MapBuildConfig, RunSummary,
};
use microdata_core::testbeds::DamageId;
use microdata_core::Error;
use serde::de::DeserializeOwned;

#[derive(Parser, Debug)]
#[command(name = "microdata", version, about = "Data-efficient learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides MICRODATA_OUT_DIR and the config file).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Illuminate the intact gait space into an elite archive.
    MapBuild {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Evaluate batches on all cores.
        #[arg(long)]
        parallel: bool,
    },
    /// Recover from damage using an archive as prior knowledge.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
        /// intact, d1, d2, d3, d4 or d5.
        #[arg(long)]
        damage: Option<DamageId>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Bayesian optimization of a benchmark objective.
    Bo {
        #[command(flatten)]
        common: Common,
        /// sphere15, sphere2, rastrigin2 or gait-<damage>.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        budget: Option<usize>,
        /// Skip the random-search baseline.
        #[arg(long)]
        no_baseline: bool,
    },
    /// Learn a cart-pole dynamics model and balance the pole.
    Episode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_episodes: Option<usize>,
    },
    /// Evaluate every archive elite under a damage condition.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        damage: Option<DamageId>,
    },
}

fn config_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Error> {
    match path {
        Some(p) => load_config(p),
        None => Ok(T::default()),
    }
}

fn run(cli: Cli) -> Result<RunSummary, Error> {
    match cli.command {
        Command::MapBuild {
            common,
            budget,
            batch_size,
            parallel,
        } => {
            let mut cfg: MapBuildConfig = config_or_default(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.budget = budget.unwrap_or(cfg.budget);
            cfg.map_elites.batch_size = batch_size.unwrap_or(cfg.map_elites.batch_size);
            cfg.map_elites.parallel |= parallel;
            let out = resolve_out_dir(common.out.as_deref(), cfg.out_dir.as_deref());
            cmd_map_build(&cfg, &out)
        }
        Command::Adapt {
            common,
            archive,
            damage,
            budget,
        } => {
            let mut cfg: AdaptRunConfig = config_or_default(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.archive = archive.unwrap_or(cfg.archive);
            cfg.damage = damage.unwrap_or(cfg.damage);
            cfg.adapt.budget = budget.unwrap_or(cfg.adapt.budget);
            let out = resolve_out_dir(common.out.as_deref(), cfg.out_dir.as_deref());
            cmd_adapt(&cfg, &out)
        }
        Command::Bo {
            common,
            objective,
            budget,
            no_baseline,
        } => {
            let mut cfg: BoRunConfig = config_or_default(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.objective = objective.unwrap_or(cfg.objective);
            cfg.budget = budget.unwrap_or(cfg.budget);
            cfg.baseline &= !no_baseline;
            let out = resolve_out_dir(common.out.as_deref(), cfg.out_dir.as_deref());
            cmd_bo(&cfg, &out)
        }
        Command::Episode { common, max_episodes } => {
            let mut cfg: EpisodeRunConfig = config_or_default(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.episode.max_episodes = max_episodes.unwrap_or(cfg.episode.max_episodes);
            let out = resolve_out_dir(common.out.as_deref(), cfg.out_dir.as_deref());
            cmd_episode(&cfg, &out)
        }
        Command::Eval {
            common,
            archive,
            damage,
        } => {
            let mut cfg: EvalConfig = config_or_default(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            cfg.archive = archive.unwrap_or(cfg.archive);
            cfg.damage = damage.unwrap_or(cfg.damage);
            let out = resolve_out_dir(common.out.as_deref(), cfg.out_dir.as_deref());
            cmd_eval(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("output: {}", summary.out_dir.display());
            for m in &summary.metrics {
                println!("{} = {}", m.name, m.value);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_or_io() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
