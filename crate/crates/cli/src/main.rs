use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mapo_core::eval::{axis_breakdown, turn_return_profile};
use mapo_core::io::checkpoint::{read_policy, write_policy};
use mapo_core::io::config::load_config;
use mapo_core::io::csv::{
    advantage_rows, write_advantages, write_evaluation, write_metrics, write_turn_profile,
};
use mapo_core::io::log::{read_trajectories, write_trajectories, LoggedEpisode, LoggedGroup};
use mapo_core::policy::PolicyParams;
use mapo_core::rng::derive_seed;
use mapo_core::sim::{run_episode_with, sample_scenario, ActionSelection, EpisodeStatus};
use mapo_core::trainer::{train_with, Execution, Mode, TrainConfig};

// Keeps evaluation scenarios apart from the ones drawn during training.
const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Parser)]
#[command(
    name = "mapo",
    version,
    about = "Mixed-advantage policy optimisation on a simulated empathy dialogue"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy; writes metrics.csv and policy.txt
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "mapo-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Train every mode on shared seeds; writes metrics_<mode>.csv per mode
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "mapo-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Play fresh scenarios; writes evaluation.csv, turn_returns.csv and trajectories.jsonl
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "mapo-out")]
        out: PathBuf,
        /// Policy checkpoint; the uniform policy if omitted
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Episode count, played in groups of `group_size` per scenario
        #[arg(long, default_value_t = 128)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Take the most likely action instead of sampling
        #[arg(long)]
        greedy: bool,
    },
    /// Per-turn returns and advantages of a trajectory log, as CSV
    Advantages {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for advantages.csv; stdout if omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one logged episode turn by turn
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        episode: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            out,
            seed,
            mode,
        } => {
            let mut cfg = config_from(config.as_deref(), seed)?;
            if let Some(mode) = mode {
                cfg.mode = mode;
            }
            cmd_train(&cfg, &out)
        }
        Command::Compare { config, out, seed } => {
            cmd_compare(&config_from(config.as_deref(), seed)?, &out)
        }
        Command::Evaluate {
            config,
            out,
            policy,
            episodes,
            seed,
            greedy,
        } => {
            let cfg = config_from(config.as_deref(), seed)?;
            let selection = if greedy {
                ActionSelection::Greedy
            } else {
                ActionSelection::Sample
            };
            cmd_evaluate(&cfg, &out, policy.as_deref(), episodes, selection)
        }
        Command::Advantages { log, config, out } => {
            cmd_advantages(&config_from(config.as_deref(), None)?, &log, out.as_deref())
        }
        Command::Replay { log, episode } => cmd_replay(&log, episode),
    }
}

fn config_from(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p).with_context(|| format!("loading config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn cmd_train(cfg: &TrainConfig, out: &Path) -> Result<()> {
    let result = train_with(cfg, Execution::Parallel)?;
    write_metrics(&result.metrics.records, create(out, "metrics.csv")?)?;
    write_policy(&result.policy, create(out, "policy.txt")?)?;
    let m = &result.metrics;
    println!(
        "{}: {} updates, mean reward first 20 {:.4}, last 20 {:.4}, max grad norm {:.4}",
        cfg.mode,
        m.records.len(),
        m.head_mean_reward(20),
        m.tail_mean_reward(20),
        m.max_grad_norm()
    );
    Ok(())
}

fn cmd_compare(cfg: &TrainConfig, out: &Path) -> Result<()> {
    for mode in Mode::ALL {
        let run_cfg = TrainConfig {
            mode,
            ..cfg.clone()
        };
        let result = train_with(&run_cfg, Execution::Parallel)?;
        write_metrics(
            &result.metrics.records,
            create(out, &format!("metrics_{mode}.csv"))?,
        )?;
        let m = &result.metrics;
        println!(
            "{:<13} last-20 reward {:.4}  max grad norm {:.4}",
            mode.name(),
            m.tail_mean_reward(20),
            m.max_grad_norm()
        );
    }
    Ok(())
}

fn cmd_evaluate(
    cfg: &TrainConfig,
    out: &Path,
    policy_path: Option<&Path>,
    episodes: usize,
    selection: ActionSelection,
) -> Result<()> {
    let k = cfg.group_size;
    if episodes == 0 || !episodes.is_multiple_of(k) {
        bail!("--episodes must be a positive multiple of group_size ({k}), got {episodes}");
    }
    let policy = match policy_path {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            read_policy(BufReader::new(file))
                .with_context(|| format!("reading policy {}", p.display()))?
        }
        None => PolicyParams::zeros(),
    };

    let mut played = Vec::with_capacity(episodes);
    let mut logged = Vec::with_capacity(episodes);
    for g in 0..(episodes / k) as u64 {
        let scenario = sample_scenario(derive_seed(cfg.seed, &[EVAL_STREAM, g, 0]), &cfg.env);
        let base = derive_seed(cfg.seed, &[EVAL_STREAM, g, 1]);
        for i in 0..k as u64 {
            let outcome = run_episode_with(
                &policy,
                &scenario,
                base.wrapping_add(i),
                &cfg.env,
                selection,
            )?;
            logged.push(LoggedEpisode {
                episode: g * k as u64 + i,
                group: g,
                scenario_seed: scenario.seed,
                outcome: outcome.clone(),
            });
            played.push((scenario, outcome));
        }
    }

    let rows = axis_breakdown(&played)?;
    write_evaluation(&rows, create(out, "evaluation.csv")?)?;
    let outcomes: Vec<_> = played.iter().map(|(_, o)| o.clone()).collect();
    write_turn_profile(
        &turn_return_profile(&outcomes, cfg.advantage.gamma)?,
        create(out, "turn_returns.csv")?,
    )?;
    let records = write_trajectories(&logged, create(out, "trajectories.jsonl")?)?;

    let wins = outcomes
        .iter()
        .filter(|o| o.status == EpisodeStatus::Success)
        .count();
    println!(
        "{episodes} episodes, {records} turns, success rate {:.3}",
        wins as f64 / episodes as f64
    );
    for r in &rows {
        let align = r
            .mean_alignment
            .map_or("-".to_owned(), |a| format!("{a:.3}"));
        println!(
            "  {:<10} episodes {:>4}  success {:.3}  alignment {align}",
            r.axis.name(),
            r.episodes,
            r.success_rate
        );
    }
    Ok(())
}

fn load_log(path: &Path) -> Result<Vec<LoggedGroup>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_trajectories(BufReader::new(file))
        .with_context(|| format!("reading log {}", path.display()))
}

fn cmd_advantages(cfg: &TrainConfig, log: &Path, out: Option<&Path>) -> Result<()> {
    let groups = load_log(log)?;
    let rows = advantage_rows(&groups, &cfg.advantage)?;
    match out {
        Some(dir) => write_advantages(&rows, create(dir, "advantages.csv")?)?,
        None => write_advantages(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_replay(log: &Path, episode: u64) -> Result<()> {
    let groups = load_log(log)?;
    let Some(ep) = groups
        .iter()
        .flat_map(|g| &g.episodes)
        .find(|e| e.episode == episode)
    else {
        bail!("episode {episode} not found in {}", log.display());
    };
    let mut w = io::stdout().lock();
    writeln!(
        w,
        "episode {} group {} scenario_seed {}: {} after {} turns",
        ep.episode, ep.group, ep.scenario_seed, ep.outcome.status, ep.outcome.turns_used
    )?;
    writeln!(
        w,
        "{:>4}  {:<10}  {:<25}  {:<25}  {:>9}  {:>6}",
        "turn", "action", "state", "delta", "reward", "streak"
    )?;
    let triple = |v: [f64; 3]| format!("({:7.3},{:7.3},{:7.3})", v[0], v[1], v[2]);
    for r in &ep.outcome.turn_records {
        writeln!(
            w,
            "{:>4}  {:<10}  {:<25}  {:<25}  {:>9.4}  {:>6}",
            r.turn_index,
            r.action.name(),
            triple(r.state_before.to_array()),
            triple(r.delta.to_array()),
            r.reward,
            r.regression_streak
        )?;
    }
    writeln!(
        w,
        "final state {}  potential {:.4}",
        triple(ep.outcome.final_state.to_array()),
        ep.outcome.final_potential
    )?;
    Ok(())
}
