use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use manygoals_cli::{default_run_dir, parse_config, run, Command, OUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "manygoals", version, about = "Many-goals reinforcement learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Count feasible states and write them as a fixture.
    Enumerate(Common),
    /// Train the goal-conditioned agent and track mastery.
    Mastery(Common),
    /// Mastery with a fraction of goals never trained on.
    Holdout(Common),
    /// Learn a trunk by many-goals mastery or reward prediction.
    Pretrain(Common),
    /// Actor-critic on the main task, optionally from a pretrained trunk.
    Finetune(Common),
    /// Actor-critic with an auxiliary head.
    Aux(Common),
    /// Evaluate mastery of a checkpoint.
    Eval(Common),
    /// Aggregate metric files across seeds and arms.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed; wins over the file and overrides.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Enumerate(c) => (Command::Enumerate, c),
        Cmd::Mastery(c) => (Command::Mastery, c),
        Cmd::Holdout(c) => (Command::Holdout, c),
        Cmd::Pretrain(c) => (Command::Pretrain, c),
        Cmd::Finetune(c) => (Command::Finetune, c),
        Cmd::Aux(c) => (Command::Aux, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Compare(c) => (Command::Compare, c),
    };
    let result = parse_config(common.config.as_deref(), &common.overrides)
        .map_err(anyhow::Error::from)
        .and_then(|mut cfg| {
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let dir = common.out.unwrap_or_else(|| {
                let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                default_run_dir(&root, command, cfg.seed)
            });
            run(command, &cfg, &dir)
        });
    match result {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            println!("run directory: {}", summary.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
