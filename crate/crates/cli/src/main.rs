use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mixstrat::commands::{cmd_eval, cmd_export, cmd_sweep, cmd_train};
use mixstrat::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "mixstrat", version, about = "Train, mix and evaluate Breakout policies")]
struct Cli {
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override any config key, e.g. `--set total_steps=500000`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one policy with A3C.
    Train {
        /// 1 = full frames; 2 = bricks masked and -1 per life lost.
        #[arg(long)]
        regime: Option<u8>,
        #[arg(long)]
        total_steps: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate a checkpoint or a mixture spec file.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        mixture: Option<PathBuf>,
        #[arg(long)]
        regime: Option<u8>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Sweep the two-strategy weight alpha.
    Sweep {
        #[arg(long)]
        pi1: Option<PathBuf>,
        #[arg(long)]
        pi2: Option<PathBuf>,
        /// Comma-separated weights on pi1.
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Convert CSV outputs to a long table for plotting.
    Export {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn push<T: ToString>(overrides: &mut Vec<(String, String)>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        overrides.push((key.to_string(), v.to_string()));
    }
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut overrides = Vec::new();
    for s in &cli.sets {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    push(&mut overrides, "out", path(&cli.out));
    push(&mut overrides, "seed", cli.seed);
    match &cli.command {
        Command::Train { regime, total_steps, workers } => {
            push(&mut overrides, "regime", *regime);
            push(&mut overrides, "total_steps", *total_steps);
            push(&mut overrides, "workers", *workers);
        }
        Command::Eval { checkpoint, mixture, regime, epsilon, episodes } => {
            push(&mut overrides, "checkpoint", path(checkpoint));
            push(&mut overrides, "mixture", path(mixture));
            push(&mut overrides, "regime", *regime);
            push(&mut overrides, "epsilon", *epsilon);
            push(&mut overrides, "episodes", *episodes);
        }
        Command::Sweep { pi1, pi2, alphas, alpha, epsilon, episodes } => {
            push(&mut overrides, "pi1", path(pi1));
            push(&mut overrides, "pi2", path(pi2));
            push(&mut overrides, "alphas", alphas.clone());
            push(&mut overrides, "alpha", *alpha);
            push(&mut overrides, "epsilon", *epsilon);
            push(&mut overrides, "episodes", *episodes);
        }
        Command::Export { .. } => {}
    }
    let cfg = RunConfig::parse(cli.config.as_deref(), &overrides)?;

    match &cli.command {
        Command::Train { .. } => {
            let outcome = cmd_train(&cfg)?;
            for (id, err) in &outcome.worker_errors {
                eprintln!("warning: worker {id} stopped: {err}");
            }
            let n = outcome.episodes.len();
            let tail = &outcome.episodes[n.saturating_sub(100)..];
            let mean = tail.iter().map(|e| e.episode_reward).sum::<f64>() / tail.len().max(1) as f64;
            println!(
                "trained {} steps, {} episodes, last-100 mean score {:.2}; outputs in {}",
                outcome.checkpoint.global_step,
                n,
                mean,
                cfg.out_dir.display()
            );
        }
        Command::Eval { .. } => {
            let path = cmd_eval(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Sweep { .. } => {
            let rows = cmd_sweep(&cfg)?;
            println!("alpha\tepsilon\tmedian\tmean\tmean_steps\tstuck");
            for r in &rows {
                let s = &r.stats;
                println!(
                    "{}\t{}\t{}\t{:.2}\t{:.1}\t{:.3}",
                    r.alpha, r.epsilon, s.median, s.mean, s.mean_steps, s.stuck_fraction
                );
            }
        }
        Command::Export { inputs, output } => {
            let out = cmd_export(&cfg, inputs, output.as_deref())?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
