use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtdqn::harness::{
    ablate, emit_events, emit_results, emit_training, evaluate_checkpoint, gradcheck, load_config, run_baselines,
    simulate, train, Checkpoint, ExperimentConfig,
};
use mtdqn::Result;

/// Multimodal fusion + temporal graph + DQN recommender experiments.
#[derive(Parser, Debug)]
#[command(name = "mtdqn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and evaluate it on held-out users.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// The full model against its three ablations.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// The full model against Vanilla-DQN and Concat-Modal.
    Baselines {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random-policy sessions written as a JSONL event log.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck,
}

enum Outcome {
    Done,
    CheckFailed,
}

fn config_with_seed(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let config = load_config(path)?;
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Train { config, seed, out } => {
            let config = config_with_seed(&config, seed)?;
            let output = train(&config)?;
            let m = &output.result.metrics;
            eprintln!(
                "{} seed {}: {} updates in {:.1}s, return {:.3}, NDCG@5 {:.3}, F1 {:.3}",
                config.variant.label(),
                config.seed,
                output.result.updates,
                output.elapsed.as_secs_f64(),
                m.mean_return,
                m.ndcg5,
                m.f1
            );
            report(&emit_training(&output, &out)?);
        }
        Command::Eval { checkpoint, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let result = evaluate_checkpoint(&ckpt)?;
            report(&emit_results(std::slice::from_ref(&result), &ckpt.config, "eval", &out)?);
        }
        Command::Ablate { config, seeds, out } => {
            let config = load_config(&config)?;
            let results = ablate(&config, seeds)?;
            report(&emit_results(&results, &config, "ablate", &out)?);
        }
        Command::Baselines { config, seeds, out } => {
            let config = load_config(&config)?;
            let results = run_baselines(&config, seeds)?;
            report(&emit_results(&results, &config, "baselines", &out)?);
        }
        Command::Simulate { config, out } => {
            let config = load_config(&config)?;
            let sessions = simulate(&config)?;
            report(&[emit_events(&sessions, &out)?]);
        }
        Command::Gradcheck => {
            let r = gradcheck()?;
            print!("{}", r.render());
            if !r.passed() {
                return Ok(Outcome::CheckFailed);
            }
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
