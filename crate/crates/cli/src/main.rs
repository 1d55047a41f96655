use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use osdrl_cli::config::{load, ExperimentConfig};
use osdrl_cli::{frozenlake, histograms, instability, verify, Outcome, Overrides, Result};

#[derive(Parser)]
#[command(name = "osdrl", version, about = "Tabular one-step distributional RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Projected categorical control against the one-step operator on the toy MDP.
    Instability(RunArgs),
    /// Atom counts and histograms of iterated full and one-step operators.
    Histograms(RunArgs),
    /// One-step categorical Q-learning on Frozen Lake.
    Frozenlake(RunArgs),
    /// Property suites and the target microbenchmark.
    Verify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Iterations or environment steps, depending on the command.
    #[arg(long)]
    steps: Option<u64>,
    /// Output root; files go to `<out>/<experiment>/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            steps: self.steps,
            out: self.out.clone(),
        }
    }
}

fn dispatch<C: ExperimentConfig>(args: &RunArgs, run: fn(&C) -> Result<Outcome>) -> Result<Outcome> {
    let cfg: C = load(&args.config, &args.overrides())?;
    run(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Instability(a) => dispatch(a, instability::run),
        Command::Histograms(a) => dispatch(a, histograms::run),
        Command::Frozenlake(a) => dispatch(a, frozenlake::run),
        Command::Verify(a) => dispatch(a, verify::run),
    };
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            println!("wrote {}", outcome.dir.display());
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
