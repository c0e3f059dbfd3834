mod args;
mod evaluate;
mod inspect;
mod manifest;
mod rollout;
mod simulate;
mod train;

use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use pdelab::emulator::Phase;

use args::{Cli, Command, Simulate};
use manifest::Manifest;

fn main() -> ExitCode {
    // Usage errors exit with 2 inside `parse`.
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Simulate(Simulate::Ks(a)) => simulate::run_ks(&simulate::ks_run(a), &a.out),
        Command::Simulate(Simulate::Beta(a)) => simulate::run_beta(&simulate::beta_run(a), &a.out),
        Command::Pretrain(a) => train::command(a, Phase::Pretrain),
        Command::Finetune(a) => train::command(a, Phase::Finetune),
        Command::Replay(a) => replay(&a.manifest, &a.out),
        Command::Rollout(a) => rollout::command(a),
        Command::Evaluate(e) => evaluate::command(e),
        Command::Inspect(a) => inspect::command(&a.file),
    }
}

/// Re-runs a simulate or training manifest after checking its inputs.
fn replay(path: &Path, out: &Path) -> Result<()> {
    let m = Manifest::load(path)?;
    m.verify_inputs()?;
    match m.command.as_str() {
        "simulate ks" => simulate::run_ks(&serde_json::from_value(m.config)?, out),
        "simulate beta" => {
            let mut run: simulate::BetaRun = serde_json::from_value(m.config)?;
            run.dump = None;
            simulate::run_beta(&run, out)
        }
        "pretrain" | "finetune" => {
            let run: train::TrainRun = serde_json::from_value(m.config)?;
            let data: Vec<&str> = m
                .inputs
                .iter()
                .filter(|i| i.conditioning.is_some())
                .map(|i| i.path.as_str())
                .collect();
            let (shards, inputs, _) = train::load_data(&data)?;
            train::execute(&run, shards, inputs, out)
        }
        other => bail!("replay supports simulate, pretrain and finetune manifests, not '{other}'"),
    }
}
