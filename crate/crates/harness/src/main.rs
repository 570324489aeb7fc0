use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualnet_harness::{commands, ExperimentConfig, HarnessError, Layout};

#[derive(Parser)]
#[command(name = "dualnet", version, about = "Dual-network predictive uncertainty experiments")]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the data and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train / ID test / OOD test CSVs and a manifest.
    Generate,
    /// Train both networks on the generated data.
    Train,
    /// Predict every split, write predictions and the report.
    Evaluate,
    /// Step-noise experiment: generate, train, evaluate, group separation.
    Hetero,
    /// Render SVG figures from the report and predictions.
    Plot,
    /// generate, train, evaluate and plot.
    RunAll,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    cfg.validate()?;
    let out = Layout::new(&cfg.output.dir);
    match cli.command {
        Command::Generate => {
            let m = commands::generate(&cfg, &out)?;
            for f in &m.files {
                println!("{}: {} rows", out.data(f.split).display(), f.rows);
            }
        }
        Command::Train => {
            let ckpt = commands::train(&cfg, &out)?;
            if let Some(p) = ckpt.history.bnn.last() {
                println!(
                    "epoch {}: bnn train rmse {:.4}, id {:?}, ood {:?}",
                    p.epoch, p.train, p.test_id, p.test_ood
                );
            }
            println!("wrote {}", out.checkpoint().display());
        }
        Command::Evaluate => {
            commands::evaluate(&cfg, &out)?;
            println!("wrote {}", out.report().display());
        }
        Command::Hetero => {
            let s = commands::hetero(&cfg, &out)?;
            println!(
                "median sigma2 ratio {:?}, median sigma1 ratio {:?}",
                s.sigma2_ratio, s.sigma1_ratio
            );
        }
        Command::Plot => {
            for p in commands::plot(&cfg, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::RunAll => {
            commands::run_all(&cfg, &out)?;
            println!("wrote {}", out.report().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
