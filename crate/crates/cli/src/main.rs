use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use gradual_lstm_cli::config::OUTPUT_ROOT_ENV;
use gradual_lstm_cli::{cmd_ablate, cmd_eval, cmd_infolab, cmd_train, LoadedConfig, RunOptions};

/// Train gradually grown LSTM language models and check their information-theoretic claims.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every phase of a config, resuming completed phases.
    Train {
        config: PathBuf,
        /// Stop after this phase.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Perplexity of a checkpoint on a corpus split.
    Eval {
        config: PathBuf,
        checkpoint: PathBuf,
        /// train, valid or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluation window length; defaults to the config's.
        #[arg(long)]
        bptt: Option<usize>,
    },
    /// Train the full method and its ablations side by side.
    Ablate { config: PathBuf },
    /// Run an information-theory check suite.
    Infolab { spec: PathBuf },
}

fn run(cli: Cli) -> Result<bool> {
    let mut opts = RunOptions::from_env();
    opts.verbose = true;
    match cli.command {
        Command::Train { config, stop_after } => {
            let cfg = LoadedConfig::from_file(&config)?;
            opts.stop_after = stop_after;
            let run = cmd_train(&cfg, &opts)?;
            for o in &run.outcomes {
                println!(
                    "phase {} layers {} best_valid_ppl {:.4}{}",
                    o.phase,
                    o.params.num_layers(),
                    o.best_valid_perplexity,
                    if o.resumed { " (resumed)" } else { "" }
                );
            }
            println!("run directory: {}", run.run_dir.display());
        }
        Command::Eval {
            config,
            checkpoint,
            split,
            bptt,
        } => {
            let cfg = LoadedConfig::from_file(&config)?;
            let r = cmd_eval(&cfg, &checkpoint, &split, bptt)?;
            println!(
                "split {} tokens {} nll {:.6} perplexity {:.4}",
                r.split, r.tokens, r.nll, r.perplexity
            );
        }
        Command::Ablate { config } => {
            let cfg = LoadedConfig::from_file(&config)?;
            let report = cmd_ablate(&cfg, &opts)?;
            print!("{}", report.table());
        }
        Command::Infolab { spec } => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
            let report = cmd_infolab(&spec, root.as_deref())?;
            for c in &report.checks {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                println!("{mark} {} [{}] {}", c.name, c.kind, c.detail);
            }
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
