use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rangesel::harness::{self, ExperimentConfig, TrainOptions};
use rangesel::measurecheck::render_measure_table;
use serde_json::json;

/// Selectivity-learning experiments driven by one JSON config.
#[derive(Parser)]
#[command(name = "rangesel", version)]
struct Cli {
    /// JSON config file; keys it omits take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set workload.n_train=5000`. Values are
    /// parsed as JSON, falling back to a plain string. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or ingest the dataset.
    GenData,
    /// Sample and label the train and test workloads.
    GenWorkload,
    /// Train every configured estimator.
    Train {
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate on the test workloads and write the report.
    Eval,
    /// Run additivity and monotonicity checks.
    CheckMeasure,
    /// Print the last report.
    Report {
        #[arg(long)]
        json: bool,
    },
    /// All stages in order.
    Run,
    /// Print the resolved config.
    PrintConfig,
}

fn run(cli: Cli) -> rangesel::Result<()> {
    let cfg: ExperimentConfig = harness::load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::GenData => {
            let ds = harness::cmd_gen_data(&cfg)?;
            println!(
                "wrote {} ({} rows, {} columns)",
                cfg.paths().data().display(),
                ds.n_rows(),
                ds.dims()
            );
        }
        Command::GenWorkload => {
            let wl = harness::cmd_gen_workload(&cfg)?;
            for (tag, n) in &wl.meta.counts {
                println!("{tag}: {n} queries");
            }
            if wl.meta.c2_unbounded {
                println!("c2: unbounded");
            } else if let Some(c) = wl.meta.c2 {
                println!("c2: {c:.4}");
            }
        }
        Command::Train { resume } => {
            for m in harness::cmd_train(&cfg, TrainOptions { resume })? {
                match m.loss_trace.as_ref().and_then(|t| t.last()) {
                    Some(l) => println!("{}: final loss {l:.6}", m.name),
                    None => println!("{}: built", m.name),
                }
            }
        }
        Command::Eval => print!("{}", harness::render_report(&harness::cmd_eval(&cfg)?)),
        Command::CheckMeasure => print!("{}", render_measure_table(&harness::cmd_check_measure(&cfg)?)),
        Command::Report { json } => {
            let r = harness::cmd_report(&cfg)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                print!("{}", harness::render_report(&r));
            }
        }
        Command::Run => print!("{}", harness::render_report(&harness::run_pipeline(&cfg)?)),
        Command::PrintConfig => println!("{}", serde_json::to_string_pretty(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
