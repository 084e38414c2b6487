use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fedmeld::harness::{compare_report, load_config, run_experiment, solve, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "fedmeld", version, about = "Federated learning over LEO satellites: simulate, optimize, compare")]
struct Cli {
    /// Override the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for metrics CSV and JSON outputs (overrides `output.dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured scheme; writes `<stem>.csv` and `<stem>.json`.
    Run {
        config: PathBuf,
        /// Run this scheme instead of the configured one.
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Solve the staleness interval and mixing ratio and print the report.
    SolveScmr { config: PathBuf },
    /// Tabulate final accuracy, traffic and time-to-threshold of metrics files.
    Compare {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Accuracy level for the time-to-threshold column.
        #[arg(long)]
        threshold: Option<f64>,
        /// Print JSON instead of an aligned table.
        #[arg(long)]
        json: bool,
    },
}

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load(cli: &Cli, path: &PathBuf) -> anyhow::Result<RunConfig> {
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Run { config, scheme } => {
            let mut cfg = load(cli, config)?;
            if let Some(s) = scheme {
                cfg.scheme = s.clone();
            }
            let res = run_experiment(&cfg, cli.out_dir.as_deref())?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&res.summary)?))?;
            log::info!("metrics: {}", res.csv_path.display());
            log::info!("report: {}", res.json_path.display());
        }
        Command::SolveScmr { config } => {
            let cfg = load(cli, config)?;
            let report = solve(&cfg)?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(dir) = &cli.out_dir {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(format!("{}_scmr.json", cfg.stem()));
                std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
                log::info!("report: {}", path.display());
            }
            emit(&format!("{text}\n"))?;
        }
        Command::Compare { metrics, threshold, json } => {
            let table = compare_report(metrics, *threshold)?;
            if *json {
                emit(&format!("{}\n", serde_json::to_string_pretty(&table)?))?;
            } else {
                emit(&table.to_string())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<fedmeld::Error>().map_or("error", fedmeld::Error::kind);
            let message = format!("{e:#}");
            let reason = serde_json::json!({ "error": kind, "message": message });
            eprintln!("{reason}");
            ExitCode::from(2)
        }
    }
}
