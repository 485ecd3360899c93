use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use privateyes::protocol::Scheme;
use privateyes_cli::commands::{attack_command, bench_command, default_out_dir, report_command, run_experiment};
use privateyes_cli::{CliError, ExperimentConfig};

/// Federated gaze training with secure aggregation, and a leakage probe.
#[derive(Parser)]
#[command(name = "privateyes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with one scheme; writes metrics.csv, report.json, transcript.ndjson.
    Run {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Attack a recorded transcript; writes reconstruction.json, leakage.csv.
    Attack {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        transcript: PathBuf,
        /// Leak view to attack; defaults to the transcript's scheme.
        #[arg(short, long)]
        scheme: Option<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run every scheme and write the accuracy, leakage and communication tables.
    Report {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Repeat adaptive FL and privateyes over consecutive seeds.
    Bench {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, CliError> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            let out = out.unwrap_or_else(default_out_dir);
            let outcome = run_experiment(&cfg, &out)?;
            if let Some(a) = &outcome.report.abort {
                eprintln!("aborted in round {}: {} ({})", a.round, a.reason, a.detail);
                return Ok(ExitCode::from(2));
            }
            println!("{}", out.display());
        }
        Command::Attack {
            config,
            transcript,
            scheme,
            out,
        } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            let scheme = scheme
                .map(|s| s.parse::<Scheme>())
                .transpose()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let r = attack_command(&cfg, &transcript, scheme, &out.unwrap_or_else(default_out_dir))?;
            println!(
                "{}: mae {:.6} deg, kl {:.6}",
                r.scheme,
                r.mean_mae.unwrap_or_default(),
                r.mean_kl.unwrap_or_default()
            );
        }
        Command::Report { config, out } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            let out = out.unwrap_or_else(default_out_dir);
            report_command(&cfg, &out)?;
            println!("{}", out.display());
        }
        Command::Bench { config, seeds, out } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            let out = out.unwrap_or_else(default_out_dir);
            bench_command(&cfg, seeds, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
