use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semmap::cli_service::{self, CliError, SnapshotSource};

#[derive(Parser)]
#[command(name = "semmap", version, about = "Object-level semantic mapping from sensor logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a run log and write snapshot, events, map and report.
    Replay {
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate a synthetic run log plus ground truth.
    Simulate {
        /// Scenario file; the built-in lab scene when omitted.
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "run.jsonl")]
        out: PathBuf,
    },
    /// Compare a snapshot with ground truth.
    Score {
        snapshot: PathBuf,
        truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        match_radius: f64,
    },
    /// Answer LIST / NEAREST / COUNT queries over TCP.
    Serve {
        /// Serve a snapshot file.
        #[arg(long, conflicts_with = "log")]
        snapshot: Option<PathBuf>,
        /// Replay this log, publishing snapshots while it runs.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Replay { log, config, out } => {
            let report = cli_service::cmd_replay(&log, config.as_deref(), &out)?;
            eprintln!(
                "replayed {} records, {} objects, outputs in {}",
                report.records,
                report.objects,
                out.display()
            );
        }
        Command::Simulate { scenario, seed, config, out } => {
            let truth = cli_service::cmd_simulate(scenario.as_deref(), seed, config.as_deref(), &out)?;
            eprintln!("wrote {} and {}", out.display(), truth.display());
        }
        Command::Score { snapshot, truth, match_radius } => {
            let doc = cli_service::cmd_score(&snapshot, &truth, match_radius)?;
            println!("{}", serde_json::to_string_pretty(&doc).expect("score serializes"));
        }
        Command::Serve { snapshot, log, config, addr } => {
            let source = match (snapshot, log) {
                (Some(p), _) => SnapshotSource::File(p),
                (None, Some(log)) => SnapshotSource::Replay { log, config },
                (None, None) => SnapshotSource::Empty,
            };
            let server = cli_service::start_serving(&source, &addr)?;
            eprintln!("listening on {}", server.local_addr());
            server.wait();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semmap: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
