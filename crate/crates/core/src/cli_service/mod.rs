//! Command entry points and the query endpoint.
//!
//! Exit codes: 0 success, 2 invalid config or scenario, 3 unreadable or
//! malformed input (logs, snapshots, truth files), 4 output or network I/O.

mod query;
mod server;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::ingestion::{parse_log, replay, IngestError, ReplayOutcome, ReplaySink, RunConfig, RunReport};
use crate::occupancy::export_map;
use crate::semantic_layer::{AssociationEvent, ObjectMapSnapshot};
use crate::simulator::{score_run, synthesize_log, GroundTruth, RunMetrics, Scenario};
use crate::FORMAT_VERSION;

pub use query::{respond, QueryError, QueryRequest};
pub use server::{QueryServer, SnapshotStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Config(e.to_string())),
    }
}

fn ingest_error(log: &Path, e: IngestError) -> CliError {
    match e {
        IngestError::Config(m) => CliError::Config(m),
        other => CliError::Input(format!("{}: {other}", log.display())),
    }
}

/// Replays a log file into `sink`.
pub fn replay_file<S: ReplaySink + ?Sized>(log: &Path, cfg: &RunConfig, sink: &mut S) -> Result<ReplayOutcome, CliError> {
    let file = File::open(log).map_err(|e| CliError::Input(format!("{}: {e}", log.display())))?;
    replay(parse_log(BufReader::new(file)), cfg, sink).map_err(|e| ingest_error(log, e))
}

/// Streams events to a JSON-lines writer; the first write error is kept.
struct EventWriter<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> ReplaySink for EventWriter<W> {
    fn on_events(&mut self, events: &[AssociationEvent]) {
        if self.error.is_some() {
            return;
        }
        for ev in events {
            let line = serde_json::to_string(ev).expect("event serializes");
            if let Err(e) = writeln!(self.out, "{line}") {
                self.error = Some(e);
                return;
            }
        }
    }
}

/// Output file names written by [`cmd_replay`].
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const MAP_PREFIX: &str = "map";
pub const REPORT_FILE: &str = "report.json";

/// Replays `log` and writes the snapshot, events, map and report into `out_dir`.
pub fn cmd_replay(log: &Path, config: Option<&Path>, out_dir: &Path) -> Result<RunReport, CliError> {
    let cfg = load_config(config)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let events_path = out_dir.join(EVENTS_FILE);
    let events = File::create(&events_path).map_err(|e| CliError::Io(format!("{}: {e}", events_path.display())))?;
    let mut sink = EventWriter { out: BufWriter::new(events), error: None };
    let outcome = replay_file(log, &cfg, &mut sink)?;
    let flushed = sink.out.flush();
    if let Some(e) = sink.error.or(flushed.err()) {
        return Err(CliError::Io(format!("{}: {e}", events_path.display())));
    }
    write_file(&out_dir.join(SNAPSHOT_FILE), outcome.snapshot.to_json_pretty().as_bytes())?;
    export_map(&outcome.grid, &out_dir.join(MAP_PREFIX)).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&out_dir.join(REPORT_FILE), outcome.report.to_json_pretty().as_bytes())?;
    Ok(outcome.report)
}

/// Sidecar path for the ground truth of a simulated log.
pub fn truth_path(log_out: &Path) -> PathBuf {
    log_out.with_extension("truth.json")
}

/// Generates a log from `scenario` (the lab scene when absent) and writes
/// it to `out` with the ground truth next to it. Returns the truth path.
pub fn cmd_simulate(
    scenario: Option<&Path>,
    seed: Option<u64>,
    config: Option<&Path>,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let mut sc = match scenario {
        None => Scenario::lab(),
        Some(p) => Scenario::load(p).map_err(|e| CliError::Config(e.to_string()))?,
    };
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    let cfg = load_config(config)?;
    let run = synthesize_log(&sc, &cfg).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    write_file(out, run.log_text().as_bytes())?;
    let truth = truth_path(out);
    write_file(&truth, run.truth.to_json_pretty().as_bytes())?;
    Ok(truth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreDocument {
    pub format_version: u32,
    pub match_radius: f64,
    #[serde(flatten)]
    pub metrics: RunMetrics,
}

pub fn cmd_score(snapshot: &Path, truth: &Path, match_radius: f64) -> Result<ScoreDocument, CliError> {
    if !(match_radius >= 0.0 && match_radius.is_finite()) {
        return Err(CliError::Config(format!("match radius must be a finite non-negative number, got {match_radius}")));
    }
    let snap = ObjectMapSnapshot::from_json(&read_input(snapshot)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", snapshot.display())))?;
    let truth_doc =
        GroundTruth::from_json(&read_input(truth)?).map_err(|e| CliError::Input(format!("{}: {e}", truth.display())))?;
    Ok(ScoreDocument { format_version: FORMAT_VERSION, match_radius, metrics: score_run(&snap, &truth_doc, match_radius) })
}

/// Where `serve` gets its objects from.
#[derive(Debug, Clone)]
pub enum SnapshotSource {
    Empty,
    File(PathBuf),
    /// Replay the log and publish every snapshot as it is produced.
    Replay { log: PathBuf, config: Option<PathBuf> },
}

/// Starts the query endpoint. A replay source runs to completion before
/// this returns; the server keeps answering from the final snapshot.
pub fn start_serving(source: &SnapshotSource, addr: &str) -> Result<QueryServer, CliError> {
    let store = Arc::new(SnapshotStore::default());
    match source {
        SnapshotSource::Empty => {}
        SnapshotSource::File(p) => {
            let snap = ObjectMapSnapshot::from_json(&read_input(p)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            store.publish(snap);
        }
        SnapshotSource::Replay { config, .. } => {
            load_config(config.as_deref())?;
        }
    }
    let server = QueryServer::start(addr, store.clone()).map_err(|e| CliError::Io(format!("cannot bind {addr}: {e}")))?;
    if let SnapshotSource::Replay { log, config } = source {
        let cfg = load_config(config.as_deref())?;
        let outcome = replay_file(log, &cfg, &mut &*store)?;
        store.publish(outcome.snapshot);
    }
    Ok(server)
}
