//! Run-log ingestion and replay.
//!
//! A run log interleaves three asynchronous streams: robot poses, laser scans
//! and detection frames. Replay merges them by stamp (ties: pose, then scan,
//! then detections), interpolates the robot pose at each scan and frame, and
//! drives the occupancy grid and the semantic layer.

mod config;
mod log;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{back_project, detection_to_map, DepthSamples, Pose3};
use crate::occupancy::{integrate_scan, OccupancyGrid};
use crate::semantic_layer::{AssociationEvent, DropReason, EventKind, ObjectMapSnapshot, SemanticLayer};
use crate::FORMAT_VERSION;

pub use config::{ConfigError, Extrinsics, PoseSpec, RunConfig};
pub use log::{parse_line, parse_log, parse_log_str, write_log, DetectionItem, LogParser, LogRecord, Payload, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("{stream} stream is not strictly increasing at t={stamp}")]
    NonMonotonicStream { stream: &'static str, stamp: f64 },
    #[error("no pose within tolerance of t={t}")]
    PoseGapTooLarge { t: f64 },
    #[error("read error: {0}")]
    Io(String),
    #[error("invalid run config: {0}")]
    Config(String),
}

/// Time-indexed robot poses with strictly increasing stamps.
#[derive(Debug, Clone, Default)]
pub struct PoseBuffer {
    stamps: Vec<f64>,
    poses: Vec<Pose3>,
}

impl PoseBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn newest_stamp(&self) -> Option<f64> {
        self.stamps.last().copied()
    }

    /// Appends a pose. Returns false, leaving the buffer unchanged, when the
    /// stamp does not follow the newest one.
    pub fn push(&mut self, stamp: f64, pose: Pose3) -> bool {
        if self.newest_stamp().is_some_and(|t| stamp <= t) {
            return false;
        }
        self.stamps.push(stamp);
        self.poses.push(pose);
        true
    }

    /// Forgets poses no longer needed for queries at or after `t`, keeping the
    /// newest pose at or before `t`.
    pub fn discard_before(&mut self, t: f64) {
        let keep_from = self.stamps.partition_point(|&s| s <= t).saturating_sub(1);
        if keep_from > 0 {
            self.stamps.drain(..keep_from);
            self.poses.drain(..keep_from);
        }
    }

    /// Pose at `t`: exact at a buffered stamp, interpolated inside a bracket no
    /// wider than `2 * max_skew`, or the newest pose held for up to `max_skew`.
    pub fn interpolate(&self, t: f64, max_skew: f64) -> Result<Pose3, IngestError> {
        let gap = IngestError::PoseGapTooLarge { t };
        let i = self.stamps.partition_point(|&s| s < t);
        if i < self.stamps.len() && self.stamps[i] == t {
            return Ok(self.poses[i]);
        }
        if i == self.stamps.len() {
            return match self.stamps.last() {
                Some(&newest) if t - newest <= max_skew => Ok(self.poses[i - 1]),
                _ => Err(gap),
            };
        }
        if i == 0 {
            return Err(gap);
        }
        let (t0, t1) = (self.stamps[i - 1], self.stamps[i]);
        if t1 - t0 > 2.0 * max_skew {
            return Err(gap);
        }
        Ok(self.poses[i - 1].interpolate(&self.poses[i], (t - t0) / (t1 - t0)))
    }
}

pub fn interpolate_pose(poses: &PoseBuffer, t: f64, max_skew: f64) -> Result<Pose3, IngestError> {
    poses.interpolate(t, max_skew)
}

/// Receives replay output as it is produced.
pub trait ReplaySink {
    fn on_events(&mut self, _events: &[AssociationEvent]) {}
    fn on_snapshot(&mut self, _snapshot: &ObjectMapSnapshot) {}
}

impl ReplaySink for () {}

/// Collects every event and snapshot in memory.
#[derive(Debug, Default)]
pub struct CollectingSink {
    pub events: Vec<AssociationEvent>,
    pub snapshots: Vec<ObjectMapSnapshot>,
}

impl ReplaySink for CollectingSink {
    fn on_events(&mut self, events: &[AssociationEvent]) {
        self.events.extend_from_slice(events);
    }

    fn on_snapshot(&mut self, snapshot: &ObjectMapSnapshot) {
        self.snapshots.push(snapshot.clone());
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DropCounts {
    pub no_valid_depth: u64,
    pub out_of_image: u64,
    pub low_score: u64,
    pub merged_in_frame: u64,
    /// Detection frames skipped for lack of a pose.
    pub frames_without_pose: u64,
    /// Scans skipped for lack of a pose.
    pub scans_without_pose: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub records: u64,
    pub poses: u64,
    pub scans: u64,
    pub detection_frames: u64,
    pub detections: u64,
    pub drops: DropCounts,
    pub objects: u64,
    pub objects_by_class: BTreeMap<String, u64>,
    pub final_stamp: f64,
    pub wall_clock_s: f64,
}

impl RunReport {
    fn empty() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            records: 0,
            poses: 0,
            scans: 0,
            detection_frames: 0,
            detections: 0,
            drops: DropCounts::default(),
            objects: 0,
            objects_by_class: BTreeMap::new(),
            final_stamp: 0.0,
            wall_clock_s: 0.0,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub report: RunReport,
    pub snapshot: ObjectMapSnapshot,
    pub grid: OccupancyGrid,
}

fn stream_rank(rec: &LogRecord) -> u8 {
    rec.stream() as u8
}

/// Replays a run log through the occupancy grid and the semantic layer.
///
/// Parse errors abort the replay. Missing poses, missing depth and boxes
/// outside the image are counted in the report and the run continues.
pub fn replay<I, S>(records: I, cfg: &RunConfig, sink: &mut S) -> Result<ReplayOutcome, IngestError>
where
    I: IntoIterator<Item = Result<LogRecord, IngestError>>,
    S: ReplaySink + ?Sized,
{
    replay_from(records, cfg, &ObjectMapSnapshot::default(), sink)
}

/// As [`replay`], continuing from the objects of an earlier map.
pub fn replay_from<I, S>(
    records: I,
    cfg: &RunConfig,
    initial: &ObjectMapSnapshot,
    sink: &mut S,
) -> Result<ReplayOutcome, IngestError>
where
    I: IntoIterator<Item = Result<LogRecord, IngestError>>,
    S: ReplaySink + ?Sized,
{
    let started = Instant::now();
    cfg.validate().map_err(|e| IngestError::Config(e.to_string()))?;
    let mut layer =
        SemanticLayer::restore(cfg.layer.clone(), initial).map_err(|e| IngestError::Config(e.to_string()))?;
    let mut grid = cfg.occupancy.initial_grid();
    let body_cam = cfg.body_cam();

    let mut all: Vec<LogRecord> = records.into_iter().collect::<Result<_, _>>()?;
    // stable: equal (stamp, stream) keep file order
    all.sort_by(|a, b| a.stamp.total_cmp(&b.stamp).then(stream_rank(a).cmp(&stream_rank(b))));

    let mut report = RunReport::empty();
    report.records = all.len() as u64;

    let pose_list: Vec<(f64, Pose3)> = all
        .iter()
        .filter_map(|r| match r.payload {
            Payload::Pose(p) => Some((r.stamp, p)),
            _ => None,
        })
        .collect();
    let mut next_pose = 0;
    let mut poses = PoseBuffer::new();
    let mut snapshot = layer.snapshot(initial.stamp);
    let mut events = Vec::new();
    let mut map_dets = Vec::new();

    for rec in &all {
        report.final_stamp = rec.stamp;
        let t = rec.stamp;
        if !matches!(rec.payload, Payload::Pose(_)) {
            // admit poses up to the first one at or after t so the bracket is complete
            while next_pose < pose_list.len() {
                let (s, p) = pose_list[next_pose];
                poses.push(s, p);
                next_pose += 1;
                if s >= t {
                    break;
                }
            }
            poses.discard_before(t);
        }
        match &rec.payload {
            Payload::Pose(_) => report.poses += 1,
            Payload::Scan(scan) => {
                report.scans += 1;
                match poses.interpolate(t, cfg.max_pose_skew) {
                    Ok(body) => {
                        let sensor = body.flatten().compose(&cfg.extrinsics.body_lidar);
                        integrate_scan(&mut grid, &sensor, scan, &cfg.occupancy);
                    }
                    Err(_) => report.drops.scans_without_pose += 1,
                }
            }
            Payload::Detections(items) => {
                report.detection_frames += 1;
                report.detections += items.len() as u64;
                events.clear();
                map_dets.clear();
                let map_body = match poses.interpolate(t, cfg.max_pose_skew) {
                    Ok(p) => p,
                    Err(_) => {
                        report.drops.frames_without_pose += 1;
                        events.extend(items.iter().map(|it| AssociationEvent {
                            t,
                            class: it.detection.class_label.clone(),
                            kind: EventKind::Dropped { reason: DropReason::NoPose },
                        }));
                        sink.on_events(&events);
                        continue;
                    }
                };
                for it in items {
                    let det = &it.detection;
                    let reason = if !det.bbox.fits(&cfg.camera) {
                        Some(DropReason::OutOfImage)
                    } else {
                        match back_project(&det.bbox, &DepthSamples::from_millimeters(&it.depth_samples_mm), &cfg.camera) {
                            Ok(p) => {
                                map_dets.push(detection_to_map(det, &p, &body_cam, &map_body, t));
                                None
                            }
                            Err(_) => Some(DropReason::NoDepth),
                        }
                    };
                    if let Some(reason) = reason {
                        match reason {
                            DropReason::OutOfImage => report.drops.out_of_image += 1,
                            _ => report.drops.no_valid_depth += 1,
                        }
                        events.push(AssociationEvent { t, class: det.class_label.clone(), kind: EventKind::Dropped { reason } });
                    }
                }
                snapshot = layer
                    .process_frame_into(&map_dets, t, &mut events)
                    .map_err(|e| IngestError::MalformedRecord { line: 0, reason: e.to_string() })?;
                for ev in &events {
                    match ev.kind {
                        EventKind::Dropped { reason: DropReason::LowScore } => report.drops.low_score += 1,
                        EventKind::MergedInFrame => report.drops.merged_in_frame += 1,
                        _ => {}
                    }
                }
                sink.on_events(&events);
                sink.on_snapshot(&snapshot);
            }
        }
    }

    snapshot.stamp = report.final_stamp;
    report.objects = snapshot.len() as u64;
    for obj in snapshot.iter() {
        *report.objects_by_class.entry(obj.class_label.to_string()).or_default() += 1;
    }
    report.wall_clock_s = started.elapsed().as_secs_f64();
    Ok(ReplayOutcome { report, snapshot, grid })
}
