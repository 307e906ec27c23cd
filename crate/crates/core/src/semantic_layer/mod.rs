//! Association and memory engine.
//!
//! Each frame of map-plane detections goes through a confidence gate, a
//! same-frame duplicate merge, and per-detection association: first against
//! the long-term object list, then against the short-term candidate buffer.
//! Candidates that are re-observed often enough, recently enough and with
//! enough confidence are promoted to long-term objects, whose poses are then
//! frozen for the rest of the run.

mod index;
mod label;
mod snapshot;

use std::collections::BTreeMap;

use std::sync::Arc;

use rustc_hash::FxHashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{MapDetection, Pose2};

pub use label::ClassLabel;
pub use index::SpatialHash;
pub use snapshot::{MapObject, ObjectList, ObjectMapSnapshot, ObjectRecord, SnapshotDocument};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("frame stamp {got} precedes previous stamp {previous}")]
    NonMonotonicStamp { previous: f64, got: f64 },
    #[error("frame stamp is not finite")]
    NonFiniteStamp,
    #[error("invalid layer config: {0}")]
    InvalidConfig(String),
}

/// Euclidean distance on the map plane.
#[inline]
pub fn distance(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (ax - bx, ay - by);
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerConfig {
    /// Cutoff for classes absent from `per_class_cutoff`.
    pub default_cutoff: f64,
    pub per_class_cutoff: BTreeMap<String, f64>,
    /// Same-frame duplicate radius, meters.
    pub frame_merge_radius: f64,
    /// Radius for attributing a detection to an existing object or candidate, meters.
    pub reuse_radius: f64,
    pub promote_min_hits: usize,
    /// Sliding window for the promotion gate, seconds.
    pub promote_window: f64,
    pub promote_min_mean_score: f64,
    /// Candidates whose newest hit is older than this are evicted, seconds.
    pub candidate_ttl: f64,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            default_cutoff: 0.65,
            per_class_cutoff: BTreeMap::new(),
            frame_merge_radius: 0.20,
            reuse_radius: 0.80,
            promote_min_hits: 10,
            promote_window: 2.0,
            promote_min_mean_score: 0.50,
            candidate_ttl: 3.0,
        }
    }
}

impl LayerConfig {
    pub fn cutoff(&self, class: &str) -> f64 {
        self.per_class_cutoff.get(class).copied().unwrap_or(self.default_cutoff)
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        let bad = |m: &str| Err(LayerError::InvalidConfig(m.to_string()));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !positive(self.frame_merge_radius) || !positive(self.reuse_radius) {
            return bad("radii must be positive");
        }
        if !unit(self.default_cutoff) || !self.per_class_cutoff.values().all(|&c| unit(c)) {
            return bad("cutoffs must lie in [0, 1]");
        }
        if self.promote_min_hits < 1 {
            return bad("promote_min_hits must be at least 1");
        }
        if !positive(self.promote_window) || !positive(self.candidate_ttl) {
            return bad("promote_window and candidate_ttl must be positive");
        }
        if !unit(self.promote_min_mean_score) {
            return bad("promote_min_mean_score must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LowScore,
    NoDepth,
    /// Box does not fit inside the image.
    OutOfImage,
    /// No robot pose close enough to the frame stamp.
    NoPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Dropped { reason: DropReason },
    MergedInFrame,
    MatchedLongTerm { object: u64 },
    UpdatedCandidate,
    NewCandidate,
    Promoted { object: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationEvent {
    pub t: f64,
    pub class: Arc<str>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Keeps detections whose score reaches their class cutoff. Order is preserved.
pub fn gate_by_confidence(dets: &[MapDetection], cfg: &LayerConfig) -> (Vec<MapDetection>, Vec<MapDetection>) {
    dets.iter().cloned().partition(|d| d.score >= cfg.cutoff(&d.class_label))
}

/// Greedy per-class suppression in descending score order (ties by smaller
/// x, then y, then input order). Returns `(kept, suppressed)`, kept in
/// processing order.
pub fn split_in_frame_duplicates(
    dets: &[MapDetection],
    cfg: &LayerConfig,
) -> (Vec<MapDetection>, Vec<MapDetection>) {
    let mut merged = Vec::new();
    let kept = suppress_duplicates(dets.iter().collect(), cfg, |d| merged.push(d.clone()));
    (kept.into_iter().cloned().collect(), merged)
}

/// Shared core of the in-frame merge; `dets` must be in input order.
fn suppress_duplicates<'a>(
    mut dets: Vec<&'a MapDetection>,
    cfg: &LayerConfig,
    mut on_merged: impl FnMut(&'a MapDetection),
) -> Vec<&'a MapDetection> {
    // stable sort, so input order breaks the remaining ties
    dets.sort_by(|da, db| {
        db.score
            .total_cmp(&da.score)
            .then(da.x.total_cmp(&db.x))
            .then(da.y.total_cmp(&db.y))
    });
    let mut kept: Vec<&MapDetection> = Vec::with_capacity(dets.len());
    for d in dets {
        let duplicate = kept.iter().any(|k| {
            k.class_label == d.class_label && distance(k.x, k.y, d.x, d.y) <= cfg.frame_merge_radius
        });
        if duplicate {
            on_merged(d);
        } else {
            kept.push(d);
        }
    }
    kept
}

pub fn merge_in_frame(dets: &[MapDetection], cfg: &LayerConfig) -> Vec<MapDetection> {
    split_in_frame_duplicates(dets, cfg).0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateHit {
    pub stamp: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub score: f64,
}

/// Short-term record of co-located same-class sightings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackCandidate {
    serial: u64,
    class_id: u32,
    class_label: Arc<str>,
    hits: Vec<CandidateHit>,
    mean: (f64, f64),
}

/// Outcome of a passed promotion gate, before an id is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Promotion {
    pub pose: Pose2,
    pub hits: u64,
    pub score_sum: f64,
    pub first_seen: f64,
    pub last_seen: f64,
}

impl TrackCandidate {
    fn new(serial: u64, class_id: u32, class_label: Arc<str>, hit: CandidateHit) -> Self {
        Self { serial, class_id, class_label, hits: vec![hit], mean: (hit.x, hit.y) }
    }

    pub fn class_label(&self) -> &str {
        &self.class_label
    }

    pub fn hits(&self) -> &[CandidateHit] {
        &self.hits
    }

    /// Arithmetic mean of the buffered hit positions.
    pub fn mean_position(&self) -> (f64, f64) {
        self.mean
    }

    pub fn newest_stamp(&self) -> Option<f64> {
        self.hits.last().map(|h| h.stamp)
    }

    fn push(&mut self, hit: CandidateHit) {
        self.hits.push(hit);
        self.recompute_mean();
    }

    fn recompute_mean(&mut self) {
        if self.hits.is_empty() {
            return;
        }
        let (sx, sy) = self.hits.iter().fold((0.0, 0.0), |(sx, sy), h| (sx + h.x, sy + h.y));
        let n = self.hits.len() as f64;
        self.mean = (sx / n, sy / n);
    }

    /// Drops hits older than `cutoff`. Returns true if any were dropped.
    fn drop_before(&mut self, cutoff: f64) -> bool {
        let before = self.hits.len();
        self.hits.retain(|h| h.stamp >= cutoff);
        let changed = self.hits.len() != before;
        if changed {
            self.recompute_mean();
        }
        changed
    }

    /// Applies the promotion gate over hits in `[now - window, now]`: enough
    /// hits and a high enough mean score. The promoted pose is the mean of
    /// those hits with the yaw of the latest one.
    pub fn try_promote(&self, now: f64, cfg: &LayerConfig) -> Option<Promotion> {
        let start = now - cfg.promote_window;
        let window: Vec<&CandidateHit> = self.hits.iter().filter(|h| h.stamp >= start && h.stamp <= now).collect();
        if window.len() < cfg.promote_min_hits {
            return None;
        }
        let n = window.len() as f64;
        let score_sum: f64 = window.iter().map(|h| h.score).sum();
        if score_sum / n < cfg.promote_min_mean_score {
            return None;
        }
        let (sx, sy) = window.iter().fold((0.0, 0.0), |(sx, sy), h| (sx + h.x, sy + h.y));
        let last = window[window.len() - 1];
        Some(Promotion {
            pose: Pose2::new(sx / n, sy / n, last.yaw),
            hits: window.len() as u64,
            score_sum,
            first_seen: window[0].stamp,
            last_seen: last.stamp,
        })
    }
}

/// Single-writer association state: long-term objects plus short-term candidates.
#[derive(Debug, Clone)]
pub struct SemanticLayer {
    cfg: LayerConfig,
    objects: ObjectList,
    score_sums: Vec<f64>,
    index: SpatialHash,
    candidates: Vec<TrackCandidate>,
    classes: FxHashMap<Arc<str>, u32>,
    next_id: u64,
    next_serial: u64,
    last_stamp: Option<f64>,
}

impl SemanticLayer {
    pub fn new(cfg: LayerConfig) -> Result<Self, LayerError> {
        cfg.validate()?;
        // cells twice the query radius keep every lookup to 2x2 buckets
        let index = SpatialHash::new(2.0 * cfg.reuse_radius);
        Ok(Self {
            cfg,
            objects: ObjectList::default(),
            score_sums: Vec::new(),
            index,
            candidates: Vec::new(),
            classes: FxHashMap::default(),
            next_id: 1,
            next_serial: 0,
            last_stamp: None,
        })
    }

    /// Starts from a previously published map. Ids continue after the largest restored id.
    pub fn restore(cfg: LayerConfig, snapshot: &ObjectMapSnapshot) -> Result<Self, LayerError> {
        let mut layer = Self::new(cfg)?;
        for obj in snapshot.iter() {
            let class_id = layer.intern(&obj.class_label);
            let slot = layer.objects.len();
            layer.index.insert(class_id, obj.pose.x, obj.pose.y, obj.id, slot);
            layer.score_sums.push(obj.mean_score * obj.hit_count as f64);
            layer.next_id = layer.next_id.max(obj.id + 1);
            layer.objects.push(obj.clone());
        }
        Ok(layer)
    }

    pub fn config(&self) -> &LayerConfig {
        &self.cfg
    }

    pub fn objects(&self) -> &ObjectList {
        &self.objects
    }

    pub fn candidates(&self) -> &[TrackCandidate] {
        &self.candidates
    }

    pub fn last_stamp(&self) -> Option<f64> {
        self.last_stamp
    }

    fn intern(&mut self, class: &str) -> u32 {
        if let Some(&id) = self.classes.get(class) {
            return id;
        }
        let id = self.classes.len() as u32;
        self.classes.insert(class.into(), id);
        id
    }

    pub fn snapshot(&self, stamp: f64) -> ObjectMapSnapshot {
        ObjectMapSnapshot { stamp, objects: self.objects.clone() }
    }

    /// Runs one frame through gate, merge, association, promotion and pruning.
    /// Every hit takes the frame stamp.
    pub fn process_frame(
        &mut self,
        frame: &[MapDetection],
        stamp: f64,
    ) -> Result<(ObjectMapSnapshot, Vec<AssociationEvent>), LayerError> {
        let mut events = Vec::with_capacity(frame.len() + 1);
        let snap = self.process_frame_into(frame, stamp, &mut events)?;
        Ok((snap, events))
    }

    /// As [`process_frame`](Self::process_frame), appending events to `events`.
    pub fn process_frame_into(
        &mut self,
        frame: &[MapDetection],
        stamp: f64,
        events: &mut Vec<AssociationEvent>,
    ) -> Result<ObjectMapSnapshot, LayerError> {
        if !stamp.is_finite() {
            return Err(LayerError::NonFiniteStamp);
        }
        if let Some(previous) = self.last_stamp {
            if stamp < previous {
                return Err(LayerError::NonMonotonicStamp { previous, got: stamp });
            }
        }
        self.last_stamp = Some(stamp);

        if !frame.is_empty() {
            let mut kept = Vec::with_capacity(frame.len());
            for d in frame {
                if d.score >= self.cfg.cutoff(&d.class_label) {
                    kept.push(d);
                } else {
                    events.push(AssociationEvent {
                        t: stamp,
                        class: d.class_label.clone(),
                        kind: EventKind::Dropped { reason: DropReason::LowScore },
                    });
                }
            }
            let survivors = suppress_duplicates(kept, &self.cfg, |d| {
                events.push(AssociationEvent { t: stamp, class: d.class_label.clone(), kind: EventKind::MergedInFrame })
            });

            let mut touched = Vec::with_capacity(survivors.len());
            for det in survivors {
                let (kind, serial) = self.associate_at(det, stamp);
                touched.extend(serial);
                events.push(AssociationEvent { t: stamp, class: det.class_label.clone(), kind });
            }
            touched.sort_unstable();
            touched.dedup();
            for serial in touched {
                self.promote_candidate(serial, stamp, events);
            }
        }
        self.prune(stamp);
        Ok(self.snapshot(stamp))
    }

    /// Associates one gated, frame-merged detection at its own stamp.
    pub fn associate(&mut self, det: &MapDetection) -> AssociationEvent {
        let (kind, _) = self.associate_at(det, det.stamp);
        AssociationEvent { t: det.stamp, class: det.class_label.clone(), kind }
    }

    fn associate_at(&mut self, det: &MapDetection, stamp: f64) -> (EventKind, Option<u64>) {
        let class_id = self.intern(&det.class_label);
        let radius = self.cfg.reuse_radius;

        if let Some((slot, _)) = self.index.nearest_within(class_id, det.x, det.y, radius) {
            self.score_sums[slot] += det.score;
            let sum = self.score_sums[slot];
            let obj = self.objects.get_mut(slot);
            obj.hit_count += 1;
            obj.mean_score = sum / obj.hit_count as f64;
            obj.last_seen = obj.last_seen.max(stamp);
            return (EventKind::MatchedLongTerm { object: obj.id }, None);
        }

        let hit = CandidateHit { stamp, x: det.x, y: det.y, yaw: det.yaw, score: det.score };
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in self.candidates.iter().enumerate() {
            if c.class_id != class_id {
                continue;
            }
            let d = distance(c.mean.0, c.mean.1, det.x, det.y);
            // candidates are kept in serial order, so strict < keeps the lowest serial on ties
            if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        if let Some((_, i)) = best {
            let c = &mut self.candidates[i];
            c.push(hit);
            return (EventKind::UpdatedCandidate, Some(c.serial));
        }

        let serial = self.next_serial;
        self.next_serial += 1;
        self.candidates.push(TrackCandidate::new(serial, class_id, det.class_label.clone(), hit));
        (EventKind::NewCandidate, Some(serial))
    }

    fn promote_candidate(&mut self, serial: u64, now: f64, events: &mut Vec<AssociationEvent>) {
        let Some(pos) = self.candidates.iter().position(|c| c.serial == serial) else {
            return;
        };
        let Some(promo) = self.candidates[pos].try_promote(now, &self.cfg) else {
            return;
        };
        let cand = self.candidates.remove(pos);
        let (x, y) = (promo.pose.x, promo.pose.y);

        // a candidate that drifted onto an existing object is folded into it
        if let Some((slot, _)) = self.index.nearest_within(cand.class_id, x, y, self.cfg.reuse_radius) {
            self.score_sums[slot] += promo.score_sum;
            let sum = self.score_sums[slot];
            let obj = self.objects.get_mut(slot);
            obj.hit_count += promo.hits;
            obj.mean_score = sum / obj.hit_count as f64;
            obj.last_seen = obj.last_seen.max(promo.last_seen);
            events.push(AssociationEvent {
                t: now,
                class: cand.class_label.clone(),
                kind: EventKind::MatchedLongTerm { object: obj.id },
            });
            return;
        }

        let id = self.next_id;
        self.next_id += 1;
        let slot = self.objects.len();
        self.index.insert(cand.class_id, x, y, id, slot);
        self.score_sums.push(promo.score_sum);
        self.objects.push(MapObject {
            id,
            class_label: ClassLabel::new(&cand.class_label),
            pose: promo.pose,
            hit_count: promo.hits,
            mean_score: promo.score_sum / promo.hits as f64,
            first_seen: promo.first_seen,
            last_seen: promo.last_seen,
        });
        events.push(AssociationEvent { t: now, class: cand.class_label, kind: EventKind::Promoted { object: id } });
    }

    /// Ages out candidate hits older than the promotion window and evicts
    /// candidates that are empty or stale. Long-term objects are never pruned.
    pub fn prune(&mut self, now: f64) -> usize {
        let window_start = now - self.cfg.promote_window;
        let stale_before = now - self.cfg.candidate_ttl;
        let before = self.candidates.len();
        self.candidates.retain_mut(|c| {
            c.drop_before(window_start);
            c.newest_stamp().is_some_and(|t| t >= stale_before)
        });
        before - self.candidates.len()
    }
}
