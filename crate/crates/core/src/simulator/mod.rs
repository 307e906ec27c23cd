//! Synthetic world generator producing ground-truth-annotated run logs.
//!
//! A scenario describes a room of wall segments, static objects, and a robot
//! trajectory. The generator renders poses along the trajectory, laser scans
//! by exact ray/segment intersection, and noisy detection frames through the
//! configured camera. Each detection frame draws from its own seeded stream,
//! so the output is reproducible for a seed regardless of generation order.

mod score;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, CameraIntrinsics, Detection2D, Pose2, Pose3};
use crate::ingestion::{DetectionItem, LogRecord, Payload, RunConfig};
use crate::occupancy::LaserScan;
use crate::FORMAT_VERSION;

pub use score::{score_run, RunMetrics};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: String,
    pub x: f64,
    pub y: f64,
    /// Half-size of the rendered box, meters.
    pub radius: f64,
    /// Height of the object center above the floor, meters.
    #[serde(default = "default_object_height")]
    pub height: f64,
}

fn default_object_height() -> f64 {
    0.45
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Stream rates, Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub pose: f64,
    pub scan: f64,
    pub detection: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { pose: 50.0, scan: 5.0, detection: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    pub pixel_sigma: f64,
    /// Per-sample depth noise, meters.
    pub depth_sigma: f64,
    pub miss_probability: f64,
    /// Expected spurious detections per frame.
    pub false_positive_rate: f64,
    pub score_min: f64,
    pub score_max: f64,
    /// Constant offset added to every depth sample, meters.
    pub depth_bias: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Self {
            pixel_sigma: 2.0,
            depth_sigma: 0.02,
            miss_probability: 0.1,
            false_positive_rate: 0.05,
            score_min: 0.6,
            score_max: 0.95,
            depth_bias: 0.0,
        }
    }
}

impl Noise {
    pub fn none() -> Self {
        Self { pixel_sigma: 0.0, depth_sigma: 0.0, miss_probability: 0.0, false_positive_rate: 0.0, score_min: 0.9, score_max: 0.9, depth_bias: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sensors {
    /// Objects farther than this from the camera are not detected, meters.
    pub max_detection_range: f64,
    /// Depth samples logged per detection.
    pub depth_samples: usize,
    pub scan_angle_min: f64,
    pub scan_angle_increment: f64,
    pub scan_rays: usize,
    pub scan_range_min: f64,
    pub scan_range_max: f64,
}

impl Default for Sensors {
    fn default() -> Self {
        Self {
            max_detection_range: 6.0,
            depth_samples: 9,
            scan_angle_min: -PI,
            scan_angle_increment: 2.0 * PI / 180.0,
            scan_rays: 180,
            scan_range_min: 0.1,
            scan_range_max: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    /// Wall segments `[x0, y0, x1, y1]`, meters.
    #[serde(default)]
    pub walls: Vec<[f64; 4]>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub trajectory: Vec<Waypoint>,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub sensors: Sensors,
}

/// Axis-aligned rectangle as four wall segments.
pub fn rectangle_walls(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 4]> {
    vec![[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]]
}

impl Scenario {
    /// The reference scene: a lab with two people and two chairs, visited by
    /// a robot that turns in place at two spots over 60 seconds.
    pub fn lab() -> Self {
        let q = PI / 2.0;
        let mut trajectory = Vec::new();
        // one slow full turn at the room center
        for (k, yaw) in [0.0, q, 2.0 * q, -q, 0.0].into_iter().enumerate() {
            trajectory.push(Waypoint { t: 8.0 * k as f64, x: 4.0, y: 3.0, yaw });
        }
        // cross to the left, then a second turn
        for (k, yaw) in [0.0, q, 2.0 * q, -q].into_iter().enumerate() {
            trajectory.push(Waypoint { t: 38.0 + 6.0 * k as f64, x: 3.0, y: 3.0, yaw });
        }
        trajectory.push(Waypoint { t: 60.0, x: 3.0, y: 3.0, yaw: 0.0 });
        Self {
            seed: 1,
            walls: rectangle_walls(0.0, 0.0, 8.0, 6.0),
            objects: vec![
                ObjectSpec { class: "chair".into(), x: 2.0, y: 4.6, radius: 0.3, height: 0.45 },
                ObjectSpec { class: "chair".into(), x: 5.8, y: 4.9, radius: 0.3, height: 0.45 },
                ObjectSpec { class: "person".into(), x: 2.6, y: 1.3, radius: 0.25, height: 0.8 },
                ObjectSpec { class: "person".into(), x: 6.4, y: 1.6, radius: 0.25, height: 0.8 },
            ],
            trajectory,
            rates: Rates::default(),
            noise: Noise::default(),
            sensors: Sensors::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ScenarioError::Read { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let finite = |v: f64| v.is_finite();
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if self.trajectory.is_empty() {
            return bad("trajectory needs at least one waypoint".into());
        }
        for w in self.trajectory.windows(2) {
            if !(w[1].t > w[0].t) {
                return bad(format!("trajectory stamps must strictly increase (at t={})", w[1].t));
            }
        }
        if self.trajectory.iter().any(|w| ![w.t, w.x, w.y, w.yaw].into_iter().all(finite)) {
            return bad("trajectory values must be finite".into());
        }
        for (name, r) in [("pose", self.rates.pose), ("scan", self.rates.scan), ("detection", self.rates.detection)] {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("{name} rate must be positive, got {r}"));
            }
        }
        let n = &self.noise;
        if !(n.pixel_sigma >= 0.0 && n.depth_sigma >= 0.0 && finite(n.pixel_sigma) && finite(n.depth_sigma)) {
            return bad("noise sigmas must be finite and non-negative".into());
        }
        if !prob(n.miss_probability) {
            return bad("miss_probability must lie in [0, 1]".into());
        }
        if !n.depth_bias.is_finite() {
            return bad("depth_bias must be finite".into());
        }
        if !(n.false_positive_rate >= 0.0 && finite(n.false_positive_rate)) {
            return bad("false_positive_rate must be non-negative".into());
        }
        if !(prob(n.score_min) && prob(n.score_max) && n.score_min <= n.score_max) {
            return bad("score bounds must satisfy 0 <= score_min <= score_max <= 1".into());
        }
        if self.objects.iter().any(|o| !(o.radius > 0.0 && [o.x, o.y, o.height].into_iter().all(finite))) {
            return bad("objects need a positive radius and finite position".into());
        }
        if self.walls.iter().any(|w| !w.iter().all(|v| v.is_finite())) {
            return bad("walls must be finite".into());
        }
        let s = &self.sensors;
        if !(s.max_detection_range > 0.0 && s.depth_samples > 0) {
            return bad("max_detection_range and depth_samples must be positive".into());
        }
        if !(s.scan_angle_increment != 0.0 && s.scan_range_min >= 0.0 && s.scan_range_min < s.scan_range_max) {
            return bad("scan geometry is inconsistent".into());
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.trajectory[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.trajectory[self.trajectory.len() - 1].t
    }

    /// Robot pose along the trajectory; held at the ends.
    pub fn robot_pose(&self, t: f64) -> Pose2 {
        let w = &self.trajectory;
        let to_pose = |p: &Waypoint| Pose2::new(p.x, p.y, p.yaw);
        let i = w.partition_point(|p| p.t <= t);
        if i == 0 {
            return to_pose(&w[0]);
        }
        if i == w.len() {
            return to_pose(&w[w.len() - 1]);
        }
        let (a, b) = (&w[i - 1], &w[i]);
        to_pose(a).interpolate(&to_pose(b), (t - a.t) / (b.t - a.t))
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            format_version: FORMAT_VERSION,
            objects: self
                .objects
                .iter()
                .map(|o| TruthObject { class: o.class.clone(), x: o.x, y: o.y })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub class: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format_version: u32,
    pub objects: Vec<TruthObject>,
}

impl GroundTruth {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedRun {
    /// Globally stamp-ordered, ties pose before scan before detections.
    pub records: Vec<LogRecord>,
    pub truth: GroundTruth,
}

impl SimulatedRun {
    pub fn log_text(&self) -> String {
        crate::ingestion::write_log(&self.records)
    }
}

/// Distance along the ray `origin + s * dir` to the segment, if it is hit.
pub fn ray_segment_distance(origin: (f64, f64), dir: (f64, f64), seg: &[f64; 4]) -> Option<f64> {
    let e = (seg[2] - seg[0], seg[3] - seg[1]);
    let denom = dir.0 * e.1 - dir.1 * e.0;
    if denom.abs() < 1e-15 {
        return None;
    }
    let ao = (seg[0] - origin.0, seg[1] - origin.1);
    let s = (ao.0 * e.1 - ao.1 * e.0) / denom;
    let u = (ao.0 * dir.1 - ao.1 * dir.0) / denom;
    (s >= 0.0 && (0.0..=1.0).contains(&u)).then_some(s)
}

fn segments_cross(a: (f64, f64), b: (f64, f64), wall: &[f64; 4]) -> bool {
    let d = (b.0 - a.0, b.1 - a.1);
    let len = (d.0 * d.0 + d.1 * d.1).sqrt();
    if len == 0.0 {
        return false;
    }
    ray_segment_distance(a, (d.0 / len, d.1 / len), wall).is_some_and(|s| s <= len)
}

/// True when a wall blocks the straight line between the two points.
pub fn occluded(from: (f64, f64), to: (f64, f64), walls: &[[f64; 4]]) -> bool {
    walls.iter().any(|w| segments_cross(from, to, w))
}

/// Exact range readings for a scan taken from `sensor`.
pub fn render_scan(sensor: &Pose2, walls: &[[f64; 4]], sensors: &Sensors, stamp: f64) -> LaserScan {
    let ranges = (0..sensors.scan_rays)
        .map(|i| {
            let a = sensor.yaw + sensors.scan_angle_min + i as f64 * sensors.scan_angle_increment;
            let dir = (a.cos(), a.sin());
            let hit = walls
                .iter()
                .filter_map(|w| ray_segment_distance((sensor.x, sensor.y), dir, w))
                .min_by(f64::total_cmp);
            match hit {
                Some(r) if r >= sensors.scan_range_min && r <= sensors.scan_range_max => r,
                _ => f64::NAN,
            }
        })
        .collect();
    LaserScan {
        stamp,
        angle_min: sensors.scan_angle_min,
        angle_increment: sensors.scan_angle_increment,
        range_min: sensors.scan_range_min,
        range_max: sensors.scan_range_max,
        ranges,
    }
}

/// Noise-free rendering of one object: its box and the depth of its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderedObject {
    pub bbox: BBox,
    pub depth: f64,
}

/// Renders an object seen by a camera at `map_cam`, or `None` when it is
/// behind the camera, too far, occluded by a wall, or not fully in the image.
pub fn render_object(
    obj: &ObjectSpec,
    map_cam: &Pose3,
    intr: &CameraIntrinsics,
    walls: &[[f64; 4]],
    max_range: f64,
) -> Option<RenderedObject> {
    let p = map_cam.inverse().transform_point(&Point3::new(obj.x, obj.y, obj.height));
    let cam = map_cam.translation();
    let planar = ((obj.x - cam.x).powi(2) + (obj.y - cam.y).powi(2)).sqrt();
    if p.z <= 0.0 || planar > max_range || occluded((cam.x, cam.y), (obj.x, obj.y), walls) {
        return None;
    }
    let (u, v) = intr.project(&p)?;
    let (hw, hh) = (intr.fx * obj.radius / p.z, intr.fy * obj.radius / p.z);
    let bbox = BBox::new(u - hw, v - hh, u + hw, v + hh).ok()?;
    bbox.fits(intr).then_some(RenderedObject { bbox, depth: p.z })
}

fn stamps(start: f64, end: f64, rate: f64) -> impl Iterator<Item = (u64, f64)> {
    (0u64..).map(move |k| (k, start + k as f64 / rate)).take_while(move |&(_, t)| t < end)
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
    } else {
        0.0
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn depth_samples_mm(rng: &mut ChaCha8Rng, depth: f64, n: usize, noise: &Noise) -> Vec<i64> {
    (0..n).map(|_| ((depth + noise.depth_bias + gaussian(rng, noise.depth_sigma)) * 1000.0).round().max(0.0) as i64).collect()
}

/// Generates the detection items for frame `index` taken at `t`.
fn render_frame(sc: &Scenario, cfg: &RunConfig, classes: &[Arc<str>], index: u64, t: f64) -> Vec<DetectionItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(index);
    let intr = &cfg.camera;
    let noise = &sc.noise;
    let map_cam = Pose3::from_pose2(&sc.robot_pose(t), 0.0).compose(&cfg.body_cam());
    let mut items = Vec::new();

    for (obj, class) in sc.objects.iter().zip(classes) {
        let Some(r) = render_object(obj, &map_cam, intr, &sc.walls, sc.sensors.max_detection_range) else {
            continue;
        };
        if rng.random::<f64>() < noise.miss_probability {
            continue;
        }
        let (du, dv) = (gaussian(&mut rng, noise.pixel_sigma), gaussian(&mut rng, noise.pixel_sigma));
        let b = r.bbox;
        let Ok(bbox) = BBox::new(b.u_min + du, b.v_min + dv, b.u_max + du, b.v_max + dv) else {
            continue;
        };
        if !bbox.fits(intr) {
            continue;
        }
        let score = uniform(&mut rng, noise.score_min, noise.score_max);
        let depth_samples_mm = depth_samples_mm(&mut rng, r.depth, sc.sensors.depth_samples, noise);
        items.push(DetectionItem { detection: Detection2D { class_label: class.clone(), score, bbox }, depth_samples_mm });
    }

    let whole = noise.false_positive_rate.floor();
    let extra = rng.random::<f64>() < noise.false_positive_rate - whole;
    let fp_count = whole as u64 + extra as u64;
    let fp_classes: Vec<Arc<str>> = {
        let set: BTreeSet<Arc<str>> = classes.iter().cloned().collect();
        if set.is_empty() {
            vec![Arc::from("person")]
        } else {
            set.into_iter().collect()
        }
    };
    for _ in 0..fp_count {
        let class = fp_classes[rng.random_range(0..fp_classes.len())].clone();
        let depth = uniform(&mut rng, 0.5, sc.sensors.max_detection_range.max(0.5));
        let (hw, hh) = (intr.fx * 0.25 / depth, intr.fy * 0.25 / depth);
        let (w, h) = (intr.width as f64, intr.height as f64);
        if 2.0 * hw >= w || 2.0 * hh >= h {
            continue;
        }
        let u = uniform(&mut rng, hw, w - hw);
        let v = uniform(&mut rng, hh, h - hh);
        let score = uniform(&mut rng, noise.score_min, noise.score_max);
        let depth_samples_mm = depth_samples_mm(&mut rng, depth, sc.sensors.depth_samples, noise);
        if let Ok(bbox) = BBox::new(u - hw, v - hh, u + hw, v + hh) {
            items.push(DetectionItem { detection: Detection2D { class_label: class, score, bbox }, depth_samples_mm });
        }
    }
    items
}

/// Renders a full run log for the scenario. Streams cover `[start, end)` of
/// the trajectory; detection frames with no detections are not emitted.
pub fn synthesize_log(sc: &Scenario, cfg: &RunConfig) -> Result<SimulatedRun, ScenarioError> {
    sc.validate()?;
    cfg.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let (start, end) = (sc.start_time(), sc.end_time());
    let classes: Vec<Arc<str>> = sc.objects.iter().map(|o| Arc::from(o.class.as_str())).collect();

    let mut tagged: Vec<(f64, u8, LogRecord)> = Vec::new();
    for (_, t) in stamps(start, end, sc.rates.pose) {
        let pose = Pose3::from_pose2(&sc.robot_pose(t), 0.0);
        tagged.push((t, 0, LogRecord { stamp: t, payload: Payload::Pose(pose) }));
    }
    for (_, t) in stamps(start, end, sc.rates.scan) {
        let sensor = sc.robot_pose(t).compose(&cfg.extrinsics.body_lidar);
        let scan = render_scan(&sensor, &sc.walls, &sc.sensors, t);
        tagged.push((t, 1, LogRecord { stamp: t, payload: Payload::Scan(scan) }));
    }
    for (k, t) in stamps(start, end, sc.rates.detection) {
        let items = render_frame(sc, cfg, &classes, k, t);
        if !items.is_empty() {
            tagged.push((t, 2, LogRecord { stamp: t, payload: Payload::Detections(items) }));
        }
    }
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(SimulatedRun { records: tagged.into_iter().map(|(_, _, r)| r).collect(), truth: sc.ground_truth() })
}
