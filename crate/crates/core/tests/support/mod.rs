//! Brute-force reference implementations used by the integration tests.
#![allow(dead_code)]

pub mod room;

use std::collections::HashMap;

use semmap::geometry::{MapDetection, Pose2};
use semmap::occupancy::LaserScan;
use semmap::semantic_layer::{LayerConfig, MapObject};

#[derive(Debug, Clone)]
struct OracleHit {
    t: f64,
    x: f64,
    y: f64,
    yaw: f64,
    score: f64,
}

#[derive(Debug, Clone)]
struct OracleCandidate {
    serial: u64,
    class: String,
    hits: Vec<OracleHit>,
}

impl OracleCandidate {
    fn mean(&self) -> (f64, f64) {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for h in &self.hits {
            sx += h.x;
            sy += h.y;
        }
        (sx / self.hits.len() as f64, sy / self.hits.len() as f64)
    }
}

#[derive(Debug, Clone)]
struct OracleObject {
    id: u64,
    class: String,
    pose: Pose2,
    hits: u64,
    score_sum: f64,
    first_seen: f64,
    last_seen: f64,
}

fn dist(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Rule-by-rule evaluator of the association pipeline with plain vectors and
/// exhaustive search everywhere.
pub struct OracleLayer {
    cfg: LayerConfig,
    objects: Vec<OracleObject>,
    candidates: Vec<OracleCandidate>,
    next_id: u64,
    next_serial: u64,
}

impl OracleLayer {
    pub fn new(cfg: LayerConfig) -> Self {
        Self { cfg, objects: vec![], candidates: vec![], next_id: 1, next_serial: 0 }
    }

    /// Starts from existing objects; ids continue after the largest one.
    pub fn restore(cfg: LayerConfig, objects: &[MapObject]) -> Self {
        let mut layer = Self::new(cfg);
        for o in objects {
            layer.objects.push(OracleObject {
                id: o.id,
                class: o.class_label.to_string(),
                pose: o.pose,
                hits: o.hit_count,
                score_sum: o.mean_score * o.hit_count as f64,
                first_seen: o.first_seen,
                last_seen: o.last_seen,
            });
            layer.next_id = layer.next_id.max(o.id + 1);
        }
        layer
    }

    fn cutoff(&self, class: &str) -> f64 {
        *self.cfg.per_class_cutoff.get(class).unwrap_or(&self.cfg.default_cutoff)
    }

    /// Greedy suppression: repeatedly take the best remaining detection and
    /// discard same-class ones within the merge radius of it.
    fn merge(&self, dets: Vec<(usize, MapDetection)>) -> Vec<MapDetection> {
        let mut remaining = dets;
        let mut kept = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for k in 1..remaining.len() {
                let (ia, a) = &remaining[k];
                let (ib, b) = &remaining[best];
                let better = a.score > b.score
                    || (a.score == b.score
                        && (a.x < b.x || (a.x == b.x && (a.y < b.y || (a.y == b.y && ia < ib)))));
                if better {
                    best = k;
                }
            }
            let (_, top) = remaining.remove(best);
            remaining.retain(|(_, d)| {
                !(d.class_label == top.class_label && dist(d.x, d.y, top.x, top.y) <= self.cfg.frame_merge_radius)
            });
            kept.push(top);
        }
        kept
    }

    fn nearest_object(&self, class: &str, x: f64, y: f64) -> Option<usize> {
        let mut best: Option<(f64, u64, usize)> = None;
        for (k, o) in self.objects.iter().enumerate() {
            if o.class != class {
                continue;
            }
            let d = dist(o.pose.x, o.pose.y, x, y);
            if d > self.cfg.reuse_radius {
                continue;
            }
            match best {
                Some((bd, bid, _)) if d > bd || (d == bd && o.id > bid) => {}
                _ => best = Some((d, o.id, k)),
            }
        }
        best.map(|b| b.2)
    }

    pub fn step(&mut self, frame: &[MapDetection], t: f64) {
        let gated: Vec<(usize, MapDetection)> = frame
            .iter()
            .filter(|d| d.score >= self.cutoff(&d.class_label))
            .cloned()
            .enumerate()
            .collect();
        let survivors = self.merge(gated);

        let mut touched: Vec<u64> = vec![];
        for d in &survivors {
            if let Some(k) = self.nearest_object(&d.class_label, d.x, d.y) {
                let o = &mut self.objects[k];
                o.hits += 1;
                o.score_sum += d.score;
                o.last_seen = o.last_seen.max(t);
                continue;
            }
            let hit = OracleHit { t, x: d.x, y: d.y, yaw: d.yaw, score: d.score };
            let mut best: Option<(f64, u64, usize)> = None;
            for (k, c) in self.candidates.iter().enumerate() {
                if c.class != *d.class_label {
                    continue;
                }
                let (mx, my) = c.mean();
                let dd = dist(mx, my, d.x, d.y);
                if dd > self.cfg.reuse_radius {
                    continue;
                }
                match best {
                    Some((bd, bs, _)) if dd > bd || (dd == bd && c.serial > bs) => {}
                    _ => best = Some((dd, c.serial, k)),
                }
            }
            let serial = match best {
                Some((_, s, k)) => {
                    self.candidates[k].hits.push(hit);
                    s
                }
                None => {
                    let s = self.next_serial;
                    self.next_serial += 1;
                    self.candidates.push(OracleCandidate { serial: s, class: d.class_label.to_string(), hits: vec![hit] });
                    s
                }
            };
            if !touched.contains(&serial) {
                touched.push(serial);
            }
        }

        touched.sort();
        for serial in touched {
            let Some(k) = self.candidates.iter().position(|c| c.serial == serial) else { continue };
            let window: Vec<OracleHit> = self.candidates[k]
                .hits
                .iter()
                .filter(|h| h.t >= t - self.cfg.promote_window && h.t <= t)
                .cloned()
                .collect();
            if window.len() < self.cfg.promote_min_hits {
                continue;
            }
            let mut score_sum = 0.0;
            let mut sx = 0.0;
            let mut sy = 0.0;
            for h in &window {
                score_sum += h.score;
                sx += h.x;
                sy += h.y;
            }
            let n = window.len() as f64;
            if score_sum / n < self.cfg.promote_min_mean_score {
                continue;
            }
            let cand = self.candidates.remove(k);
            let last = window.last().unwrap();
            let pose = Pose2::new(sx / n, sy / n, last.yaw);
            if let Some(j) = self.nearest_object(&cand.class, pose.x, pose.y) {
                let o = &mut self.objects[j];
                o.hits += window.len() as u64;
                o.score_sum += score_sum;
                o.last_seen = o.last_seen.max(last.t);
                continue;
            }
            self.objects.push(OracleObject {
                id: self.next_id,
                class: cand.class,
                pose,
                hits: window.len() as u64,
                score_sum,
                first_seen: window[0].t,
                last_seen: last.t,
            });
            self.next_id += 1;
        }

        for c in &mut self.candidates {
            c.hits.retain(|h| h.t >= t - self.cfg.promote_window);
        }
        let ttl = self.cfg.candidate_ttl;
        self.candidates.retain(|c| c.hits.last().is_some_and(|h| h.t >= t - ttl));
    }

    pub fn objects(&self) -> Vec<MapObject> {
        self.objects
            .iter()
            .map(|o| MapObject {
                id: o.id,
                class_label: o.class.as_str().into(),
                pose: o.pose,
                hit_count: o.hits,
                mean_score: o.score_sum / o.hits as f64,
                first_seen: o.first_seen,
                last_seen: o.last_seen,
            })
            .collect()
    }
}

/// Cell classification produced by the ray-marching reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefCell {
    Occupied,
    Free,
    Unknown,
}

/// Occupancy reference: marches each ray in small fixed steps and keys cells
/// by world cell index `floor(coord / resolution)`.
pub struct RayMarchGrid {
    pub resolution: f64,
    pub log_odds: HashMap<(i64, i64), f64>,
}

impl RayMarchGrid {
    pub fn new(resolution: f64) -> Self {
        Self { resolution, log_odds: HashMap::new() }
    }

    fn cell(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.resolution).floor() as i64, (y / self.resolution).floor() as i64)
    }

    pub fn integrate(&mut self, pose: &Pose2, scan: &LaserScan, l_free: f64, l_occ: f64, l_min: f64, l_max: f64) {
        let mut counts: HashMap<(i64, i64), (f64, f64)> = HashMap::new();
        let step = self.resolution / 10.0;
        for (i, &r) in scan.ranges.iter().enumerate() {
            if !r.is_finite() || r < scan.range_min {
                continue;
            }
            let hit = r < scan.range_max;
            let r = r.min(scan.range_max);
            let a = pose.yaw + scan.angle_min + i as f64 * scan.angle_increment;
            let (ex, ey) = (pose.x + r * a.cos(), pose.y + r * a.sin());
            let end = self.cell(ex, ey);
            let mut seen = Vec::new();
            let n = (r / step).ceil() as usize;
            for k in 0..=n {
                let s = (k as f64 * step).min(r);
                let c = self.cell(pose.x + s * a.cos(), pose.y + s * a.sin());
                if c != end && !seen.contains(&c) {
                    seen.push(c);
                }
            }
            for c in seen {
                counts.entry(c).or_default().0 += 1.0;
            }
            if hit {
                counts.entry(end).or_default().1 += 1.0;
            }
        }
        for (c, (nf, no)) in counts {
            let l = self.log_odds.entry(c).or_insert(0.0);
            *l = (*l + nf * l_free + no * l_occ).clamp(l_min, l_max);
        }
    }

    pub fn classify(&self, c: (i64, i64), occupied_above: f64, free_below: f64) -> RefCell {
        let l = self.log_odds.get(&c).copied().unwrap_or(0.0);
        let p = 1.0 - 1.0 / (1.0 + l.exp());
        if p > occupied_above {
            RefCell::Occupied
        } else if p < free_below {
            RefCell::Free
        } else {
            RefCell::Unknown
        }
    }
}

/// Row-major 3x3 rotation from a unit quaternion `[w, x, y, z]`.
pub fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn mat_apply(m: &[[f64; 3]; 3], t: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    let mut out = t;
    for r in 0..3 {
        for c in 0..3 {
            out[r] += m[r][c] * p[c];
        }
    }
    out
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Random detection stream over a few objects: jittered sightings, misses,
/// low scores, false positives and occasional time gaps. Objects may
/// sit close together so that folds and ties get exercised.
pub fn random_frames(seed: u64, max_objects: usize, max_frames: usize) -> Vec<(f64, Vec<MapDetection>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let classes = ["chair", "person"];
    let n_obj = rng.random_range(1..=max_objects);
    let objects: Vec<(&str, f64, f64, f64, bool)> = (0..n_obj)
        .map(|_| {
            let c = classes[rng.random_range(0..classes.len())];
            // some objects creep along x so candidates drift into each other
            let v = if rng.random_bool(0.3) { rng.random_range(-0.3..0.3) } else { 0.0 };
            // coarse positions make near-coincident objects likely
            let x = rng.random_range(0..6) as f64 * 0.45;
            let y = rng.random_range(0..6) as f64 * 0.45;
            // a shadow is a same-class ghost that opens a second candidate and
            // then creeps close enough to be folded at promotion
            (c, x, y, v, rng.random_bool(0.2))
        })
        .collect();
    let jitter = rng.random_range(0.0..0.4);
    let detect_p = rng.random_range(0.5..1.0);
    let n_frames = rng.random_range(1..=max_frames);
    let mut t = rng.random_range(0.0..5.0);
    let mut frames = Vec::with_capacity(n_frames);
    let mut sighted = vec![false; objects.len()];
    for _ in 0..n_frames {
        t += if rng.random_bool(0.05) { rng.random_range(0.5..4.0) } else { 0.1 };
        let mut dets = Vec::new();
        for (k, &(c, x0, y, v, shadow)) in objects.iter().enumerate() {
            let x = x0 + v * t;
            if !rng.random_bool(detect_p) {
                continue;
            }
            if shadow {
                let dx = if sighted[k] { 0.5 } else { 0.9 };
                dets.push(MapDetection { class_label: c.into(), x: x + dx, y, yaw: 0.0, score: 0.9, stamp: t });
            }
            sighted[k] = true;
            let copies = if rng.random_bool(0.1) { 2 } else { 1 };
            for _ in 0..copies {
                dets.push(MapDetection {
                    class_label: c.into(),
                    x: x + rng.random_range(-jitter..=jitter),
                    y: y + rng.random_range(-jitter..=jitter),
                    yaw: rng.random_range(-3.1..3.1),
                    score: (rng.random_range(30..=100) as f64) / 100.0,
                    stamp: t,
                });
            }
        }
        if rng.random_bool(0.1) {
            dets.push(MapDetection {
                class_label: classes[rng.random_range(0..2)].into(),
                x: rng.random_range(-1.0..7.0),
                y: rng.random_range(-1.0..7.0),
                yaw: 0.0,
                score: rng.random_range(0.0..1.0),
                stamp: t,
            });
        }
        frames.push((t, dets));
    }
    frames
}

/// One random back-projection case: a pixel and depth seen by a camera with
/// an arbitrary extrinsic on a robot at an arbitrary pose.
#[derive(Debug, Clone)]
pub struct ChainCase {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub body_cam_t: [f64; 3],
    pub body_cam_q: [f64; 4],
    pub map_body_t: [f64; 3],
    pub map_body_q: [f64; 4],
}

pub fn random_chain_case(rng: &mut impl rand::Rng) -> ChainCase {
    let mut quat = || loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return normalize_quat(q);
        }
    };
    let body_cam_q = quat();
    let map_body_q = quat();
    ChainCase {
        u: rng.random_range(10.0..630.0),
        v: rng.random_range(10.0..470.0),
        depth: rng.random_range(0.2..10.0),
        body_cam_t: std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
        body_cam_q,
        map_body_t: std::array::from_fn(|_| rng.random_range(-50.0..50.0)),
        map_body_q,
    }
}

/// Runs a case through the library and through explicit rotation matrices.
/// Returns `(pixel round-trip error, map position error)`.
pub fn chain_case_errors(case: &ChainCase) -> (f64, f64) {
    use semmap::geometry::{back_project, detection_to_map, BBox, CameraIntrinsics, DepthSamples, Detection2D, Pose3};
    let intr = CameraIntrinsics::default();
    let bbox = BBox::new(case.u - 8.0, case.v - 6.0, case.u + 8.0, case.v + 6.0).unwrap();
    let p = back_project(&bbox, &DepthSamples(vec![case.depth]), &intr).unwrap();
    let (pu, pv) = intr.project(&p).unwrap();
    let pixel_err = (pu - case.u).hypot(pv - case.v);

    let body_cam = Pose3::new(case.body_cam_t, case.body_cam_q).unwrap();
    let map_body = Pose3::new(case.map_body_t, case.map_body_q).unwrap();
    let det = Detection2D { class_label: "chair".into(), score: 0.9, bbox };
    let md = detection_to_map(&det, &p, &body_cam, &map_body, 0.0);

    // independent pinhole inverse and frame chain
    let cam = [(case.u - 320.0) * case.depth / 600.0, (case.v - 240.0) * case.depth / 600.0, case.depth];
    let body = mat_apply(&quat_to_matrix(case.body_cam_q), case.body_cam_t, cam);
    let map = mat_apply(&quat_to_matrix(case.map_body_q), case.map_body_t, body);
    let map_err = (md.x - map[0]).hypot(md.y - map[1]);
    (pixel_err, map_err)
}
