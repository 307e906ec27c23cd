//! Rigid transforms, pinhole back-projection and flattening to the map plane.
//!
//! Camera points use the optical convention: z forward, x right, y down.
//! Any other mounting convention is absorbed by the body-to-camera extrinsic.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no valid depth sample inside the detection")]
    NoValidDepth,
    #[error("quaternion is zero or non-finite")]
    InvalidQuaternion,
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("principal point must lie inside the image".into()));
        }
        Ok(())
    }

    /// Projects a camera-frame point to pixel coordinates. `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Inverts the pinhole model for a pixel at a known depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        Point3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth)
    }

    /// Horizontal field of view in radians.
    pub fn horizontal_fov(&self) -> f64 {
        (self.cx / self.fx).atan() + ((self.width as f64 - self.cx) / self.fx).atan()
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

/// Rigid 3D transform. The rotation is renormalized on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3(Isometry3<f64>);

impl Pose3 {
    /// `rotation` is `[w, x, y, z]`.
    pub fn new(translation: [f64; 3], rotation: [f64; 4]) -> Result<Self, GeometryError> {
        let [w, x, y, z] = rotation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 || translation.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidQuaternion);
        }
        let rot = UnitQuaternion::from_quaternion(q);
        Ok(Self(Isometry3::from_parts(Translation3::new(translation[0], translation[1], translation[2]), rot)))
    }

    pub fn identity() -> Self {
        Self(Isometry3::identity())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self(Isometry3::translation(x, y, z))
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        Self(iso)
    }

    /// Lifts a planar pose to 3D at height `z` with zero roll and pitch.
    pub fn from_pose2(p: &Pose2, z: f64) -> Self {
        Self(Isometry3::from_parts(
            Translation3::new(p.x, p.y, z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), p.yaw),
        ))
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.0
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.translation.vector
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.0.rotation
    }

    /// `[w, x, y, z]`
    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.0.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: applying the result equals applying `other`, then `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3(self.0 * other.0)
    }

    pub fn inverse(&self) -> Pose3 {
        Pose3(self.0.inverse())
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.0.transform_point(p)
    }

    /// Heading of the x axis projected onto the map plane.
    pub fn yaw(&self) -> f64 {
        let q = self.0.rotation.quaternion();
        let (w, x, y, z) = (q.w, q.i, q.j, q.k);
        (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }

    pub fn flatten(&self) -> Pose2 {
        let t = self.translation();
        Pose2::new(t.x, t.y, self.yaw())
    }

    /// Linear translation and shortest-arc rotation interpolation, `s` in `[0, 1]`.
    pub fn interpolate(&self, other: &Pose3, s: f64) -> Pose3 {
        let t = self.translation().lerp(&other.translation(), s);
        let a = self.0.rotation;
        let mut b = other.0.rotation;
        if a.coords.dot(&b.coords) < 0.0 {
            b = UnitQuaternion::new_unchecked(-b.into_inner());
        }
        let rot = a.try_slerp(&b, s, 1e-12).unwrap_or_else(|| a.nlerp(&b, s));
        Pose3(Isometry3::from_parts(Translation3::from(t), rot))
    }
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

/// Planar pose in the map frame. Yaw is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )
    }

    /// Linear position and shortest-arc yaw interpolation.
    pub fn interpolate(&self, other: &Pose2, s: f64) -> Pose2 {
        let dyaw = wrap_angle(other.yaw - self.yaw);
        Pose2::new(
            self.x + (other.x - self.x) * s,
            self.y + (other.y - self.y) * s,
            self.yaw + dyaw * s,
        )
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Self { x: 0.0, y: 0.0, yaw: 0.0 }
    }
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BBox {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self, GeometryError> {
        if ![u_min, v_min, u_max, v_max].iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidBBox("non-finite corner".into()));
        }
        if !(u_min < u_max && v_min < v_max) {
            return Err(GeometryError::InvalidBBox(format!(
                "degenerate box [{u_min}, {v_min}, {u_max}, {v_max}]"
            )));
        }
        Ok(Self { u_min, v_min, u_max, v_max })
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.u_min + self.u_max) * 0.5, (self.v_min + self.v_max) * 0.5)
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn fits(&self, intr: &CameraIntrinsics) -> bool {
        self.u_min >= 0.0
            && self.v_min >= 0.0
            && self.u_max <= intr.width as f64
            && self.v_max <= intr.height as f64
    }

    /// Centered sub-box with half the width and height (a quarter of the area).
    pub fn central_region(&self) -> BBox {
        let (u, v) = self.center();
        let (hw, hh) = (self.width() * 0.25, self.height() * 0.25);
        BBox { u_min: u - hw, v_min: v - hh, u_max: u + hw, v_max: v + hh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub class_label: Arc<str>,
    pub score: f64,
    pub bbox: BBox,
}

/// A detection placed on the map plane. There is no height component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDetection {
    pub class_label: Arc<str>,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub score: f64,
    pub stamp: f64,
}

/// Source of depth values, in meters, for a pixel region.
pub trait DepthSampler {
    fn sample(&self, region: &BBox, out: &mut Vec<f64>);
}

/// Depth values already extracted from the sampling region.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DepthSamples(pub Vec<f64>);

impl DepthSamples {
    /// Zero and negative encodings mark missing depth.
    pub fn from_millimeters(mm: &[i64]) -> Self {
        Self(mm.iter().map(|&d| if d > 0 { d as f64 * 1e-3 } else { 0.0 }).collect())
    }
}

impl DepthSampler for DepthSamples {
    fn sample(&self, _region: &BBox, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.0);
    }
}

/// Row-major full-frame depth image in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn filled(width: u32, height: u32, depth: f64) -> Self {
        Self { width, height, data: vec![depth; width as usize * height as usize] }
    }

    fn pixel_span(lo: f64, hi: f64, size: u32) -> Option<(u32, u32)> {
        // pixels whose centers fall inside [lo, hi]
        let mut first = (lo - 0.5).ceil();
        let mut last = (hi - 0.5).floor();
        if first > last {
            let c = ((lo + hi) * 0.5).floor();
            first = c;
            last = c;
        }
        let first = first.max(0.0);
        let last = last.min(size as f64 - 1.0);
        (first <= last).then_some((first as u32, last as u32))
    }
}

impl DepthSampler for DepthImage {
    fn sample(&self, region: &BBox, out: &mut Vec<f64>) {
        let (Some((u0, u1)), Some((v0, v1))) = (
            Self::pixel_span(region.u_min, region.u_max, self.width),
            Self::pixel_span(region.v_min, region.v_max, self.height),
        ) else {
            return;
        };
        for v in v0..=v1 {
            let row = v as usize * self.width as usize;
            out.extend_from_slice(&self.data[row + u0 as usize..=row + u1 as usize]);
        }
    }
}

/// Median of the valid (finite, positive) values, or `None` when there are none.
pub fn valid_median(values: &mut Vec<f64>) -> Option<f64> {
    values.retain(|d| d.is_finite() && *d > 0.0);
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Recovers the camera-frame point for a box center, using the median depth over
/// the central quarter-area region.
pub fn back_project<D: DepthSampler + ?Sized>(
    bbox: &BBox,
    depth: &D,
    intr: &CameraIntrinsics,
) -> Result<Point3<f64>, GeometryError> {
    let mut samples = Vec::new();
    depth.sample(&bbox.central_region(), &mut samples);
    let z = valid_median(&mut samples).ok_or(GeometryError::NoValidDepth)?;
    let (u, v) = bbox.center();
    Ok(intr.unproject(u, v, z))
}

/// Chains a camera-frame point through body and map frames and drops its height.
///
/// The stored yaw is the bearing of the robot-to-object ray in the map frame.
pub fn detection_to_map(
    det: &Detection2D,
    point_cam: &Point3<f64>,
    body_cam: &Pose3,
    map_body: &Pose3,
    stamp: f64,
) -> MapDetection {
    let p = map_body.transform_point(&body_cam.transform_point(point_cam));
    let robot = map_body.translation();
    let yaw = wrap_angle((p.y - robot.y).atan2(p.x - robot.x));
    MapDetection {
        class_label: det.class_label.clone(),
        x: p.x,
        y: p.y,
        yaw,
        score: det.score,
        stamp,
    }
}

/// Rotation taking optical axes (z forward, x right, y down) to a forward-x,
/// left-y, up-z body frame.
pub fn optical_to_body_rotation() -> [f64; 4] {
    [0.5, -0.5, 0.5, -0.5]
}
