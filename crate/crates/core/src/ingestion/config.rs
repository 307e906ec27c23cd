use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{optical_to_body_rotation, CameraIntrinsics, Pose2, Pose3};
use crate::occupancy::OccupancyParams;
use crate::semantic_layer::LayerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Body-to-camera transform as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    /// Translation, meters.
    pub p: [f64; 3],
    /// Rotation quaternion `[w, x, y, z]`.
    pub q: [f64; 4],
}

impl PoseSpec {
    pub fn to_pose(&self) -> Result<Pose3, ConfigError> {
        Pose3::new(self.p, self.q).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Extrinsics {
    pub body_cam: PoseSpec,
    pub body_lidar: Pose2,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self {
            body_cam: PoseSpec { p: [0.25, 0.0, 0.4], q: optical_to_body_rotation() },
            body_lidar: Pose2::new(0.1, 0.0, 0.0),
        }
    }
}

/// Everything a replay needs besides the log itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Largest tolerated gap between a query stamp and the pose stream, seconds.
    pub max_pose_skew: f64,
    pub layer: LayerConfig,
    pub occupancy: OccupancyParams,
    pub camera: CameraIntrinsics,
    pub extrinsics: Extrinsics,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_pose_skew: 0.05,
            layer: LayerConfig::default(),
            occupancy: OccupancyParams::default(),
            camera: CameraIntrinsics::default(),
            extrinsics: Extrinsics::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let l = cfg.extrinsics.body_lidar;
        cfg.extrinsics.body_lidar = Pose2::new(l.x, l.y, l.yaw);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.max_pose_skew > 0.0 && self.max_pose_skew.is_finite()) {
            return Err(ConfigError::Invalid("max_pose_skew must be positive".into()));
        }
        self.layer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.occupancy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.camera.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.extrinsics.body_cam.to_pose()?;
        Ok(())
    }

    pub fn body_cam(&self) -> Pose3 {
        self.extrinsics.body_cam.to_pose().expect("validated extrinsic")
    }
}
