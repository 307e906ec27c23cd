//! Online object-level semantic mapping driven by sensor logs.
//!
//! Detections are back-projected through aligned depth into a 2D map frame,
//! merged within a frame, and associated across frames into persistent
//! object instances through a short-term candidate buffer and a long-term
//! object list. Laser scans build a log-odds occupancy grid that the object
//! layer is anchored to. Everything is driven by replaying a run log, either
//! recorded or produced by the built-in simulator.

pub mod cli_service;
pub mod geometry;
pub mod ingestion;
pub mod occupancy;
pub mod semantic_layer;
pub mod simulator;

pub use geometry::{BBox, CameraIntrinsics, Detection2D, MapDetection, Pose2, Pose3};
pub use ingestion::{replay, LogRecord, RunConfig, RunReport};
pub use occupancy::{OccupancyGrid, OccupancyParams};
pub use semantic_layer::{
    AssociationEvent, EventKind, LayerConfig, MapObject, ObjectMapSnapshot, SemanticLayer,
};
pub use simulator::{GroundTruth, Scenario};

/// Version tag written into every output document.
pub const FORMAT_VERSION: u32 = 1;
