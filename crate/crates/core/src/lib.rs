//! Label propagation over accumulated LiDAR scans.
//!
//! The pipeline keeps a sliding window of registered, already-segmented
//! scans (the reference cloud), geometrically propagates static labels onto
//! each incoming scan, clusters whatever stays unlabeled, enriches those
//! clusters with context from the window, hands them to a pluggable
//! segmentation backend, and fuses both label sources into the final
//! per-point output. Cross-dataset evaluation ships with intersection
//! label-set mappings and IoU scoring.

pub mod accumulation;
pub mod backend;
pub mod clustering;
pub mod dataset;
pub mod densification;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod mos;
pub mod pipeline;
pub mod propagation;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::{Frame, LabeledPoint, Point3, RigidPose, ScanCloud};
pub use pipeline::{Pipeline, PipelineConfig, SequenceResult};
