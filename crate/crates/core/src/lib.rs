//! Cross-dataset 3D human pose evaluation.
//!
//! The crate canonicalizes heterogeneous motion-capture datasets into a
//! single camera-space representation (16 joints, millimetres) and evaluates
//! prediction sources against it under two protocols: raw joint error and
//! Procrustes-aligned joint error. On top of the per-sample errors it builds
//! viewpoint-distribution analytics and leaderboard reports.

pub mod analytics;
pub mod datasets;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod normalize;
pub mod runner;
pub mod skeleton;
