//! Angle-based SLAM over 5G NR mmWave beam management.
//!
//! The crate simulates beam-swept RSRP measurements from a 2-D geometric
//! scene, extracts (AOD, AOA) pairs by successive cancellation, and runs a
//! particle-based belief-propagation SLAM filter that tracks the UE and maps
//! the radio features (physical and virtual anchors) of the environment.
//!
//! See the `book/` guide for a narrative walk-through of each stage; its code
//! snippets are compiled as doc-tests to keep them in sync with the library.

pub mod angle_extract;
pub mod beamsim;
pub mod bp_slam;
pub mod geometry;
pub mod metrics;
pub mod runner;
pub mod scenario;

pub use geometry::{wrap_angle, GeometryError, Point2, Pose, Rect, Scene, Wall};
