//! Scene-aware refinement of articulated human motion.
//!
//! The crate turns a noisy articulated-body motion estimate, a sequence of
//! LiDAR point clouds, and a triangulated scene mesh into a motion that is
//! contact-consistent, penetration-free, smooth, and registered to the scene.
//!
//! The pipeline is organised as:
//!
//! * [`body`]: linear-blend-skinned body model with a 24-joint kinematic tree.
//! * [`geometry`]: nearest-neighbour index, rigid/similarity alignment, ICP,
//!   hidden point removal, convex hulls, Chamfer distance, penetration depth.
//! * [`calib`]: coarse sensor-to-world calibration from plane normals and a
//!   camera-to-world lift for motion sequences.
//! * [`losses`]: contact, sliding, smoothness, and cloud registration terms
//!   with their gating rules.
//! * [`optimize`]: finite-difference gradients over frozen gates driven by
//!   Adam, with a staged schedule.
//! * [`metrics`]: standard pose and trajectory error metrics.
//! * [`synth`]: deterministic synthetic scenes, climbing motions, simulated
//!   LiDAR sweeps, and controlled corruption, used as ground-truth oracles.
//!
//! All geometry is metric (metres, radians) and every geometric object is
//! tagged with the coordinate frame it lives in; mixing frames is an error,
//! not a silent bug.

pub mod body;
pub mod calib;
pub mod cloud;
pub mod config;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod motion;
pub mod optimize;
pub mod parallel;
pub mod rotation;
pub mod synth;
pub mod transform;

pub use cloud::{PointCloudFrame, PointLabel};
pub use error::{Error, Result};
pub use frame::CoordinateFrame;
pub use mesh::SceneMesh;
pub use motion::MotionSequence;
pub use transform::RigidTransform;
