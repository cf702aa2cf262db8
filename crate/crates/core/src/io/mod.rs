//! On-disk formats: JSON documents for motions, transforms, trajectories,
//! and body templates; PLY (ascii and binary little-endian) for point clouds
//! and scene meshes.
//!
//! All writers emit byte-deterministic output for identical inputs: floats
//! are printed in Rust's shortest round-trip form and field order is fixed.

mod json;
mod ply;

pub use json::{
    load_json, load_motion, load_template, load_trajectory, load_transform, save_json,
    save_motion, save_template, save_trajectory, save_transform, SensorTrajectory,
};
pub use ply::{load_cloud_ply, load_mesh_ply, save_cloud_ply, save_mesh_ply};

use std::path::Path;

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> crate::Error {
    crate::Error::Io {
        path: path.display().to_string(),
        source,
    }
}
