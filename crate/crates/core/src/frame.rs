//! Coordinate frame tags.
//!
//! Every point, cloud, mesh, transform, and motion sequence carries one of
//! these tags. Operations that combine geometry check the tags and refuse to
//! mix frames; transforms move data between frames explicitly.

use serde::{Deserialize, Serialize};

/// The coordinate systems used by the capture rig.
///
/// * `World`: gravity-aligned scene frame, x right, y forward, z up.
/// * `Lidar`: the LiDAR sensor frame.
/// * `Imu`: the body-worn inertial tracker frame.
/// * `Camera`: the camera frame of the source pose estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CoordinateFrame {
    Imu,
    Lidar,
    Camera,
    World,
}

impl std::fmt::Display for CoordinateFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            CoordinateFrame::Imu => "IMU",
            CoordinateFrame::Lidar => "LIDAR",
            CoordinateFrame::Camera => "CAMERA",
            CoordinateFrame::World => "WORLD",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for CoordinateFrame {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "IMU" => Ok(CoordinateFrame::Imu),
            "LIDAR" => Ok(CoordinateFrame::Lidar),
            "CAMERA" => Ok(CoordinateFrame::Camera),
            "WORLD" => Ok(CoordinateFrame::World),
            other => Err(crate::Error::validation(
                "frame",
                format!("unknown coordinate frame {other:?}"),
            )),
        }
    }
}

/// Checks that `found` matches `expected`, naming the operation on failure.
pub fn expect_frame(
    context: &'static str,
    expected: CoordinateFrame,
    found: CoordinateFrame,
) -> crate::Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(crate::Error::FrameMismatch {
            context,
            expected,
            found,
        })
    }
}
