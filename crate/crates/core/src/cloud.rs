//! Timestamped point clouds.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use crate::frame::{expect_frame, CoordinateFrame};
use crate::transform::RigidTransform;

/// What a cloud's points belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PointLabel {
    Human,
    Scene,
    Raw,
}

impl std::fmt::Display for PointLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PointLabel::Human => "HUMAN",
            PointLabel::Scene => "SCENE",
            PointLabel::Raw => "RAW",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PointLabel {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HUMAN" => Ok(PointLabel::Human),
            "SCENE" => Ok(PointLabel::Scene),
            "RAW" => Ok(PointLabel::Raw),
            other => Err(crate::Error::validation(
                "label",
                format!("unknown point label {other:?}"),
            )),
        }
    }
}

/// One LiDAR sweep (or any point set) with a timestamp and a frame tag.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    pub points: Vec<Vector3<f64>>,
    pub timestamp: f64,
    pub frame: CoordinateFrame,
    pub label: PointLabel,
}

impl PointCloudFrame {
    pub fn new(
        points: Vec<Vector3<f64>>,
        timestamp: f64,
        frame: CoordinateFrame,
        label: PointLabel,
    ) -> crate::Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(crate::Error::validation(
                    format!("points[{i}]"),
                    "non-finite coordinate",
                ));
            }
        }
        if !timestamp.is_finite() {
            return Err(crate::Error::validation("timestamp", "non-finite value"));
        }
        Ok(Self {
            points,
            timestamp,
            frame,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maps the cloud through `t`, checking that the cloud lives in `t`'s
    /// source frame.
    pub fn transformed(&self, t: &RigidTransform) -> crate::Result<PointCloudFrame> {
        expect_frame("cloud transform", t.source_frame(), self.frame)?;
        Ok(PointCloudFrame {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            timestamp: self.timestamp,
            frame: t.target_frame(),
            label: self.label,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_retags_the_cloud() {
        let cloud = PointCloudFrame::new(
            vec![Vector3::new(1.0, 0.0, 0.0)],
            0.5,
            CoordinateFrame::Lidar,
            PointLabel::Raw,
        )
        .unwrap();
        let t = RigidTransform::new(
            nalgebra::Matrix3::identity(),
            Vector3::new(0.0, 0.0, 2.0),
            CoordinateFrame::Lidar,
            CoordinateFrame::World,
        )
        .unwrap();
        let out = cloud.transformed(&t).unwrap();
        assert_eq!(out.frame, CoordinateFrame::World);
        assert_eq!(out.points[0], Vector3::new(1.0, 0.0, 2.0));
        assert!(cloud.transformed(&t.inverse()).is_err());
    }

    #[test]
    fn rejects_non_finite_points() {
        let res = PointCloudFrame::new(
            vec![Vector3::new(f64::INFINITY, 0.0, 0.0)],
            0.0,
            CoordinateFrame::World,
            PointLabel::Scene,
        );
        assert!(res.is_err());
    }
}
