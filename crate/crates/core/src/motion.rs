//! Articulated motion sequences.

use nalgebra::Vector3;
use crate::frame::CoordinateFrame;
use crate::rotation::{log_map, rodrigues};
use crate::transform::RigidTransform;

/// Number of joints in the kinematic tree.
pub const JOINT_COUNT: usize = 24;
/// Number of shape coefficients.
pub const SHAPE_COUNT: usize = 10;

/// Per-frame joint rotations, axis-angle in radians.
pub type FramePose = [Vector3<f64>; JOINT_COUNT];

/// A motion clip: per-frame root translations and joint rotations plus one
/// shape vector shared by all frames.
///
/// `translations[k]` is the world position of the root joint at frame `k`
/// (the body template places the rest root joint at the origin). Rotations
/// are axis-angle; entry 0 is the global root orientation and the rest are
/// joint-local.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub translations: Vec<Vector3<f64>>,
    pub poses: Vec<FramePose>,
    pub betas: [f64; SHAPE_COUNT],
    pub frame_rate: f64,
    pub frame: CoordinateFrame,
}

impl MotionSequence {
    pub fn new(
        translations: Vec<Vector3<f64>>,
        poses: Vec<FramePose>,
        betas: [f64; SHAPE_COUNT],
        frame_rate: f64,
        frame: CoordinateFrame,
    ) -> crate::Result<Self> {
        let seq = Self {
            translations,
            poses,
            betas,
            frame_rate,
            frame,
        };
        seq.validate()?;
        Ok(seq)
    }

    /// A resting sequence of `n` frames: zero translation, zero pose.
    pub fn rest(n: usize, frame_rate: f64, frame: CoordinateFrame) -> crate::Result<Self> {
        Self::new(
            vec![Vector3::zeros(); n],
            vec![[Vector3::zeros(); JOINT_COUNT]; n],
            [0.0; SHAPE_COUNT],
            frame_rate,
            frame,
        )
    }

    pub fn num_frames(&self) -> usize {
        self.translations.len()
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.translations.is_empty() {
            return Err(crate::Error::validation("T", "sequence must have at least one frame"));
        }
        if self.poses.len() != self.translations.len() {
            return Err(crate::Error::DimensionMismatch {
                context: "motion poses vs translations",
                expected: self.translations.len(),
                got: self.poses.len(),
            });
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(crate::Error::validation(
                "frame_rate",
                format!("must be positive and finite, got {}", self.frame_rate),
            ));
        }
        for (k, t) in self.translations.iter().enumerate() {
            if !t.iter().all(|v| v.is_finite()) {
                return Err(crate::Error::validation(format!("T[{k}]"), "non-finite value"));
            }
        }
        for (k, pose) in self.poses.iter().enumerate() {
            for (j, aa) in pose.iter().enumerate() {
                if !aa.iter().all(|v| v.is_finite()) {
                    return Err(crate::Error::validation(
                        format!("theta[{k}][{j}]"),
                        "non-finite value",
                    ));
                }
            }
        }
        if !self.betas.iter().all(|v| v.is_finite()) {
            return Err(crate::Error::validation("beta", "non-finite value"));
        }
        Ok(())
    }

    /// Pre-composes every frame's global placement with the rigid transform
    /// `g`: translations map as points, root orientations compose on the
    /// left, joint-local rotations are untouched. Requires the motion to live
    /// in `g`'s source frame; the result lives in its target frame.
    ///
    /// Because the rest root joint sits at the origin, skinning the result
    /// equals applying `g` to the skinned input.
    pub fn precompose_rigid(&self, g: &RigidTransform) -> crate::Result<MotionSequence> {
        crate::frame::expect_frame("precompose_rigid", g.source_frame(), self.frame)?;
        let r = g.rotation();
        let mut out = self.clone();
        out.frame = g.target_frame();
        for t in &mut out.translations {
            *t = g.apply_point(t);
        }
        for pose in &mut out.poses {
            pose[0] = log_map(&(r * rodrigues(&pose[0])));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn validation_catches_structural_problems() {
        let mut m = MotionSequence::rest(3, 30.0, CoordinateFrame::World).unwrap();
        m.poses.pop();
        assert!(m.validate().is_err());

        let mut m = MotionSequence::rest(3, 30.0, CoordinateFrame::World).unwrap();
        m.frame_rate = 0.0;
        assert!(m.validate().is_err());

        let mut m = MotionSequence::rest(3, 30.0, CoordinateFrame::World).unwrap();
        m.translations[1].x = f64::NAN;
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("T[1]"), "{err}");
    }

    #[test]
    fn precompose_by_pure_translation_shifts_t_only() {
        let mut m = MotionSequence::rest(2, 30.0, CoordinateFrame::Camera).unwrap();
        m.poses[0][0] = Vector3::new(0.1, 0.2, 0.3);
        let g = RigidTransform::new(
            nalgebra::Matrix3::identity(),
            Vector3::new(1.0, -2.0, 0.5),
            CoordinateFrame::Camera,
            CoordinateFrame::World,
        )
        .unwrap();
        let out = m.precompose_rigid(&g).unwrap();
        assert_eq!(out.frame, CoordinateFrame::World);
        assert_abs_diff_eq!(out.translations[0], Vector3::new(1.0, -2.0, 0.5), epsilon = 1e-15);
        assert_abs_diff_eq!(out.poses[0][0], m.poses[0][0], epsilon = 1e-12);
        assert_abs_diff_eq!(out.poses[1][0], Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn precompose_checks_frames() {
        let m = MotionSequence::rest(1, 30.0, CoordinateFrame::World).unwrap();
        let g = RigidTransform::identity(CoordinateFrame::Camera);
        assert!(m.precompose_rigid(&g).is_err());
    }
}
