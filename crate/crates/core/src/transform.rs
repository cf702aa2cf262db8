//! Rigid transforms between tagged coordinate frames.

use nalgebra::{Matrix3, Matrix4, Vector3};
use crate::frame::{expect_frame, CoordinateFrame};
use crate::rotation::{orthonormality_deviation, polar_orthonormalize, ROTATION_TOL};

/// A proper rigid transform (rotation + translation) that maps points from
/// `source_frame` into `target_frame`.
///
/// Stored as a homogeneous 4×4 matrix; the rotation block is kept orthonormal
/// with determinant +1 within [`ROTATION_TOL`]. Composition re-orthonormalizes
/// through the polar decomposition when accumulated drift exceeds the
/// tolerance, so long chains stay valid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
    source_frame: CoordinateFrame,
    target_frame: CoordinateFrame,
}

impl RigidTransform {
    /// Builds a transform from a rotation block and translation vector.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        source_frame: CoordinateFrame,
        target_frame: CoordinateFrame,
    ) -> crate::Result<Self> {
        let dev = orthonormality_deviation(&rotation);
        if !dev.is_finite() || dev > ROTATION_TOL {
            return Err(crate::Error::InvalidRotation(format!(
                "rotation block deviates from orthonormal by {dev:.3e} (tolerance {ROTATION_TOL:.0e})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(crate::Error::NonFinite("translation".into()));
        }
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Ok(Self {
            matrix,
            source_frame,
            target_frame,
        })
    }

    /// Builds a transform from a homogeneous 4×4 matrix whose last row must
    /// be (0, 0, 0, 1).
    pub fn from_matrix(
        matrix: Matrix4<f64>,
        source_frame: CoordinateFrame,
        target_frame: CoordinateFrame,
    ) -> crate::Result<Self> {
        let bottom = matrix.fixed_view::<1, 4>(3, 0);
        let expected = [0.0, 0.0, 0.0, 1.0];
        for (i, &want) in expected.iter().enumerate() {
            if (bottom[(0, i)] - want).abs() > 1e-12 {
                return Err(crate::Error::validation(
                    "matrix",
                    format!(
                        "homogeneous bottom row must be (0, 0, 0, 1), found entry {} = {}",
                        i,
                        bottom[(0, i)]
                    ),
                ));
            }
        }
        let rotation: Matrix3<f64> = matrix.fixed_view::<3, 3>(0, 0).into();
        let translation: Vector3<f64> = matrix.fixed_view::<3, 1>(0, 3).into();
        Self::new(rotation, translation, source_frame, target_frame)
    }

    /// The identity transform within a single frame.
    pub fn identity(frame: CoordinateFrame) -> Self {
        Self {
            matrix: Matrix4::identity(),
            source_frame: frame,
            target_frame: frame,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into()
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn source_frame(&self) -> CoordinateFrame {
        self.source_frame
    }

    pub fn target_frame(&self) -> CoordinateFrame {
        self.target_frame
    }

    /// Maps a point from the source frame into the target frame.
    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Rotates a direction (no translation).
    pub fn apply_direction(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * d
    }

    /// `self ∘ other`: first apply `other`, then `self`. Requires
    /// `other.target_frame == self.source_frame`.
    pub fn compose(&self, other: &RigidTransform) -> crate::Result<RigidTransform> {
        expect_frame("compose", self.source_frame, other.target_frame)?;
        let matrix = self.matrix * other.matrix;
        let rotation: Matrix3<f64> = matrix.fixed_view::<3, 3>(0, 0).into();
        let rotation = if orthonormality_deviation(&rotation) > ROTATION_TOL {
            polar_orthonormalize(&rotation)?
        } else {
            rotation
        };
        RigidTransform::new(
            rotation,
            matrix.fixed_view::<3, 1>(0, 3).into(),
            other.source_frame,
            self.target_frame,
        )
    }

    /// The inverse transform, mapping target frame back to source frame.
    pub fn inverse(&self) -> RigidTransform {
        let r_inv = self.rotation().transpose();
        let t_inv = -r_inv * self.translation();
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_inv);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&t_inv);
        Self {
            matrix,
            source_frame: self.target_frame,
            target_frame: self.source_frame,
        }
    }
}
