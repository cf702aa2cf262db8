//! Axis-angle and rotation-matrix utilities shared by the body model, the
//! calibration routines, and the transform type.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

/// Largest allowed deviation from orthonormality for a matrix to count as a
/// rotation. Composition re-orthonormalizes when drift exceeds this.
pub const ROTATION_TOL: f64 = 1e-9;

/// Exponential map: axis-angle vector (radians) to rotation matrix.
pub fn rodrigues(axis_angle: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(*axis_angle).into_inner()
}

/// Logarithm map: rotation matrix to axis-angle vector.
///
/// Goes through a quaternion rather than `Rotation3::scaled_axis`; the trace
/// of a composed rotation can land a few ulps outside `[-1, 3]` and the
/// direct acos-based extraction then returns NaN near half-turns.
///
/// The caller is responsible for passing an actual rotation; use
/// [`polar_orthonormalize`] first when the matrix may have drifted.
pub fn log_map(rotation: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*rotation));
    q.scaled_axis()
}

/// How far `m` is from a proper rotation: the largest absolute entry of
/// `mᵀm − I` or the deviation of the determinant from one, whichever is
/// bigger.
pub fn orthonormality_deviation(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m;
    let mut dev: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev.max((m.determinant() - 1.0).abs())
}

/// Nearest proper rotation to `m` in the Frobenius sense, via the polar
/// factor of the SVD with the determinant sign corrected.
pub fn polar_orthonormalize(m: &Matrix3<f64>) -> crate::Result<Matrix3<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(crate::Error::NonFinite("rotation matrix".into()));
    }
    let svd = m.svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let smin = svd.singular_values.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    // The polar factor of a rank-deficient matrix is not unique.
    if smin <= smax * 1e-12 {
        return Err(crate::Error::InvalidRotation(format!(
            "matrix is rank deficient (singular values {:.3e} .. {:.3e})",
            smin, smax
        )));
    }
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Reflection case: flip the axis of least variance.
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    if orthonormality_deviation(&r) > 1e-7 {
        return Err(crate::Error::InvalidRotation(format!(
            "polar decomposition did not produce a rotation (deviation {:.3e}); \
             input is likely rank deficient",
            orthonormality_deviation(&r)
        )));
    }
    Ok(r)
}
