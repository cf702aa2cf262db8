//! Hidden point removal by spherical flipping.
//!
//! Each point is reflected about a sphere of radius `R = 10^gamma * max_dist`
//! centered on the viewpoint; a point of the original cloud is visible from
//! the viewpoint exactly when its reflection lies on the convex hull of the
//! reflected cloud plus the viewpoint itself.

use super::hull::convex_hull_3d;
use nalgebra::Vector3;

/// Indices (sorted) of points visible from `viewpoint`.
///
/// Larger `gamma` grows the flipping radius and admits more points; 2.0 is a
/// reasonable default for room-scale scans.
pub fn hpr(
    points: &[Vector3<f64>],
    viewpoint: &Vector3<f64>,
    gamma: f64,
) -> crate::Result<Vec<usize>> {
    if points.is_empty() {
        return Err(crate::Error::Degenerate(
            "visibility of an empty cloud is undefined".into(),
        ));
    }
    if !gamma.is_finite() {
        return Err(crate::Error::NonFinite("hpr gamma".into()));
    }

    let centered: Vec<Vector3<f64>> = points.iter().map(|p| p - viewpoint).collect();
    let max_norm = centered.iter().map(|p| p.norm()).fold(0.0f64, f64::max);
    if !max_norm.is_finite() {
        return Err(crate::Error::NonFinite("hpr input point".into()));
    }
    let radius = 10f64.powf(gamma) * max_norm;
    if radius <= 0.0 {
        return Err(crate::Error::Degenerate(
            "all points coincide with the viewpoint".into(),
        ));
    }

    let mut flipped: Vec<Vector3<f64>> = Vec::with_capacity(centered.len() + 1);
    for (i, p) in centered.iter().enumerate() {
        let norm = p.norm();
        if norm <= max_norm * 1e-12 {
            return Err(crate::Error::Degenerate(format!(
                "point {i} coincides with the viewpoint; flipping is undefined"
            )));
        }
        flipped.push(p * (2.0 * radius / norm - 1.0));
    }
    // The viewpoint itself participates so that hull membership means
    // "visible from here", not merely "extremal".
    flipped.push(Vector3::zeros());
    let sentinel = flipped.len() - 1;

    let hull = convex_hull_3d(&flipped)?;
    Ok(hull
        .vertex_indices
        .into_iter()
        .filter(|&i| i != sentinel)
        .collect())
}
