//! Two-sided normalized Chamfer distance.

use nalgebra::Vector3;
use super::kdtree::NeighborIndex;
use crate::parallel;

/// Mean squared nearest-neighbour distance from every point in `from` to the
/// indexed set.
pub fn one_sided_mean_sq(from: &[Vector3<f64>], to: &NeighborIndex) -> f64 {
    let d2s = parallel::map_indexed(from.len(), |i| to.nearest(&from[i]).1);
    parallel::sum_ordered(&d2s) / from.len() as f64
}

/// Two-sided normalized squared Chamfer distance:
/// `(1/|a|) Σₐ min‖a−b‖² + (1/|b|) Σ_b min‖b−a‖²`.
pub fn chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> crate::Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(crate::Error::Degenerate(
            "chamfer distance of an empty point set".into(),
        ));
    }
    let ia = NeighborIndex::build(a)?;
    let ib = NeighborIndex::build(b)?;
    Ok(one_sided_mean_sq(a, &ib) + one_sided_mean_sq(b, &ia))
}

/// Quadratic reference implementation for the oracle tests.
pub fn chamfer_brute(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let min_d2 = |p: &Vector3<f64>, set: &[Vector3<f64>]| {
        set.iter()
            .map(|q| {
                let dx = p.x - q.x;
                let dy = p.y - q.y;
                let dz = p.z - q.z;
                dx * dx + dy * dy + dz * dz
            })
            .fold(f64::INFINITY, f64::min)
    };
    let fwd: f64 = a.iter().map(|p| min_d2(p, b)).sum::<f64>() / a.len() as f64;
    let bwd: f64 = b.iter().map(|p| min_d2(p, a)).sum::<f64>() / b.len() as f64;
    fwd + bwd
}
