//! Point-to-point iterative closest point with optional trimming.
//!
//! Each iteration matches every source point to its nearest target point,
//! optionally discards the worst tail of matches, and refits an absolute
//! rigid transform from the original source positions, so errors never
//! accumulate across iterations.

use super::kabsch::kabsch;
use super::kdtree::NeighborIndex;
use crate::cloud::PointCloudFrame;
use crate::frame::expect_frame;
use crate::transform::RigidTransform;
use nalgebra::{Matrix3, Matrix4, Vector3};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the trimmed RMS residual changes by no more than this.
    pub tolerance: f64,
    /// Fraction of worst correspondences discarded each iteration, in [0, 1).
    pub trim_fraction: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-6,
            trim_fraction: 0.1,
        }
    }
}

impl IcpConfig {
    fn validate(&self) -> crate::Result<()> {
        if self.max_iterations == 0 {
            return Err(crate::Error::validation(
                "max_iterations",
                "must be at least 1",
            ));
        }
        if !self.tolerance.is_finite() || self.tolerance < 0.0 {
            return Err(crate::Error::validation(
                "tolerance",
                "must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.trim_fraction) {
            return Err(crate::Error::validation(
                "trim_fraction",
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Trimmed RMS distance under the final transform.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after each iteration, oldest first.
    pub residual_history: Vec<f64>,
}

impl IcpResult {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Rigid transform mapping `source` onto `target`, both in the same frame.
pub fn icp_points(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    config: &IcpConfig,
) -> crate::Result<IcpResult> {
    config.validate()?;
    if source.len() < 3 {
        return Err(crate::Error::Degenerate(format!(
            "icp needs at least 3 source points, got {}",
            source.len()
        )));
    }
    if target.is_empty() {
        return Err(crate::Error::Degenerate("icp target cloud is empty".into()));
    }

    let index = NeighborIndex::build(target)?;
    let kept = (((1.0 - config.trim_fraction) * source.len() as f64).ceil() as usize)
        .clamp(3, source.len());

    // Centroid shift is a cheap, rotation-free initial guess.
    let sc: Vector3<f64> = source.iter().sum::<Vector3<f64>>() / source.len() as f64;
    let tc: Vector3<f64> = target.iter().sum::<Vector3<f64>>() / target.len() as f64;
    let mut rotation = Matrix3::identity();
    let mut translation = tc - sc;

    let mut best: Option<IcpResult> = None;
    let mut history: Vec<f64> = Vec::new();
    let mut prev_residual = f64::INFINITY;

    for iter in 0..config.max_iterations {
        let mut matches: Vec<(f64, usize, usize)> = source
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let moved = rotation * p + translation;
                let (j, d2) = index.nearest(&moved);
                (d2, i, j)
            })
            .collect();
        matches.sort_unstable_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
        matches.truncate(kept);

        let src: Vec<Vector3<f64>> = matches.iter().map(|&(_, i, _)| source[i]).collect();
        let dst: Vec<Vector3<f64>> = matches.iter().map(|&(_, _, j)| target[j]).collect();
        match kabsch(&src, &dst, false) {
            Ok(fit) => {
                rotation = fit.rotation;
                translation = fit.translation;
            }
            // A collapsed trimmed subset ends the refinement; the best
            // transform seen so far still aligns the clouds.
            Err(crate::Error::Degenerate(_)) if best.is_some() => break,
            Err(e) => return Err(e),
        }

        let sum_sq: f64 = matches
            .iter()
            .map(|&(_, i, j)| (rotation * source[i] + translation - target[j]).norm_squared())
            .sum();
        let residual = (sum_sq / kept as f64).sqrt();
        if !residual.is_finite() {
            return Err(crate::Error::NonFinite(format!(
                "icp residual at iteration {iter}"
            )));
        }
        history.push(residual);

        let improved = best.as_ref().map_or(true, |b| residual < b.residual);
        if improved {
            best = Some(IcpResult {
                rotation,
                translation,
                residual,
                iterations: iter + 1,
                residual_history: Vec::new(),
            });
        }
        if (prev_residual - residual).abs() <= config.tolerance || residual <= config.tolerance {
            break;
        }
        prev_residual = residual;
    }

    let mut result = best.expect("at least one icp iteration ran");
    result.iterations = history.len();
    result.residual_history = history;
    Ok(result)
}

/// Cloud-level wrapper; both clouds must carry the same frame tag, and the
/// returned transform stays within that frame.
pub fn icp(
    source: &PointCloudFrame,
    target: &PointCloudFrame,
    config: &IcpConfig,
) -> crate::Result<(RigidTransform, IcpResult)> {
    expect_frame("icp source vs target", target.frame, source.frame)?;
    let result = icp_points(&source.points, &target.points, config)?;
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&result.rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&result.translation);
    let transform = RigidTransform::from_matrix(m, source.frame, source.frame)?;
    Ok((transform, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
        crate::rotation::rodrigues(&(axis.normalize() * angle))
    }

    fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let r = a.transpose() * b;
        ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn recovers_a_small_rigid_motion_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let source = random_cloud(&mut rng, 200);
        let true_r = rotation_about(&Vector3::new(0.3, 1.0, -0.2), 0.15);
        let true_t = Vector3::new(0.2, -0.1, 0.05);
        let target: Vec<Vector3<f64>> = source.iter().map(|p| true_r * p + true_t).collect();

        let config = IcpConfig {
            trim_fraction: 0.0,
            ..IcpConfig::default()
        };
        let result = icp_points(&source, &target, &config).unwrap();
        assert!(angle_between(&result.rotation, &true_r) < 1e-9);
        assert!((result.translation - true_t).norm() < 1e-9);
        assert!(result.residual < 1e-9);
    }

    #[test]
    fn trimming_survives_gross_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut source = random_cloud(&mut rng, 300);
        let true_r = rotation_about(&Vector3::new(0.0, 0.0, 1.0), 0.1);
        let true_t = Vector3::new(0.05, 0.02, -0.03);
        let target: Vec<Vector3<f64>> = source.iter().map(|p| true_r * p + true_t).collect();
        // Corrupt 5% of the source; trimming at 10% should shed them.
        for k in 0..15 {
            source[k * 20] += Vector3::new(5.0, -4.0, 6.0);
        }

        let result = icp_points(&source, &target, &IcpConfig::default()).unwrap();
        assert!(angle_between(&result.rotation, &true_r) < 1e-6);
        assert!((result.translation - true_t).norm() < 1e-6);
    }

    #[test]
    fn untrimmed_residuals_never_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let source = random_cloud(&mut rng, 150);
        let true_r = rotation_about(&Vector3::new(1.0, 0.2, 0.1), 0.4);
        let target: Vec<Vector3<f64>> =
            source.iter().map(|p| true_r * p + Vector3::new(0.3, 0.0, 0.1)).collect();
        let config = IcpConfig {
            trim_fraction: 0.0,
            tolerance: 0.0,
            max_iterations: 30,
        };
        let result = icp_points(&source, &target, &config).unwrap();
        for w in result.residual_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "residual rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn disjoint_clouds_finish_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let source = random_cloud(&mut rng, 50);
        let target: Vec<Vector3<f64>> = random_cloud(&mut rng, 50)
            .into_iter()
            .map(|p| p + Vector3::new(100.0, 0.0, 0.0))
            .collect();
        let result = icp_points(&source, &target, &IcpConfig::default()).unwrap();
        assert!(result.residual.is_finite());
        assert!(result.translation.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cloud_wrapper_checks_frames() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let a = PointCloudFrame::new(
            pts.clone(),
            0.0,
            crate::CoordinateFrame::Lidar,
            crate::cloud::PointLabel::Raw,
        )
        .unwrap();
        let b = PointCloudFrame::new(
            pts,
            0.0,
            crate::CoordinateFrame::World,
            crate::cloud::PointLabel::Raw,
        )
        .unwrap();
        assert!(matches!(
            icp(&a, &b, &IcpConfig::default()),
            Err(crate::Error::FrameMismatch { .. })
        ));
        let (transform, result) = icp(&a, &a, &IcpConfig::default()).unwrap();
        assert!(result.residual < 1e-12);
        assert_eq!(transform.source_frame(), crate::CoordinateFrame::Lidar);
    }
}
