//! Coarse extrinsic calibration between sensor frames and the world.
//!
//! The world frame is anchored to the capture site: z points up along the
//! ground normal, y points forward toward the climbing surface, x completes
//! the right-handed triad, and the origin sits on the ground below the
//! sensor (offset forward by a fixed amount so the subject starts near the
//! origin).

use crate::cloud::PointCloudFrame;
use crate::frame::CoordinateFrame;
use crate::motion::MotionSequence;
use crate::rotation::{orthonormality_deviation, polar_orthonormalize, ROTATION_TOL};
use crate::transform::RigidTransform;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Geometric observations the LiDAR alignment is built from, all expressed
/// in the LiDAR frame.
#[derive(Debug, Clone)]
pub struct CalibrationInput {
    /// Unit normal of the ground plane, pointing up toward the sensor side.
    pub ground: Vector3<f64>,
    /// Unit normal of the climbing surface, pointing forward away from the
    /// sensor (the direction the subject faces).
    pub plane: Vector3<f64>,
    /// Distance from the sensor origin down to the ground plane, metres.
    pub lidar_height: f64,
    /// Forward shift of the world origin from the point below the sensor.
    pub forward_offset: f64,
}

impl CalibrationInput {
    pub fn new(ground: Vector3<f64>, plane: Vector3<f64>, lidar_height: f64) -> crate::Result<Self> {
        let input = Self {
            ground,
            plane,
            lidar_height,
            forward_offset: 0.2,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [("ground", &self.ground), ("plane", &self.plane)] {
            if (v.norm() - 1.0).abs() > 1e-6 {
                return Err(crate::Error::validation(
                    name,
                    format!("normal must be unit length, |v| = {}", v.norm()),
                ));
            }
        }
        if !self.lidar_height.is_finite() || self.lidar_height <= 0.0 {
            return Err(crate::Error::validation(
                "lidar_height",
                "must be finite and positive",
            ));
        }
        if self.ground.cross(&self.plane).norm() < 1e-6 {
            return Err(crate::Error::Degenerate(
                "ground and surface normals are parallel; the triad is undefined".into(),
            ));
        }
        Ok(())
    }
}

/// LiDAR-to-world transform from plane observations.
///
/// Returns the transform and the orthonormality deviation of the raw triad
/// before any correction; exactly perpendicular inputs pass through without
/// modification, while skewed inputs are repaired by projecting the ground
/// direction out of the surface normal and re-orthonormalizing.
pub fn coarse_calibration_lidar(
    input: &CalibrationInput,
) -> crate::Result<(RigidTransform, f64)> {
    input.validate()?;
    let g = input.ground;
    let mut m = input.plane;
    let raw = Matrix3::from_rows(&[
        m.cross(&g).transpose(),
        m.transpose(),
        g.transpose(),
    ]);
    let deviation = orthonormality_deviation(&raw);
    let rotation = if deviation <= ROTATION_TOL {
        raw
    } else {
        // The ground direction is the more trustworthy observation; force
        // the surface normal perpendicular to it, then polish.
        m = (m - g * m.dot(&g)).normalize();
        let e = m.cross(&g);
        let repaired = Matrix3::from_rows(&[e.transpose(), m.transpose(), g.transpose()]);
        if orthonormality_deviation(&repaired) <= ROTATION_TOL {
            repaired
        } else {
            polar_orthonormalize(&repaired)?
        }
    };
    let translation = Vector3::new(0.0, input.forward_offset, input.lidar_height);
    let transform = RigidTransform::new(
        rotation,
        translation,
        CoordinateFrame::Lidar,
        CoordinateFrame::World,
    )?;
    Ok((transform, deviation))
}

/// IMU-to-world transform for the mocap suit convention: the suit's x points
/// left, its y points up, its z points forward.
pub fn coarse_calibration_imu() -> RigidTransform {
    let rotation = Matrix3::new(
        -1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, //
        0.0, 1.0, 0.0,
    );
    RigidTransform::new(
        rotation,
        Vector3::zeros(),
        CoordinateFrame::Imu,
        CoordinateFrame::World,
    )
    .expect("constant triad is orthonormal")
}

/// Re-expresses a camera-frame motion in the world frame given the camera
/// extrinsics (world to camera).
pub fn world_from_camera(
    motion: &MotionSequence,
    extrinsics: &RigidTransform,
) -> crate::Result<MotionSequence> {
    if extrinsics.source_frame() != CoordinateFrame::World
        || extrinsics.target_frame() != CoordinateFrame::Camera
    {
        return Err(crate::Error::FrameMismatch {
            context: "camera extrinsics",
            expected: CoordinateFrame::Camera,
            found: extrinsics.target_frame(),
        });
    }
    motion.precompose_rigid(&extrinsics.inverse())
}

/// A plane `normal . x = offset` with its supporting inlier set.
#[derive(Debug, Clone)]
pub struct PlaneFit {
    pub normal: Vector3<f64>,
    pub offset: f64,
    /// Indices into the queried point set, sorted.
    pub inliers: Vec<usize>,
}

impl PlaneFit {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// RANSAC plane fit: the consensus plane over `iterations` random minimal
/// samples, refined once by PCA over its inliers. Deterministic for a given
/// generator state.
pub fn ransac_plane(
    points: &[Vector3<f64>],
    threshold: f64,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> crate::Result<PlaneFit> {
    if points.len() < 3 {
        return Err(crate::Error::Degenerate(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if !(threshold > 0.0) || iterations == 0 {
        return Err(crate::Error::validation(
            "threshold/iterations",
            "threshold must be positive and iterations at least 1",
        ));
    }

    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..iterations {
        let i = rng.gen_range(0..points.len());
        let j = rng.gen_range(0..points.len());
        let k = rng.gen_range(0..points.len());
        if i == j || j == k || i == k {
            continue;
        }
        let n = (points[j] - points[i]).cross(&(points[k] - points[i]));
        if n.norm() < 1e-12 {
            continue;
        }
        let n = n.normalize();
        let d = n.dot(&points[i]);
        let count = points.iter().filter(|p| (n.dot(p) - d).abs() <= threshold).count();
        if best.as_ref().map_or(true, |b| count > b.0) {
            best = Some((count, n, d));
        }
    }
    let (_, normal, offset) = best.ok_or_else(|| {
        crate::Error::Degenerate("no non-degenerate plane sample found".into())
    })?;

    // One PCA refinement over the consensus set tightens the minimal-sample
    // estimate without iterating to convergence.
    let inliers: Vec<usize> = (0..points.len())
        .filter(|&i| (normal.dot(&points[i]) - offset).abs() <= threshold)
        .collect();
    let centroid: Vector3<f64> =
        inliers.iter().map(|&i| points[i]).sum::<Vector3<f64>>() / inliers.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in &inliers {
        let d = points[i] - centroid;
        cov += d * d.transpose();
    }
    let eigen = nalgebra::SymmetricEigen::new(cov);
    let mut min_idx = 0;
    for k in 1..3 {
        if eigen.eigenvalues[k] < eigen.eigenvalues[min_idx] {
            min_idx = k;
        }
    }
    let mut refined: Vector3<f64> = eigen.eigenvectors.column(min_idx).into();
    if refined.dot(&normal) < 0.0 {
        refined = -refined;
    }
    let refined_offset = refined.dot(&centroid);
    let inliers: Vec<usize> = (0..points.len())
        .filter(|&i| (refined.dot(&points[i]) - refined_offset).abs() <= threshold)
        .collect();
    if inliers.len() < 3 {
        return Err(crate::Error::Degenerate(
            "refined plane lost its support".into(),
        ));
    }
    Ok(PlaneFit {
        normal: refined,
        offset: refined_offset,
        inliers,
    })
}

/// Extracts the two dominant planes of a setup scan and derives the LiDAR
/// calibration input from them.
///
/// The scan must view both the ground and the climbing surface. The plane
/// whose normal is closer to the sensor's vertical axis is taken as the
/// ground; the other becomes the climbing surface.
pub fn calibration_from_scan(cloud: &PointCloudFrame, seed: u64) -> crate::Result<CalibrationInput> {
    crate::frame::expect_frame("calibration scan", CoordinateFrame::Lidar, cloud.frame)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = ransac_plane(&cloud.points, 0.02, 500, &mut rng)?;

    let mut in_first = vec![false; cloud.points.len()];
    for &i in &first.inliers {
        in_first[i] = true;
    }
    let rest_idx: Vec<usize> = (0..cloud.points.len()).filter(|&i| !in_first[i]).collect();
    let rest: Vec<Vector3<f64>> = rest_idx.iter().map(|&i| cloud.points[i]).collect();
    if rest.len() < 3 {
        return Err(crate::Error::Degenerate(
            "setup scan contains a single plane; ground and surface are indistinguishable".into(),
        ));
    }
    let second = ransac_plane(&rest, 0.02, 500, &mut rng)?;

    // The sensor is mounted roughly level, so the ground normal has the
    // larger vertical component in the sensor frame.
    let (ground_fit, wall_fit) = if first.normal.z.abs() >= second.normal.z.abs() {
        (first, second)
    } else {
        (second, first)
    };

    // Ground normal points up (sensor on the positive side), wall normal
    // points forward (sensor on the negative side).
    let (gn, gd) = orient(ground_fit.normal, ground_fit.offset, true);
    let (wn, _) = orient(wall_fit.normal, wall_fit.offset, false);
    CalibrationInput::new(gn, wn, -gd)
}

/// Flips a plane so the origin lies on the requested side.
fn orient(n: Vector3<f64>, d: f64, origin_positive: bool) -> (Vector3<f64>, f64) {
    let origin_side = -d;
    if (origin_side > 0.0) == origin_positive {
        (n, d)
    } else {
        (-n, -d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointLabel;
    use crate::motion::{JOINT_COUNT, SHAPE_COUNT};
    use approx::assert_abs_diff_eq;

    #[test]
    fn orthonormal_inputs_pass_through_bit_for_bit() {
        let input = CalibrationInput::new(
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 0.0),
            1.75,
        )
        .unwrap();
        let (t, deviation) = coarse_calibration_lidar(&input).unwrap();
        assert_eq!(deviation, 0.0);
        let r = t.rotation();
        assert_eq!(r, Matrix3::identity());
        assert_eq!(t.translation(), Vector3::new(0.0, 0.2, 1.75));

        // A rotated but still exactly orthonormal pair keeps exact rows.
        let g = Vector3::new(0.0, 1.0, 0.0);
        let m = Vector3::new(0.0, 0.0, -1.0);
        let input = CalibrationInput::new(g, m, 2.0).unwrap();
        let (t, deviation) = coarse_calibration_lidar(&input).unwrap();
        assert_eq!(deviation, 0.0);
        let r = t.rotation();
        assert_eq!(Vector3::from(r.row(2).transpose()), g);
        assert_eq!(Vector3::from(r.row(1).transpose()), m);
        assert_eq!(Vector3::from(r.row(0).transpose()), m.cross(&g));
    }

    #[test]
    fn skewed_normals_are_repaired_and_reported() {
        let g = Vector3::new(0.0, 0.0, 1.0);
        let m = Vector3::new(0.0, 1.0, 2e-3).normalize();
        let input = CalibrationInput::new(g, m, 1.6).unwrap();
        let (t, deviation) = coarse_calibration_lidar(&input).unwrap();
        assert!(deviation > 0.0);
        assert!(orthonormality_deviation(&t.rotation()) <= ROTATION_TOL);
        // The ground direction must still map exactly to world up.
        assert_abs_diff_eq!(t.rotation() * g, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-9);
    }

    #[test]
    fn parallel_normals_are_degenerate() {
        let g = Vector3::new(0.0, 0.0, 1.0);
        assert!(CalibrationInput::new(g, g, 1.0).is_err());
    }

    #[test]
    fn imu_triad_is_the_documented_constant() {
        let t = coarse_calibration_imu();
        assert_eq!(t.source_frame(), CoordinateFrame::Imu);
        assert_eq!(t.target_frame(), CoordinateFrame::World);
        let r = t.rotation();
        assert_eq!(r * Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(r * Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(r * Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 1.0, 0.0));
        assert!((r.determinant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn camera_motion_lands_in_world() {
        let motion = MotionSequence::new(
            vec![Vector3::new(0.1, 0.2, 0.3); 3],
            vec![[Vector3::zeros(); JOINT_COUNT]; 3],
            [0.0; SHAPE_COUNT],
            30.0,
            CoordinateFrame::Camera,
        )
        .unwrap();
        let extrinsics = RigidTransform::new(
            crate::rotation::rodrigues(&Vector3::new(0.2, -0.1, 0.4)),
            Vector3::new(1.0, -2.0, 0.5),
            CoordinateFrame::World,
            CoordinateFrame::Camera,
        )
        .unwrap();
        let world = world_from_camera(&motion, &extrinsics).unwrap();
        assert_eq!(world.frame, CoordinateFrame::World);
        // Mapping back into the camera frame must recover the input.
        let back = extrinsics.apply_point(&world.translations[0]);
        assert_abs_diff_eq!(back, motion.translations[0], epsilon = 1e-12);

        // Wrong extrinsic direction is refused.
        assert!(world_from_camera(&motion, &extrinsics.inverse()).is_err());
    }

    fn setup_scan(seed: u64) -> PointCloudFrame {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        // Ground 1.6 m below the sensor.
        for _ in 0..2000 {
            points.push(Vector3::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-1.0..5.0),
                -1.6 + rng.gen_range(-0.004..0.004),
            ));
        }
        // Wall 3 m ahead (+y), normal pointing back at the sensor.
        for _ in 0..1200 {
            points.push(Vector3::new(
                rng.gen_range(-3.0..3.0),
                3.0 + rng.gen_range(-0.004..0.004),
                rng.gen_range(-1.5..2.5),
            ));
        }
        // Clutter.
        for _ in 0..150 {
            points.push(Vector3::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-1.0..4.0),
                rng.gen_range(-1.4..2.0),
            ));
        }
        PointCloudFrame::new(points, 0.0, CoordinateFrame::Lidar, PointLabel::Raw).unwrap()
    }

    #[test]
    fn scan_extraction_recovers_height_and_normals() {
        let cloud = setup_scan(77);
        let input = calibration_from_scan(&cloud, 5).unwrap();
        assert!((input.lidar_height - 1.6).abs() < 5e-3, "{}", input.lidar_height);
        // Up in the sensor frame.
        assert!(input.ground.dot(&Vector3::new(0.0, 0.0, 1.0)) > 0.999);
        // Forward, away from the sensor.
        assert!(input.plane.dot(&Vector3::new(0.0, 1.0, 0.0)) > 0.999);
        let (t, _) = coarse_calibration_lidar(&input).unwrap();
        // Sensor position in world: on the vertical through the origin
        // shifted forward, at ground height.
        let sensor_world = t.apply_point(&Vector3::zeros());
        assert_abs_diff_eq!(sensor_world.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sensor_world.y, 0.2, epsilon = 1e-12);
        assert!((sensor_world.z - 1.6).abs() < 5e-3);
    }

    #[test]
    fn scan_extraction_is_deterministic() {
        let cloud = setup_scan(77);
        let a = calibration_from_scan(&cloud, 5).unwrap();
        let b = calibration_from_scan(&cloud, 5).unwrap();
        assert_eq!(a.ground, b.ground);
        assert_eq!(a.plane, b.plane);
        assert_eq!(a.lidar_height, b.lidar_height);
    }

    #[test]
    fn single_plane_scan_is_rejected() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<Vector3<f64>> = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    -1.2 + rng.gen_range(-0.002..0.002),
                )
            })
            .collect();
        let cloud =
            PointCloudFrame::new(points, 0.0, CoordinateFrame::Lidar, PointLabel::Raw).unwrap();
        assert!(calibration_from_scan(&cloud, 3).is_err());
    }
}
