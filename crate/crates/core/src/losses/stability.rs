//! Stable-limb detection and the contact losses built on it.

use super::LossConfig;
use crate::body::{skin_all, BodyTemplate, Limb, PosedBody};
use crate::geometry::MeshNeighborhood;
use crate::mesh::SceneMesh;
use crate::motion::MotionSequence;
use nalgebra::Vector3;

/// Per-frame, per-limb stability verdicts with the supporting scene points.
///
/// A limb is stable at a frame when its mean vertex movement is strictly
/// below the threshold AND strictly below its sibling's movement (ties leave
/// both unstable), so at most one foot and one hand are stable per frame.
/// Frame 0 uses the forward difference to frame 1. A limb that passes the
/// movement test but has no scene vertex within the contact radius of its
/// centroid is demoted to unstable: there is nothing it could be touching.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRecord {
    /// `stable[k][limb.index()]`
    pub stable: Vec<[bool; 4]>,
    /// Mean vertex movement per frame and limb, metres.
    pub movement: Vec<[f64; 4]>,
    /// Scene vertex indices within the contact radius of the stable limb's
    /// centroid, sorted; empty exactly when the limb is not stable.
    pub environment: Vec<[Vec<usize>; 4]>,
}

impl StabilityRecord {
    pub fn num_frames(&self) -> usize {
        self.stable.len()
    }

    pub fn is_stable(&self, frame: usize, limb: Limb) -> bool {
        self.stable[frame][limb.index()]
    }

    pub fn environment(&self, frame: usize, limb: Limb) -> &[usize] {
        &self.environment[frame][limb.index()]
    }
}

fn centroid(posed: &PosedBody, group: &[usize]) -> Vector3<f64> {
    group.iter().map(|&i| posed.vertices[i]).sum::<Vector3<f64>>() / group.len() as f64
}

pub fn detect_stable_limbs(
    template: &BodyTemplate,
    motion: &MotionSequence,
    scene: &SceneMesh,
    config: &LossConfig,
) -> crate::Result<StabilityRecord> {
    let n = motion.num_frames();
    if n < 2 {
        return Err(crate::Error::NotEnoughFrames {
            context: "stable-limb detection",
            needed: 2,
            got: n,
        });
    }
    crate::frame::expect_frame("stability scene vs motion", motion.frame, scene.frame)?;
    config.validate()?;

    let posed = skin_all(template, motion);
    let hood = MeshNeighborhood::new(scene)?;

    let mut movement = vec![[0.0; 4]; n];
    for k in 0..n {
        let (prev, curr) = if k == 0 { (0, 1) } else { (k - 1, k) };
        for limb in Limb::ALL {
            movement[k][limb.index()] = crate::body::movement_between(
                &posed[prev],
                &posed[curr],
                template.groups.limb(limb),
            );
        }
    }

    let mut stable = vec![[false; 4]; n];
    let mut environment: Vec<[Vec<usize>; 4]> =
        vec![[Vec::new(), Vec::new(), Vec::new(), Vec::new()]; n];
    for k in 0..n {
        for limb in Limb::ALL {
            let mv = movement[k][limb.index()];
            let sibling_mv = movement[k][limb.sibling().index()];
            if mv < config.stability_threshold && mv < sibling_mv {
                let c = centroid(&posed[k], template.groups.limb(limb));
                let env = hood.within_radius(&c, config.contact_radius);
                if !env.is_empty() {
                    stable[k][limb.index()] = true;
                    environment[k][limb.index()] = env;
                }
            }
        }
    }
    Ok(StabilityRecord {
        stable,
        movement,
        environment,
    })
}

/// Mean distance from stable-limb vertices to their contact environment,
/// separately accumulated for feet and hands and averaged over the clip.
pub fn contact_loss(
    template: &BodyTemplate,
    motion: &MotionSequence,
    scene: &SceneMesh,
    stability: &StabilityRecord,
) -> crate::Result<f64> {
    let n = motion.num_frames();
    if stability.num_frames() != n {
        return Err(crate::Error::DimensionMismatch {
            context: "stability record vs motion",
            expected: n,
            got: stability.num_frames(),
        });
    }
    crate::frame::expect_frame("contact scene vs motion", motion.frame, scene.frame)?;

    let posed = skin_all(template, motion);
    let mut feet = 0.0;
    let mut hands = 0.0;
    for k in 0..n {
        for limb in Limb::ALL {
            if !stability.is_stable(k, limb) {
                continue;
            }
            let env = stability.environment(k, limb);
            let group = template.groups.limb(limb);
            // Environments are small; a linear scan is exact and cheap.
            let sum: f64 = group
                .iter()
                .map(|&vi| {
                    env.iter()
                        .map(|&si| (posed[k].vertices[vi] - scene.vertices[si]).norm())
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            let mean = sum / group.len() as f64;
            if limb.is_foot() {
                feet += mean;
            } else {
                hands += mean;
            }
        }
    }
    Ok((feet + hands) / n as f64)
}

/// Drift of stable-limb centroids across consecutive frames where the same
/// limb stays stable, averaged over the clip.
pub fn sliding_loss(
    template: &BodyTemplate,
    motion: &MotionSequence,
    stability: &StabilityRecord,
) -> crate::Result<f64> {
    let n = motion.num_frames();
    if stability.num_frames() != n {
        return Err(crate::Error::DimensionMismatch {
            context: "stability record vs motion",
            expected: n,
            got: stability.num_frames(),
        });
    }
    if n < 2 {
        return Err(crate::Error::NotEnoughFrames {
            context: "sliding loss",
            needed: 2,
            got: n,
        });
    }

    let posed = skin_all(template, motion);
    let mut total = 0.0;
    for j in 0..n - 1 {
        for limb in Limb::ALL {
            if stability.is_stable(j, limb) && stability.is_stable(j + 1, limb) {
                let group = template.groups.limb(limb);
                total += (centroid(&posed[j + 1], group) - centroid(&posed[j], group)).norm();
            }
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::make_synthetic_template;
    use crate::frame::CoordinateFrame;
    use crate::motion::{JOINT_COUNT, SHAPE_COUNT};

    fn template() -> BodyTemplate {
        make_synthetic_template(320, 3).unwrap()
    }

    /// A small horizontal patch centred at `c`, normals up.
    fn patch_at(c: Vector3<f64>) -> SceneMesh {
        let mut vertices = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                vertices.push(
                    c + Vector3::new(0.04 * (i as f64 - 1.0), 0.04 * (j as f64 - 1.0), 0.0),
                );
            }
        }
        SceneMesh::new(
            vertices,
            vec![Vector3::new(0.0, 0.0, 1.0); 9],
            vec![[0, 1, 3], [1, 4, 3], [1, 2, 4], [2, 5, 4]],
            CoordinateFrame::World,
        )
        .unwrap()
    }

    fn still_motion(n: usize) -> MotionSequence {
        MotionSequence::new(
            vec![Vector3::zeros(); n],
            vec![[Vector3::zeros(); JOINT_COUNT]; n],
            [0.0; SHAPE_COUNT],
            20.0,
            CoordinateFrame::World,
        )
        .unwrap()
    }

    /// Rest pose except the right hip swings, so only the right leg moves.
    fn left_foot_planted(n: usize) -> MotionSequence {
        let mut poses = vec![[Vector3::zeros(); JOINT_COUNT]; n];
        for (k, fp) in poses.iter_mut().enumerate() {
            fp[2] = Vector3::new(0.25 * k as f64, 0.0, 0.0);
        }
        MotionSequence::new(
            vec![Vector3::zeros(); n],
            poses,
            [0.0; SHAPE_COUNT],
            20.0,
            CoordinateFrame::World,
        )
        .unwrap()
    }

    fn left_foot_centroid(template: &BodyTemplate) -> Vector3<f64> {
        let motion = still_motion(2);
        let posed = skin_all(template, &motion);
        centroid(&posed[0], &template.groups.left_foot)
    }

    #[test]
    fn equal_movement_ties_leave_both_limbs_unstable() {
        let template = template();
        let scene = patch_at(left_foot_centroid(&template));
        let motion = still_motion(3);
        let record =
            detect_stable_limbs(&template, &motion, &scene, &LossConfig::default()).unwrap();
        for k in 0..3 {
            for limb in Limb::ALL {
                assert!(!record.is_stable(k, limb), "frame {k} {limb:?}");
            }
        }
    }

    #[test]
    fn quiet_limb_beats_its_moving_sibling() {
        let template = template();
        let scene = patch_at(left_foot_centroid(&template));
        let motion = left_foot_planted(3);
        let record =
            detect_stable_limbs(&template, &motion, &scene, &LossConfig::default()).unwrap();
        for k in 0..3 {
            assert!(record.is_stable(k, Limb::LeftFoot), "frame {k}");
            assert!(!record.is_stable(k, Limb::RightFoot));
            assert!(!record.environment(k, Limb::LeftFoot).is_empty());
            // Hands both moved nothing: a tie, so neither is stable.
            assert!(!record.is_stable(k, Limb::LeftHand));
            assert!(!record.is_stable(k, Limb::RightHand));
        }
    }

    #[test]
    fn empty_neighborhood_demotes_stability() {
        let template = template();
        // Patch far away from any limb.
        let scene = patch_at(Vector3::new(50.0, 50.0, 50.0));
        let motion = left_foot_planted(3);
        let record =
            detect_stable_limbs(&template, &motion, &scene, &LossConfig::default()).unwrap();
        for k in 0..3 {
            assert!(!record.is_stable(k, Limb::LeftFoot));
            assert!(record.environment(k, Limb::LeftFoot).is_empty());
        }
    }

    #[test]
    fn needs_two_frames() {
        let template = template();
        let scene = patch_at(Vector3::zeros());
        let motion = still_motion(1);
        assert!(matches!(
            detect_stable_limbs(&template, &motion, &scene, &LossConfig::default()),
            Err(crate::Error::NotEnoughFrames { .. })
        ));
    }

    #[test]
    fn contact_vanishes_on_touching_twins_and_grows_with_offset() {
        let template = template();
        let motion = left_foot_planted(3);
        let posed = skin_all(&template, &motion);

        // Scene vertices that exactly copy the left-foot vertices, plus a
        // padding row far below to keep the face structure valid.
        let foot = &template.groups.left_foot;
        let build_scene = |offset: Vector3<f64>| {
            let mut vertices: Vec<Vector3<f64>> =
                foot.iter().map(|&i| posed[0].vertices[i] + offset).collect();
            let base = vertices.len();
            vertices.push(Vector3::new(0.0, -9.0, -9.0));
            vertices.push(Vector3::new(1.0, -9.0, -9.0));
            vertices.push(Vector3::new(0.0, -8.0, -9.0));
            let faces = vec![[base, base + 1, base + 2]];
            let normals = vec![Vector3::new(0.0, 0.0, 1.0); vertices.len()];
            SceneMesh::new(vertices, normals, faces, CoordinateFrame::World).unwrap()
        };

        let scene = build_scene(Vector3::zeros());
        let config = LossConfig::default();
        let record = detect_stable_limbs(&template, &motion, &scene, &config).unwrap();
        assert!(record.is_stable(0, Limb::LeftFoot));
        let loss = contact_loss(&template, &motion, &scene, &record).unwrap();
        assert!(loss < 1e-12, "{loss}");

        // Shift the contact points 4 mm: every foot vertex is now exactly
        // 4 mm from its nearest environment point in every stable frame.
        let scene = build_scene(Vector3::new(0.0, 0.0, 0.004));
        let record = detect_stable_limbs(&template, &motion, &scene, &config).unwrap();
        let stable_frames = (0..3)
            .filter(|&k| record.is_stable(k, Limb::LeftFoot))
            .count();
        assert!(stable_frames > 0);
        let loss = contact_loss(&template, &motion, &scene, &record).unwrap();
        let expected = 0.004 * stable_frames as f64 / 3.0;
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
    }

    #[test]
    fn sliding_measures_centroid_drift_of_persistently_stable_limbs() {
        let template = template();
        let n = 4;
        // Whole body drifts 2 cm per frame; fabricate a record that calls the
        // left foot stable everywhere (detection would refuse the tie).
        let mut motion = still_motion(n);
        for k in 0..n {
            motion.translations[k] = Vector3::new(0.02 * k as f64, 0.0, 0.0);
        }
        let record = StabilityRecord {
            stable: (0..n)
                .map(|_| [true, false, false, false])
                .collect(),
            movement: vec![[0.0; 4]; n],
            environment: (0..n)
                .map(|_| [vec![0], Vec::new(), Vec::new(), Vec::new()])
                .collect(),
        };
        let loss = sliding_loss(&template, &motion, &record).unwrap();
        let expected = 0.02 * (n - 1) as f64 / n as f64;
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");

        // Alternating limbs never form a consecutive pair.
        let record = StabilityRecord {
            stable: (0..n)
                .map(|k| {
                    if k % 2 == 0 {
                        [true, false, false, false]
                    } else {
                        [false, true, false, false]
                    }
                })
                .collect(),
            movement: vec![[0.0; 4]; n],
            environment: (0..n)
                .map(|k| {
                    if k % 2 == 0 {
                        [vec![0], Vec::new(), Vec::new(), Vec::new()]
                    } else {
                        [Vec::new(), vec![0], Vec::new(), Vec::new()]
                    }
                })
                .collect(),
        };
        let loss = sliding_loss(&template, &motion, &record).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn contact_ignores_frames_without_stable_limbs() {
        let template = template();
        let motion = still_motion(3);
        let scene = patch_at(Vector3::new(50.0, 0.0, 0.0));
        let record =
            detect_stable_limbs(&template, &motion, &scene, &LossConfig::default()).unwrap();
        let loss = contact_loss(&template, &motion, &scene, &record).unwrap();
        assert_eq!(loss, 0.0);
    }
}
