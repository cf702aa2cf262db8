//! Smoothness and cloud-fitting loss terms.
//!
//! The cloud-driven terms take the posed vertex positions and an explicit
//! visible-vertex subset rather than raw motions, so one skinning and one
//! visibility pass can be shared across terms (and so the optimizer can
//! freeze visibility while differentiating).

use super::{LossConfig, PartWeights};
use crate::body::{skin, skin_all, BodyTemplate, VertexGroups};
use crate::geometry::{chamfer, hpr, icp_points, IcpConfig, MeshNeighborhood, NeighborIndex};
use crate::motion::MotionSequence;
use nalgebra::Vector3;

/// Body-part class of a vertex, resolved with end effectors first so a foot
/// vertex is a foot before it is a limb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartCode {
    Unassigned,
    Torso,
    Limb,
    Foot,
    Hand,
}

/// Per-vertex part classification derived from the template's vertex groups.
#[derive(Debug, Clone)]
pub struct PartMask {
    codes: Vec<PartCode>,
}

impl PartMask {
    pub fn new(groups: &VertexGroups, num_vertices: usize) -> Self {
        let mut codes = vec![PartCode::Unassigned; num_vertices];
        for &i in &groups.torso {
            codes[i] = PartCode::Torso;
        }
        for &i in &groups.limbs {
            codes[i] = PartCode::Limb;
        }
        for &i in groups.left_foot.iter().chain(&groups.right_foot) {
            codes[i] = PartCode::Foot;
        }
        for &i in groups.left_hand.iter().chain(&groups.right_hand) {
            codes[i] = PartCode::Hand;
        }
        Self { codes }
    }

    pub fn code(&self, vertex: usize) -> PartCode {
        self.codes[vertex]
    }

    pub(crate) fn part_weight(&self, vertex: usize, weights: &PartWeights) -> f64 {
        match self.codes[vertex] {
            PartCode::Torso => weights.torso,
            PartCode::Limb => weights.limbs,
            PartCode::Foot => weights.feet,
            PartCode::Hand => weights.hands,
            PartCode::Unassigned => 1.0,
        }
    }
}

/// Indices of body vertices visible from the sensor at frame `k`.
pub fn visible_vertices(
    template: &BodyTemplate,
    motion: &MotionSequence,
    k: usize,
    sensor: &Vector3<f64>,
    gamma: f64,
) -> crate::Result<Vec<usize>> {
    let posed = skin(template, motion, k)?;
    hpr(&posed.vertices, sensor, gamma)
}

/// Hinge on the root outrunning the sensor: frames where the sensor moved
/// farther than the body root accumulate the difference.
pub fn translation_smooth_loss(
    motion: &MotionSequence,
    sensor_positions: &[Vector3<f64>],
) -> crate::Result<f64> {
    let n = motion.num_frames();
    if sensor_positions.len() != n {
        return Err(crate::Error::DimensionMismatch {
            context: "sensor trajectory vs motion",
            expected: n,
            got: sensor_positions.len(),
        });
    }
    if n < 2 {
        return Err(crate::Error::NotEnoughFrames {
            context: "translation smoothness",
            needed: 2,
            got: n,
        });
    }
    let mut total = 0.0;
    for j in 0..n - 1 {
        let sensor_step = (sensor_positions[j + 1] - sensor_positions[j]).norm();
        let root_step = (motion.translations[j + 1] - motion.translations[j]).norm();
        total += (sensor_step - root_step).max(0.0);
    }
    Ok(total / n as f64)
}

/// Mean second difference of the torso-joint positions, averaged over the
/// clip: zero exactly for constant-velocity joint motion.
pub fn joint_smooth_loss(template: &BodyTemplate, motion: &MotionSequence) -> crate::Result<f64> {
    let n = motion.num_frames();
    if n < 3 {
        return Err(crate::Error::NotEnoughFrames {
            context: "joint smoothness",
            needed: 3,
            got: n,
        });
    }
    let posed = skin_all(template, motion);
    let joints = &template.stable_joints;
    let mut total = 0.0;
    for j in 1..n - 1 {
        let mut frame_sum = 0.0;
        for &s in joints {
            let accel = (posed[j + 1].joints[s] - posed[j].joints[s])
                - (posed[j].joints[s] - posed[j - 1].joints[s]);
            frame_sum += accel.norm();
        }
        total += frame_sum / joints.len() as f64;
    }
    Ok(total / n as f64)
}

/// Two-sided Chamfer between the visible body surface and the scan.
///
/// With `registered` the surface is first rigidly aligned to the scan, so the
/// value measures residual non-rigid discrepancy; without it the value also
/// reflects global misplacement.
pub fn cloud_chamfer_loss(
    visible_points: &[Vector3<f64>],
    cloud: &[Vector3<f64>],
    registered: bool,
    icp: &IcpConfig,
) -> crate::Result<f64> {
    if visible_points.is_empty() {
        return Err(crate::Error::Degenerate(
            "no visible body vertices; the sensor is inside the body".into(),
        ));
    }
    if registered {
        let fit = icp_points(visible_points, cloud, icp)?;
        let moved: Vec<Vector3<f64>> = visible_points.iter().map(|p| fit.apply(p)).collect();
        chamfer(&moved, cloud)
    } else {
        chamfer(visible_points, cloud)
    }
}

/// Distance-gated, part-weighted squared proximity of visible vertices to
/// the scan, normalized by the number of vertices inside their gate.
pub fn proximity_loss(
    vertices: &[Vector3<f64>],
    visible: &[usize],
    mask: &PartMask,
    cloud: &NeighborIndex,
    config: &LossConfig,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &v in visible {
        let (_, d2) = cloud.nearest(&vertices[v]);
        let d = d2.sqrt();
        match mask.code(v) {
            PartCode::Torso if d <= config.torso_gate => {
                sum += config.torso_weight * d2;
                count += 1;
            }
            PartCode::Limb | PartCode::Foot | PartCode::Hand if d <= config.limb_gate => {
                sum += config.limb_weight * d2;
                count += 1;
            }
            _ => {}
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Squared hinge on scene penetration, averaged over all body vertices.
pub fn penetration_loss(vertices: &[Vector3<f64>], scene: &MeshNeighborhood) -> f64 {
    let sum: f64 = vertices
        .iter()
        .map(|v| {
            let depth = (-scene.clearance(v)).max(0.0);
            depth * depth
        })
        .sum();
    sum / vertices.len() as f64
}

/// Part-weighted one-sided squared fit of visible vertices to the scan,
/// normalized by the visible count (linear in the weights).
pub fn weighted_fit_loss(
    vertices: &[Vector3<f64>],
    visible: &[usize],
    mask: &PartMask,
    cloud: &NeighborIndex,
    weights: &PartWeights,
) -> f64 {
    if visible.is_empty() {
        return 0.0;
    }
    let sum: f64 = visible
        .iter()
        .map(|&v| {
            let (_, d2) = cloud.nearest(&vertices[v]);
            mask.part_weight(v, weights) * d2
        })
        .sum();
    sum / visible.len() as f64
}

/// Alignment of consecutive root-velocity directions, skipping frames whose
/// speed is at or below the gate (their direction carries no information).
pub fn direction_smooth_loss(motion: &MotionSequence, speed_gate: f64) -> crate::Result<f64> {
    let n = motion.num_frames();
    if n < 3 {
        return Err(crate::Error::NotEnoughFrames {
            context: "direction smoothness",
            needed: 3,
            got: n,
        });
    }
    let mut total = 0.0;
    for j in 1..n - 1 {
        let u = motion.translations[j] - motion.translations[j - 1];
        let w = motion.translations[j + 1] - motion.translations[j];
        if u.norm() > speed_gate && w.norm() > speed_gate {
            total += 1.0 - u.normalize().dot(&w.normalize());
        }
    }
    Ok(total / n as f64)
}

/// Mean squared distance of visible end-effector vertices to the scan.
pub fn end_effector_fit_loss(
    vertices: &[Vector3<f64>],
    visible: &[usize],
    groups: &VertexGroups,
    cloud: &NeighborIndex,
) -> f64 {
    let effectors = groups.end_effectors();
    // Both lists are sorted; intersect by merging.
    let mut sum = 0.0;
    let mut count = 0usize;
    let (mut a, mut b) = (0usize, 0usize);
    while a < effectors.len() && b < visible.len() {
        match effectors[a].cmp(&visible[b]) {
            std::cmp::Ordering::Less => a += 1,
            std::cmp::Ordering::Greater => b += 1,
            std::cmp::Ordering::Equal => {
                let (_, d2) = cloud.nearest(&vertices[effectors[a]]);
                sum += d2;
                count += 1;
                a += 1;
                b += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::CoordinateFrame;
    use crate::geometry::one_sided_mean_sq;
    use crate::mesh::SceneMesh;
    use crate::motion::{JOINT_COUNT, SHAPE_COUNT};

    fn motion_from_translations(translations: Vec<Vector3<f64>>) -> MotionSequence {
        let n = translations.len();
        MotionSequence::new(
            translations,
            vec![[Vector3::zeros(); JOINT_COUNT]; n],
            [0.0; SHAPE_COUNT],
            20.0,
            CoordinateFrame::World,
        )
        .unwrap()
    }

    #[test]
    fn translation_hinge_matches_hand_computation() {
        // Static sensor never penalizes.
        let motion = motion_from_translations(vec![
            Vector3::zeros(),
            Vector3::new(0.5, 0.0, 0.0),
            Vector3::new(1.5, 0.0, 0.0),
        ]);
        let static_sensor = vec![Vector3::new(0.0, -2.0, 1.0); 3];
        assert_eq!(
            translation_smooth_loss(&motion, &static_sensor).unwrap(),
            0.0
        );

        // Sensor steps 1.0, root steps 0.4: each pair contributes 0.6.
        let l = 5usize;
        let motion = motion_from_translations(
            (0..l).map(|k| Vector3::new(0.4 * k as f64, 0.0, 0.0)).collect(),
        );
        let sensor: Vec<Vector3<f64>> =
            (0..l).map(|k| Vector3::new(k as f64, 0.0, 0.0)).collect();
        let loss = translation_smooth_loss(&motion, &sensor).unwrap();
        let expected = (l - 1) as f64 * 0.6 / l as f64;
        assert!((loss - expected).abs() < 1e-12);

        // Root outrunning the sensor costs nothing.
        let motion = motion_from_translations(
            (0..l).map(|k| Vector3::new(2.0 * k as f64, 0.0, 0.0)).collect(),
        );
        assert_eq!(translation_smooth_loss(&motion, &sensor).unwrap(), 0.0);
    }

    #[test]
    fn joint_smoothness_is_zero_at_constant_velocity_and_scales_with_a_jump() {
        let template = crate::body::make_synthetic_template(320, 3).unwrap();
        let motion = motion_from_translations(
            (0..4).map(|k| Vector3::new(0.1 * k as f64, 0.0, 0.0)).collect(),
        );
        assert!(joint_smooth_loss(&template, &motion).unwrap() < 1e-12);

        // Three frames with a velocity jump d at the middle one: every joint
        // translates rigidly, so the mean second difference is exactly |d|.
        let d = Vector3::new(0.0, 0.0, 0.03);
        let v = Vector3::new(0.05, 0.0, 0.0);
        let motion = motion_from_translations(vec![
            Vector3::zeros(),
            v,
            v + v + d,
        ]);
        let loss = joint_smooth_loss(&template, &motion).unwrap();
        assert!((loss - d.norm() / 3.0).abs() < 1e-12, "{loss}");

        let still = motion_from_translations(vec![Vector3::zeros(); 3]);
        assert_eq!(joint_smooth_loss(&template, &still).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_term_vanishes_on_twins_and_bounds_small_offsets() {
        let points: Vec<Vector3<f64>> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.37;
                Vector3::new(t.sin(), t.cos(), 0.1 * t)
            })
            .collect();
        let icp = IcpConfig::default();
        assert!(cloud_chamfer_loss(&points, &points, false, &icp).unwrap() < 1e-15);

        let offset: Vec<Vector3<f64>> =
            points.iter().map(|p| p + Vector3::new(0.01, 0.0, 0.0)).collect();
        let loss = cloud_chamfer_loss(&offset, &points, false, &icp).unwrap();
        assert!(loss <= 2.0 * 1e-4 + 1e-12, "{loss}");

        // Registration removes a pure rigid offset entirely.
        let loss = cloud_chamfer_loss(&offset, &points, true, &icp).unwrap();
        assert!(loss < 1e-12, "{loss}");

        assert!(cloud_chamfer_loss(&[], &points, false, &icp).is_err());
    }

    fn two_part_mask() -> (PartMask, VertexGroups) {
        let groups = VertexGroups {
            left_foot: vec![],
            right_foot: vec![],
            left_hand: vec![],
            right_hand: vec![],
            torso: vec![0],
            limbs: vec![1],
        };
        (PartMask::new(&groups, 2), groups)
    }

    #[test]
    fn proximity_gates_follow_the_part_thresholds() {
        let (mask, _) = two_part_mask();
        let config = LossConfig::default();
        // One cloud point at the origin; torso vertex 5 cm away (inside its
        // 10 cm gate), limb vertex 7 cm away (outside its 5 cm gate).
        let cloud = NeighborIndex::build(&[Vector3::zeros()]).unwrap();
        let vertices = vec![
            Vector3::new(0.05, 0.0, 0.0),
            Vector3::new(0.0, 0.07, 0.0),
        ];
        let loss = proximity_loss(&vertices, &[0, 1], &mask, &cloud, &config);
        assert!((loss - 0.0025).abs() < 1e-15, "{loss}");

        // Exact coincidence for every vertex gives zero.
        let vertices = vec![Vector3::zeros(), Vector3::zeros()];
        assert_eq!(
            proximity_loss(&vertices, &[0, 1], &mask, &cloud, &config),
            0.0
        );

        // Everything gated out gives zero, not NaN.
        let vertices = vec![
            Vector3::new(5.0, 0.0, 0.0),
            Vector3::new(0.0, 5.0, 0.0),
        ];
        assert_eq!(
            proximity_loss(&vertices, &[0, 1], &mask, &cloud, &config),
            0.0
        );
    }

    #[test]
    fn penetration_counts_only_inside_vertices() {
        let mesh = SceneMesh::new(
            vec![
                Vector3::new(-1.0, -1.0, 0.0),
                Vector3::new(1.0, -1.0, 0.0),
                Vector3::new(-1.0, 1.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
            ],
            vec![Vector3::new(0.0, 0.0, 1.0); 4],
            vec![[0, 1, 2], [1, 3, 2]],
            CoordinateFrame::World,
        )
        .unwrap();
        let hood = MeshNeighborhood::new(&mesh).unwrap();

        let above = vec![Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.3, 0.2, 1.0)];
        assert_eq!(penetration_loss(&above, &hood), 0.0);

        // One of five vertices 2 cm inside: (0.02)^2 / 5.
        let mixed = vec![
            Vector3::new(0.0, 0.0, 0.5),
            Vector3::new(0.3, 0.2, 1.0),
            Vector3::new(-0.2, 0.1, 0.7),
            Vector3::new(0.1, -0.3, 0.25),
            Vector3::new(0.0, 0.1, -0.02),
        ];
        let loss = penetration_loss(&mixed, &hood);
        assert!((loss - 0.0004 / 5.0).abs() < 1e-15, "{loss}");

        let on_surface = vec![Vector3::new(0.2, 0.2, 0.0)];
        assert_eq!(penetration_loss(&on_surface, &hood), 0.0);
    }

    #[test]
    fn weighted_fit_reduces_to_chamfer_and_is_linear_in_weights() {
        let (mask, _) = two_part_mask();
        let vertices = vec![
            Vector3::new(0.3, 0.0, 0.0),
            Vector3::new(0.0, 0.4, 0.0),
        ];
        let cloud_points = vec![Vector3::zeros(), Vector3::new(0.0, 0.3, 0.0)];
        let cloud = NeighborIndex::build(&cloud_points).unwrap();
        let visible = vec![0, 1];

        let unit = PartWeights {
            torso: 1.0,
            limbs: 1.0,
            feet: 1.0,
            hands: 1.0,
        };
        let loss = weighted_fit_loss(&vertices, &visible, &mask, &cloud, &unit);
        let chamfer_side = one_sided_mean_sq(&vertices, &cloud);
        assert!((loss - chamfer_side).abs() < 1e-15);

        let double = PartWeights {
            torso: 2.0,
            limbs: 2.0,
            feet: 2.0,
            hands: 2.0,
        };
        let doubled = weighted_fit_loss(&vertices, &visible, &mask, &cloud, &double);
        assert!((doubled - 2.0 * loss).abs() < 1e-15);

        let zero = PartWeights {
            torso: 0.0,
            limbs: 0.0,
            feet: 0.0,
            hands: 0.0,
        };
        assert_eq!(weighted_fit_loss(&vertices, &visible, &mask, &cloud, &zero), 0.0);
    }

    #[test]
    fn direction_smoothness_counts_turns_above_the_gate() {
        // Straight line: no cost.
        let motion = motion_from_translations(
            (0..5).map(|k| Vector3::new(0.1 * k as f64, 0.0, 0.0)).collect(),
        );
        assert!(direction_smooth_loss(&motion, 0.02).unwrap() < 1e-15);

        // One right-angle turn: 1 - cos(90deg) = 1, averaged over l = 3.
        let motion = motion_from_translations(vec![
            Vector3::zeros(),
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(0.1, 0.1, 0.0),
        ]);
        let loss = direction_smooth_loss(&motion, 0.02).unwrap();
        assert!((loss - 1.0 / 3.0).abs() < 1e-12, "{loss}");

        // Static motion: every frame gated out.
        let motion = motion_from_translations(vec![Vector3::zeros(); 4]);
        assert_eq!(direction_smooth_loss(&motion, 0.02).unwrap(), 0.0);
    }

    #[test]
    fn end_effector_fit_sees_only_visible_end_effectors() {
        let groups = VertexGroups {
            left_foot: vec![0],
            right_foot: vec![],
            left_hand: vec![2],
            right_hand: vec![],
            torso: vec![1],
            limbs: vec![0, 2],
        };
        let vertices = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(9.0, 9.0, 9.0),
            Vector3::new(0.03, 0.0, 0.0),
        ];
        let cloud = NeighborIndex::build(&[Vector3::zeros()]).unwrap();

        // Both end effectors visible: mean of 0 and 9e-4.
        let loss = end_effector_fit_loss(&vertices, &[0, 1, 2], &groups, &cloud);
        assert!((loss - 4.5e-4).abs() < 1e-15, "{loss}");

        // Only the hand visible: exactly its squared distance.
        let loss = end_effector_fit_loss(&vertices, &[1, 2], &groups, &cloud);
        assert!((loss - 9.0e-4).abs() < 1e-15, "{loss}");

        // Moving the torso vertex changes nothing.
        let mut moved = vertices.clone();
        moved[1] = Vector3::new(-3.0, 0.0, 1.0);
        assert_eq!(
            end_effector_fit_loss(&moved, &[0, 1, 2], &groups, &cloud),
            end_effector_fit_loss(&vertices, &[0, 1, 2], &groups, &cloud)
        );

        // No visible end effectors.
        assert_eq!(end_effector_fit_loss(&vertices, &[1], &groups, &cloud), 0.0);
    }
}
