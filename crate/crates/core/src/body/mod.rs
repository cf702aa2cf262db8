//! Articulated body model: template, forward kinematics, linear blend
//! skinning, and group movement queries.

mod synthetic;

pub use synthetic::{make_synthetic_template, MIN_TEMPLATE_VERTICES};

use nalgebra::{Matrix3, Vector3};
use crate::motion::{FramePose, MotionSequence, JOINT_COUNT, SHAPE_COUNT};
use crate::parallel;
use crate::rotation::rodrigues;

/// Joint indices allowed in `stable_joints`: pelvis, spine, collars, neck,
/// head. These sit on the torso and move rigidly with it.
pub const TORSO_NECK_JOINTS: [usize; 8] = [0, 3, 6, 9, 12, 13, 14, 15];

/// The four end-effector limbs used by contact reasoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Limb {
    LeftFoot,
    RightFoot,
    LeftHand,
    RightHand,
}

impl Limb {
    pub const ALL: [Limb; 4] = [Limb::LeftFoot, Limb::RightFoot, Limb::LeftHand, Limb::RightHand];

    pub fn is_foot(&self) -> bool {
        matches!(self, Limb::LeftFoot | Limb::RightFoot)
    }

    /// Position of this limb in [`Limb::ALL`], usable as an array index.
    pub fn index(&self) -> usize {
        match self {
            Limb::LeftFoot => 0,
            Limb::RightFoot => 1,
            Limb::LeftHand => 2,
            Limb::RightHand => 3,
        }
    }

    /// The opposite limb of the same kind (other foot, other hand).
    pub fn sibling(&self) -> Limb {
        match self {
            Limb::LeftFoot => Limb::RightFoot,
            Limb::RightFoot => Limb::LeftFoot,
            Limb::LeftHand => Limb::RightHand,
            Limb::RightHand => Limb::LeftHand,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Limb::LeftFoot => "LEFT_FOOT",
            Limb::RightFoot => "RIGHT_FOOT",
            Limb::LeftHand => "LEFT_HAND",
            Limb::RightHand => "RIGHT_HAND",
        }
    }
}

/// Named vertex index sets over the template.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VertexGroups {
    pub left_foot: Vec<usize>,
    pub right_foot: Vec<usize>,
    pub left_hand: Vec<usize>,
    pub right_hand: Vec<usize>,
    pub torso: Vec<usize>,
    pub limbs: Vec<usize>,
}

impl VertexGroups {
    pub fn limb(&self, limb: Limb) -> &[usize] {
        match limb {
            Limb::LeftFoot => &self.left_foot,
            Limb::RightFoot => &self.right_foot,
            Limb::LeftHand => &self.left_hand,
            Limb::RightHand => &self.right_hand,
        }
    }

    /// Union of the four end-effector groups, sorted.
    pub fn end_effectors(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Limb::ALL
            .iter()
            .flat_map(|l| self.limb(*l).iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// The skinned body template.
///
/// Vertices are in the rest pose with the rest root joint at the origin, so a
/// motion's translation row is the world position of the root joint. Skin
/// weight rows and joint regressor rows are sparse `(index, weight)` pairs
/// that each sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    pub rest_vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub parents: [Option<usize>; JOINT_COUNT],
    pub skin_weights: Vec<Vec<(usize, f64)>>,
    pub shape_basis: Vec<[Vector3<f64>; SHAPE_COUNT]>,
    pub joint_regressor: Vec<Vec<(usize, f64)>>,
    pub groups: VertexGroups,
    pub stable_joints: Vec<usize>,
}

/// One frame of skinned output.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedBody {
    pub vertices: Vec<Vector3<f64>>,
    pub joints: [Vector3<f64>; JOINT_COUNT],
}

/// Shape-dependent quantities that stay fixed while pose and translation
/// change; precomputed once per optimization.
#[derive(Debug, Clone)]
pub struct ShapedTemplate {
    pub vertices: Vec<Vector3<f64>>,
    pub joints: [Vector3<f64>; JOINT_COUNT],
}

impl BodyTemplate {
    pub fn num_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn validate(&self) -> crate::Result<()> {
        let v = self.rest_vertices.len();
        if v == 0 {
            return Err(crate::Error::validation("rest_vertices", "template has no vertices"));
        }
        if self.skin_weights.len() != v {
            return Err(crate::Error::DimensionMismatch {
                context: "skin_weights vs vertices",
                expected: v,
                got: self.skin_weights.len(),
            });
        }
        if self.shape_basis.len() != v {
            return Err(crate::Error::DimensionMismatch {
                context: "shape_basis vs vertices",
                expected: v,
                got: self.shape_basis.len(),
            });
        }
        if self.joint_regressor.len() != JOINT_COUNT {
            return Err(crate::Error::DimensionMismatch {
                context: "joint_regressor rows",
                expected: JOINT_COUNT,
                got: self.joint_regressor.len(),
            });
        }
        if self.parents[0].is_some() {
            return Err(crate::Error::validation("parents[0]", "root joint must have no parent"));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                None => {
                    return Err(crate::Error::validation(
                        format!("parents[{j}]"),
                        "only joint 0 may be parentless",
                    ))
                }
                Some(p) if *p >= j => {
                    return Err(crate::Error::validation(
                        format!("parents[{j}]"),
                        format!("parent {p} must precede its child"),
                    ))
                }
                _ => {}
            }
        }
        for (i, row) in self.skin_weights.iter().enumerate() {
            if row.is_empty() {
                return Err(crate::Error::validation(
                    format!("skin_weights[{i}]"),
                    "vertex bound to no joint",
                ));
            }
            let mut sum = 0.0;
            for &(j, w) in row {
                if j >= JOINT_COUNT {
                    return Err(crate::Error::IndexOutOfRange {
                        what: "skin weight joint",
                        index: j,
                        len: JOINT_COUNT,
                    });
                }
                if !(w.is_finite() && w >= 0.0) {
                    return Err(crate::Error::validation(
                        format!("skin_weights[{i}]"),
                        format!("weight {w} must be finite and non-negative"),
                    ));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(crate::Error::validation(
                    format!("skin_weights[{i}]"),
                    format!("row sums to {sum}, expected 1"),
                ));
            }
        }
        for (j, row) in self.joint_regressor.iter().enumerate() {
            if row.is_empty() {
                return Err(crate::Error::validation(
                    format!("joint_regressor[{j}]"),
                    "empty regressor row",
                ));
            }
            let mut sum = 0.0;
            for &(idx, w) in row {
                if idx >= v {
                    return Err(crate::Error::IndexOutOfRange {
                        what: "regressor vertex",
                        index: idx,
                        len: v,
                    });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(crate::Error::validation(
                    format!("joint_regressor[{j}]"),
                    format!("row sums to {sum}, expected 1"),
                ));
            }
        }
        for (f, face) in self.faces.iter().enumerate() {
            for &idx in face {
                if idx >= v {
                    return Err(crate::Error::validation(
                        format!("faces[{f}]"),
                        format!("vertex index {idx} out of range ({v} vertices)"),
                    ));
                }
            }
        }
        for (name, group) in [
            ("LEFT_FOOT", &self.groups.left_foot),
            ("RIGHT_FOOT", &self.groups.right_foot),
            ("LEFT_HAND", &self.groups.left_hand),
            ("RIGHT_HAND", &self.groups.right_hand),
            ("TORSO", &self.groups.torso),
            ("LIMBS", &self.groups.limbs),
        ] {
            for &idx in group.iter() {
                if idx >= v {
                    return Err(crate::Error::validation(
                        format!("groups.{name}"),
                        format!("vertex index {idx} out of range"),
                    ));
                }
            }
        }
        let feet: std::collections::HashSet<usize> = self
            .groups
            .left_foot
            .iter()
            .chain(&self.groups.right_foot)
            .copied()
            .collect();
        if self
            .groups
            .left_hand
            .iter()
            .chain(&self.groups.right_hand)
            .any(|i| feet.contains(i))
        {
            return Err(crate::Error::validation(
                "groups",
                "foot and hand groups must be disjoint",
            ));
        }
        for &j in &self.stable_joints {
            if !TORSO_NECK_JOINTS.contains(&j) {
                return Err(crate::Error::validation(
                    "stable_joints",
                    format!("joint {j} is not on the torso or neck"),
                ));
            }
        }
        Ok(())
    }

    /// Rest joint locations: the joint regressor applied to the rest
    /// vertices.
    pub fn rest_joints(&self) -> [Vector3<f64>; JOINT_COUNT] {
        regress_joints(&self.joint_regressor, &self.rest_vertices)
    }

    /// Applies the shape coefficients, producing shape-adjusted vertices and
    /// joints.
    pub fn shaped(&self, betas: &[f64; SHAPE_COUNT]) -> ShapedTemplate {
        let vertices: Vec<Vector3<f64>> = self
            .rest_vertices
            .iter()
            .zip(&self.shape_basis)
            .map(|(v, basis)| {
                let mut out = *v;
                for (i, b) in basis.iter().enumerate() {
                    out += betas[i] * b;
                }
                out
            })
            .collect();
        let joints = regress_joints(&self.joint_regressor, &vertices);
        ShapedTemplate { vertices, joints }
    }
}

fn regress_joints(
    regressor: &[Vec<(usize, f64)>],
    vertices: &[Vector3<f64>],
) -> [Vector3<f64>; JOINT_COUNT] {
    let mut joints = [Vector3::zeros(); JOINT_COUNT];
    for (j, row) in regressor.iter().enumerate() {
        let mut acc = Vector3::zeros();
        for &(idx, w) in row {
            acc += w * vertices[idx];
        }
        joints[j] = acc;
    }
    joints
}

/// Global joint transforms from the kinematic tree.
fn forward_kinematics(
    parents: &[Option<usize>; JOINT_COUNT],
    rest_joints: &[Vector3<f64>; JOINT_COUNT],
    pose: &FramePose,
) -> ([Matrix3<f64>; JOINT_COUNT], [Vector3<f64>; JOINT_COUNT]) {
    let mut rot = [Matrix3::identity(); JOINT_COUNT];
    let mut pos = [Vector3::zeros(); JOINT_COUNT];
    for j in 0..JOINT_COUNT {
        let local = rodrigues(&pose[j]);
        match parents[j] {
            None => {
                rot[j] = local;
                pos[j] = rest_joints[j];
            }
            Some(p) => {
                rot[j] = rot[p] * local;
                pos[j] = rot[p] * (rest_joints[j] - rest_joints[p]) + pos[p];
            }
        }
    }
    (rot, pos)
}

/// Skins one frame given precomputed shape quantities. This is the hot path
/// used by the optimizer; [`skin`] wraps it.
pub fn skin_pose(
    template: &BodyTemplate,
    shaped: &ShapedTemplate,
    translation: &Vector3<f64>,
    pose: &FramePose,
) -> PosedBody {
    let (g_rot, g_pos) = forward_kinematics(&template.parents, &shaped.joints, pose);
    let vertices = template
        .skin_weights
        .iter()
        .zip(&shaped.vertices)
        .map(|(weights, v)| {
            let mut out = Vector3::zeros();
            for &(j, w) in weights {
                out += w * (g_rot[j] * (v - shaped.joints[j]) + g_pos[j]);
            }
            out + translation
        })
        .collect();
    let mut joints = g_pos;
    for j in &mut joints {
        *j += translation;
    }
    PosedBody { vertices, joints }
}

/// Poses frame `k` of the motion: shape, forward kinematics, then linear
/// blend skinning.
pub fn skin(template: &BodyTemplate, motion: &MotionSequence, k: usize) -> crate::Result<PosedBody> {
    if k >= motion.num_frames() {
        return Err(crate::Error::IndexOutOfRange {
            what: "frame",
            index: k,
            len: motion.num_frames(),
        });
    }
    let shaped = template.shaped(&motion.betas);
    Ok(skin_pose(template, &shaped, &motion.translations[k], &motion.poses[k]))
}

/// Poses every frame of the motion (parallel over frames).
pub fn skin_all(template: &BodyTemplate, motion: &MotionSequence) -> Vec<PosedBody> {
    let shaped = template.shaped(&motion.betas);
    parallel::map_indexed(motion.num_frames(), |k| {
        skin_pose(template, &shaped, &motion.translations[k], &motion.poses[k])
    })
}

/// Mean displacement of a vertex group between frames `k-1` and `k`: the
/// average of the per-vertex displacement norms.
pub fn movement(
    template: &BodyTemplate,
    motion: &MotionSequence,
    k: usize,
    group: &[usize],
) -> crate::Result<f64> {
    if k == 0 || k >= motion.num_frames() {
        return Err(crate::Error::IndexOutOfRange {
            what: "movement frame (needs a predecessor)",
            index: k,
            len: motion.num_frames(),
        });
    }
    if group.is_empty() {
        return Err(crate::Error::validation("group", "empty vertex group"));
    }
    let prev = skin(template, motion, k - 1)?;
    let curr = skin(template, motion, k)?;
    Ok(movement_between(&prev, &curr, group))
}

/// Same as [`movement`] but on already-skinned frames.
pub fn movement_between(prev: &PosedBody, curr: &PosedBody, group: &[usize]) -> f64 {
    let sum: f64 = group
        .iter()
        .map(|&i| (curr.vertices[i] - prev.vertices[i]).norm())
        .sum();
    sum / group.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::CoordinateFrame;
    use approx::assert_abs_diff_eq;

    fn template() -> BodyTemplate {
        make_synthetic_template(400, 42).unwrap()
    }

    #[test]
    fn rest_pose_reproduces_rest_vertices() {
        let t = template();
        let motion = MotionSequence::rest(1, 30.0, CoordinateFrame::World).unwrap();
        let posed = skin(&t, &motion, 0).unwrap();
        for (a, b) in posed.vertices.iter().zip(&t.rest_vertices) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let rest = t.rest_joints();
        for (a, b) in posed.joints.iter().zip(&rest) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn regressor_on_posed_rest_matches_rest_joints() {
        let t = template();
        let motion = MotionSequence::rest(1, 30.0, CoordinateFrame::World).unwrap();
        let posed = skin(&t, &motion, 0).unwrap();
        let from_posed = regress_joints(&t.joint_regressor, &posed.vertices);
        for (a, b) in from_posed.iter().zip(&t.rest_joints()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn root_rotation_rotates_everything_rigidly() {
        let t = template();
        let mut motion = MotionSequence::rest(1, 30.0, CoordinateFrame::World).unwrap();
        let half_pi = std::f64::consts::FRAC_PI_2;
        motion.poses[0][0] = nalgebra::Vector3::new(0.0, 0.0, half_pi);
        motion.translations[0] = nalgebra::Vector3::new(0.5, -0.25, 1.0);
        let posed = skin(&t, &motion, 0).unwrap();
        let r = rodrigues(&motion.poses[0][0]);
        for (out, rest) in posed.vertices.iter().zip(&t.rest_vertices) {
            let expect = r * rest + motion.translations[0];
            assert_abs_diff_eq!(out, &expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn skin_is_equivariant_under_rigid_precomposition() {
        let t = template();
        let mut motion = MotionSequence::rest(2, 30.0, CoordinateFrame::World).unwrap();
        motion.poses[0][0] = nalgebra::Vector3::new(0.2, -0.1, 0.4);
        motion.poses[0][16] = nalgebra::Vector3::new(0.0, 0.7, 0.1);
        motion.poses[1][4] = nalgebra::Vector3::new(0.5, 0.0, 0.0);
        motion.translations[1] = nalgebra::Vector3::new(0.1, 0.2, 0.3);
        motion.betas[0] = 0.8;
        motion.betas[3] = -1.1;

        let g = crate::RigidTransform::new(
            rodrigues(&nalgebra::Vector3::new(0.3, 0.5, -0.2)),
            nalgebra::Vector3::new(1.0, -2.0, 0.7),
            CoordinateFrame::World,
            CoordinateFrame::World,
        )
        .unwrap();
        let moved = motion.precompose_rigid(&g).unwrap();
        for k in 0..2 {
            let direct = skin(&t, &moved, k).unwrap();
            let reference = skin(&t, &motion, k).unwrap();
            for (a, b) in direct.vertices.iter().zip(&reference.vertices) {
                assert_abs_diff_eq!(a, &g.apply_point(b), epsilon = 1e-9);
            }
            for (a, b) in direct.joints.iter().zip(&reference.joints) {
                assert_abs_diff_eq!(a, &g.apply_point(b), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn whole_body_translation_moves_every_group_by_that_amount() {
        let t = template();
        let mut motion = MotionSequence::rest(2, 30.0, CoordinateFrame::World).unwrap();
        motion.translations[1] = nalgebra::Vector3::new(0.0, 0.02, 0.0);
        let mv = movement(&t, &motion, 1, &t.groups.left_foot).unwrap();
        assert_abs_diff_eq!(mv, 0.02, epsilon = 1e-12);
    }

    #[test]
    fn one_vertex_group_reports_its_own_displacement() {
        let t = template();
        let mut motion = MotionSequence::rest(2, 30.0, CoordinateFrame::World).unwrap();
        motion.translations[1] = nalgebra::Vector3::new(0.05, 0.0, 0.0);
        let mv = movement(&t, &motion, 1, &[7]).unwrap();
        assert_abs_diff_eq!(mv, 0.05, epsilon = 1e-12);
        assert!(movement(&t, &motion, 0, &[7]).is_err());
    }

    #[test]
    fn skin_rejects_out_of_range_frame() {
        let t = template();
        let motion = MotionSequence::rest(2, 30.0, CoordinateFrame::World).unwrap();
        assert!(skin(&t, &motion, 2).is_err());
    }
}
