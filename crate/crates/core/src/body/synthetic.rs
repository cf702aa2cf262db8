//! Deterministic synthetic body templates.
//!
//! The generator builds a humanoid as capsule-like vertex helices around each
//! bone of a fixed 24-joint skeleton, plus four tiny marker vertices centred
//! on every joint. Marker rings are symmetric about their joint and rigidly
//! bound to it, and the joint regressor reads exactly those markers, so
//! regressed joints coincide with forward-kinematics joints to machine
//! precision. The rest root joint sits exactly at the origin and the shape
//! basis vanishes on markers, so joint locations are invariant under shape
//! coefficients.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BodyTemplate, VertexGroups};
use crate::motion::{JOINT_COUNT, SHAPE_COUNT};

/// Rest skeleton, T-pose, metres. Root at the origin, x to the body's left,
/// y forward, z up.
pub(crate) const REST_JOINTS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],       // 0 pelvis
    [0.09, 0.0, -0.06],    // 1 left hip
    [-0.09, 0.0, -0.06],   // 2 right hip
    [0.0, 0.0, 0.12],      // 3 spine1
    [0.09, 0.0, -0.47],    // 4 left knee
    [-0.09, 0.0, -0.47],   // 5 right knee
    [0.0, 0.0, 0.24],      // 6 spine2
    [0.09, 0.0, -0.87],    // 7 left ankle
    [-0.09, 0.0, -0.87],   // 8 right ankle
    [0.0, 0.0, 0.34],      // 9 spine3
    [0.09, 0.13, -0.90],   // 10 left foot
    [-0.09, 0.13, -0.90],  // 11 right foot
    [0.0, 0.0, 0.46],      // 12 neck
    [0.06, 0.0, 0.40],     // 13 left collar
    [-0.06, 0.0, 0.40],    // 14 right collar
    [0.0, 0.02, 0.56],     // 15 head
    [0.18, 0.0, 0.42],     // 16 left shoulder
    [-0.18, 0.0, 0.42],    // 17 right shoulder
    [0.44, 0.0, 0.42],     // 18 left elbow
    [-0.44, 0.0, 0.42],    // 19 right elbow
    [0.68, 0.0, 0.42],     // 20 left wrist
    [-0.68, 0.0, 0.42],    // 21 right wrist
    [0.79, 0.0, 0.42],     // 22 left hand
    [-0.79, 0.0, 0.42],    // 23 right hand
];

pub(crate) const PARENTS: [Option<usize>; JOINT_COUNT] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// (parent, child, capsule radius) for every bone.
const BONES: [(usize, usize, f64); 23] = [
    (0, 1, 0.09),
    (0, 2, 0.09),
    (0, 3, 0.11),
    (3, 6, 0.11),
    (6, 9, 0.11),
    (9, 12, 0.05),
    (12, 15, 0.09),
    (9, 13, 0.05),
    (9, 14, 0.05),
    (1, 4, 0.07),
    (2, 5, 0.07),
    (4, 7, 0.05),
    (5, 8, 0.05),
    (7, 10, 0.035),
    (8, 11, 0.035),
    (13, 16, 0.05),
    (14, 17, 0.05),
    (16, 18, 0.045),
    (17, 19, 0.045),
    (18, 20, 0.04),
    (19, 21, 0.04),
    (20, 22, 0.03),
    (21, 23, 0.03),
];

const END_EFFECTOR_BONES: [(usize, usize); 4] = [(7, 10), (8, 11), (20, 22), (21, 23)];
const END_EFFECTOR_VERTS: usize = 12;
const MARKERS_PER_JOINT: usize = 4;
const MARKER_RADIUS: f64 = 0.008;
const MIN_BONE_VERTS: usize = 8;
/// Calf and forearm capsules stop at this fraction of the bone; run to the
/// full length and the parent surface wraps around whatever the hand or foot
/// is touching.
const PIN_ADJACENT_TRIM: f64 = 0.82;
const PIN_PARENT_BONES: [(usize, usize); 4] = [(4, 7), (5, 8), (18, 20), (19, 21)];

/// Smallest vertex budget the generator accepts: markers, fixed end-effector
/// capsules, and the per-bone minimum.
pub const MIN_TEMPLATE_VERTICES: usize = JOINT_COUNT * MARKERS_PER_JOINT
    + 4 * END_EFFECTOR_VERTS
    + (23 - 4) * MIN_BONE_VERTS;

fn orthonormal_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = axis.normalize();
    let hint = if a.z.abs() < 0.9 {
        Vector3::new(0.0, 0.0, 1.0)
    } else {
        Vector3::new(1.0, 0.0, 0.0)
    };
    let u = a.cross(&hint).normalize();
    let w = a.cross(&u);
    (u, w)
}

/// Deterministic synthetic humanoid with `n_vertices` vertices.
///
/// Fails if `n_vertices` is below [`MIN_TEMPLATE_VERTICES`]. The same
/// `(n_vertices, seed)` pair always produces the same template.
pub fn make_synthetic_template(n_vertices: usize, seed: u64) -> crate::Result<BodyTemplate> {
    if n_vertices < MIN_TEMPLATE_VERTICES {
        return Err(crate::Error::validation(
            "n_vertices",
            format!("need at least {MIN_TEMPLATE_VERTICES} vertices, got {n_vertices}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest: Vec<Vector3<f64>> = REST_JOINTS.iter().map(|j| Vector3::from_row_slice(j)).collect();

    // Split the budget: fixed-size end-effector capsules, the rest spread
    // over the remaining bones proportionally to surface area, largest
    // remainder rounding so the total is exact.
    let marker_total = JOINT_COUNT * MARKERS_PER_JOINT;
    let flexible_budget = n_vertices - marker_total - 4 * END_EFFECTOR_VERTS;
    let flexible: Vec<&(usize, usize, f64)> = BONES
        .iter()
        .filter(|(a, b, _)| !END_EFFECTOR_BONES.contains(&(*a, *b)))
        .collect();
    let weights: Vec<f64> = flexible
        .iter()
        .map(|(a, b, r)| (rest[*b] - rest[*a]).norm() * r)
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| {
            let share = flexible_budget as f64 * w / weight_sum;
            (share.floor() as usize).max(MIN_BONE_VERTS)
        })
        .collect();
    let mut assigned: usize = counts.iter().sum();
    // Trim or grow to the exact budget, preferring bones with the largest
    // fractional share. Deterministic: stable ordering by index.
    while assigned > flexible_budget {
        let i = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > MIN_BONE_VERTS)
            .max_by(|(i, a), (j, b)| a.cmp(b).then(j.cmp(i)))
            .map(|(i, _)| i)
            .expect("budget underflow is prevented by MIN_TEMPLATE_VERTICES");
        counts[i] -= 1;
        assigned -= 1;
    }
    let mut next = 0usize;
    let n_bones = counts.len();
    while assigned < flexible_budget {
        counts[next % n_bones] += 1;
        assigned += 1;
        next += 1;
    }

    let mut vertices: Vec<Vector3<f64>> = Vec::with_capacity(n_vertices);
    let mut skin_weights: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n_vertices);
    let mut radial_dirs: Vec<Vector3<f64>> = Vec::with_capacity(n_vertices);
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut bone_verts: std::collections::HashMap<(usize, usize), Vec<usize>> =
        std::collections::HashMap::new();

    let golden = 2.399963229728653;
    let mut flexible_iter = counts.iter();
    for (a, b, radius) in BONES.iter() {
        let count = if END_EFFECTOR_BONES.contains(&(*a, *b)) {
            END_EFFECTOR_VERTS
        } else {
            *flexible_iter.next().unwrap()
        };
        let axis = rest[*b] - rest[*a];
        let (u, w) = orthonormal_basis(&axis);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let start = vertices.len();
        let trim =
            if PIN_PARENT_BONES.contains(&(*a, *b)) { PIN_ADJACENT_TRIM } else { 1.0 };
        for i in 0..count {
            let t = trim * (i as f64 + 0.5) / count as f64;
            let phi = phase + i as f64 * golden;
            let jitter = 1.0 + rng.gen_range(-0.08..0.08);
            let rho = phi.cos() * u + phi.sin() * w;
            vertices.push(rest[*a] + t * axis + radius * jitter * rho);
            radial_dirs.push(rho);
            // Proximal joint drives the bone; blend toward the distal joint
            // near the far end.
            let s = 0.25 * ((t - 0.6) / 0.4).clamp(0.0, 1.0);
            if s > 0.0 {
                skin_weights.push(vec![(*a, 1.0 - s), (*b, s)]);
            } else {
                skin_weights.push(vec![(*a, 1.0)]);
            }
        }
        for i in start..start + count - 2 {
            faces.push([i, i + 1, i + 2]);
        }
        bone_verts.insert((*a, *b), (start..start + count).collect());
    }

    // Joint markers: symmetric cross of four vertices, rigidly bound.
    let mut marker_indices: Vec<[usize; MARKERS_PER_JOINT]> = Vec::with_capacity(JOINT_COUNT);
    for j in 0..JOINT_COUNT {
        let axis = match PARENTS[j] {
            Some(p) => {
                let d = rest[j] - rest[p];
                if d.norm() > 1e-9 {
                    d
                } else {
                    Vector3::new(0.0, 0.0, 1.0)
                }
            }
            None => Vector3::new(0.0, 0.0, 1.0),
        };
        let (u, w) = orthonormal_basis(&axis);
        let mut ids = [0usize; MARKERS_PER_JOINT];
        for (m, offset) in [u, -u, w, -w].iter().enumerate() {
            ids[m] = vertices.len();
            vertices.push(rest[j] + MARKER_RADIUS * offset);
            radial_dirs.push(Vector3::zeros());
            skin_weights.push(vec![(j, 1.0)]);
        }
        marker_indices.push(ids);
    }
    debug_assert_eq!(vertices.len(), n_vertices);

    let joint_regressor: Vec<Vec<(usize, f64)>> = marker_indices
        .iter()
        .map(|ids| ids.iter().map(|&i| (i, 0.25)).collect())
        .collect();

    // Smooth radial shape modes. Markers keep a zero basis so joints are
    // shape-invariant.
    let mut shape_basis = vec![[Vector3::zeros(); SHAPE_COUNT]; n_vertices];
    for mode in 0..SHAPE_COUNT {
        let amp: f64 = rng.gen_range(0.006..0.014);
        let omega: f64 = rng.gen_range(1.0..3.5);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        for (v, basis) in shape_basis.iter_mut().enumerate() {
            let rho = radial_dirs[v];
            if rho == Vector3::zeros() {
                continue;
            }
            let z = vertices[v].z;
            basis[mode] = amp * (omega * z + phase).sin() * rho;
        }
    }

    let collect = |bones: &[(usize, usize)], joints: &[usize]| -> Vec<usize> {
        let mut out: Vec<usize> = bones
            .iter()
            .flat_map(|k| bone_verts[k].iter().copied())
            .collect();
        out.extend(joints.iter().flat_map(|&j| marker_indices[j].iter().copied()));
        out.sort_unstable();
        out
    };

    // Contact groups carry the markers at both ends of the capsule; every
    // vertex in them is rigid to the ankle/wrist pair.
    let groups = VertexGroups {
        left_foot: collect(&[(7, 10)], &[7, 10]),
        right_foot: collect(&[(8, 11)], &[8, 11]),
        left_hand: collect(&[(20, 22)], &[20, 22]),
        right_hand: collect(&[(21, 23)], &[21, 23]),
        torso: collect(
            &[(0, 1), (0, 2), (0, 3), (3, 6), (6, 9), (9, 12), (12, 15), (9, 13), (9, 14)],
            &[0, 1, 2, 3, 6, 9, 12, 13, 14, 15],
        ),
        limbs: collect(
            &[
                (1, 4),
                (2, 5),
                (4, 7),
                (5, 8),
                (7, 10),
                (8, 11),
                (13, 16),
                (14, 17),
                (16, 18),
                (17, 19),
                (18, 20),
                (19, 21),
                (20, 22),
                (21, 23),
            ],
            &[4, 5, 7, 8, 10, 11, 16, 17, 18, 19, 20, 21, 22, 23],
        ),
    };

    let template = BodyTemplate {
        rest_vertices: vertices,
        faces,
        parents: PARENTS,
        skin_weights,
        shape_basis,
        joint_regressor,
        groups,
        stable_joints: vec![0, 3, 6, 9, 12],
    };
    template.validate()?;
    Ok(template)
}
