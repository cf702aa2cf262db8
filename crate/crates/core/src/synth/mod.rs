//! Synthetic climbing fixtures with analytically exact contact.
//!
//! The generator plans a hold-to-hold climbing choreography on a procedural
//! wall and emits matching artifacts: a scene mesh whose contact patches are
//! exact copies of the pinned end-effector rings, a ground-truth motion whose
//! rings land bitwise-stably on those patches, simulated LiDAR sweeps that
//! copy the visible body vertices, and a controlled corruption of the motion
//! for refinement benchmarks. On a noise-free fixture every loss term of
//! [`crate::losses::total_loss`] evaluates to (machine) zero by construction.
//!
//! Choreography invariants the losses rely on:
//! - the root translates at constant velocity along the climb axis;
//! - torso joint rotations stay zero, so the torso moves rigidly with the
//!   root and the smoothness terms see constant-velocity joint tracks;
//! - exactly one limb relocates per phase; its ring leaves and lands with a
//!   discrete clearance hop, so no sampled frame places a ring inside a
//!   contact patch shell;
//! - pinned limbs solve a two-bone reach with a counter-rotated ankle or
//!   wrist, so the whole end-effector ring is rigid across the hold.

use crate::body::{make_synthetic_template, skin_all, BodyTemplate, Limb, ShapedTemplate};
use crate::cloud::{PointCloudFrame, PointLabel};
use crate::frame::CoordinateFrame;
use crate::geometry::{convex_hull_3d, hpr, MeshNeighborhood};
use crate::mesh::SceneMesh;
use crate::motion::{FramePose, MotionSequence, JOINT_COUNT, SHAPE_COUNT};
use crate::parallel;
use crate::rotation::log_map;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Frames one limb spends relocating between holds.
const PHASE_LEN: usize = 10;
/// One full relocation round of all four limbs.
const CYCLE_LEN: usize = 4 * PHASE_LEN;
/// Hold-to-hold spacing along the climb axis, metres.
const HOLD_STEP: f64 = 0.3;
/// Discrete jump off and onto a hold. Must be large enough that no transit
/// sample puts a ring vertex inside a patch shell, and small enough that
/// `2 * CLEARANCE_HOP < HOLD_STEP` leaves a nonempty glide segment.
const CLEARANCE_HOP: f64 = 0.12;
/// Root offset from the wall plane, along the outward normal.
const ROOT_STANDOFF: f64 = 0.32;
const HAND_STANDOFF: f64 = 0.06;
const FOOT_STANDOFF: f64 = 0.08;
/// Root position along the climb-up axis at frame 0.
const START_ALONG: f64 = 0.8;
/// Overhang tilt, radians (15 degrees).
const OVERHANG_TILT: f64 = 0.2617993877991494;
/// In-plane margin every hold must keep from the wall border; patches
/// extend less than this from their pin.
const WALL_MARGIN: f64 = 0.1;
const WALL_PITCH: f64 = 0.25;
const GROUND_PITCH: f64 = 0.5;
const DECOR_PITCH: f64 = 0.5;
const DECOR_HALF: f64 = 0.03;
const DECOR_DEPTH: f64 = 0.04;
/// Decorative holds keep this lateral distance from every limb lane.
const DECOR_LANE_CLEAR: f64 = 0.3;
const LIDAR_STREAM_BASE: u64 = 0x100;
const CORRUPT_STREAM: u64 = 0x1;

/// Wall inclination of the generated scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WallKind {
    /// Vertical wall, traversed sideways.
    Horizontal,
    /// Vertical wall, climbed upward.
    Vertical,
    /// Wall tilted over the climber, climbed upward.
    Overhang,
}

/// Everything the generator needs to produce one reproducible fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub wall: WallKind,
    pub wall_width: f64,
    pub wall_height: f64,
    pub n_frames: usize,
    pub frame_rate: f64,
    /// Cap on emitted points per sweep; sweeps with fewer visible vertices
    /// keep all of them.
    pub points_per_frame: usize,
    /// Hidden-point-removal exponent used when simulating sweeps. Must match
    /// the loss configuration for the visible sets to coincide.
    pub visibility_gamma: f64,
    /// Isotropic Gaussian noise added to every emitted point, metres.
    pub lidar_sigma: f64,
    /// Noise added to every axis-angle pose coordinate by
    /// [`corrupt_motion`], radians.
    pub pose_sigma: f64,
    /// Root translation offset reached exactly at the final frame.
    pub drift: [f64; 3],
    pub sensor_position: [f64; 3],
    pub template_vertices: usize,
    pub template_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            wall: WallKind::Vertical,
            wall_width: 4.0,
            wall_height: 3.0,
            n_frames: 200,
            frame_rate: 20.0,
            points_per_frame: 320,
            visibility_gamma: 2.0,
            lidar_sigma: 0.0,
            pose_sigma: 0.0,
            drift: [0.0; 3],
            sensor_position: [0.0, -4.0, 1.2],
            template_vertices: 320,
            template_seed: 11,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let positive = [
            ("wall_width", self.wall_width),
            ("wall_height", self.wall_height),
            ("frame_rate", self.frame_rate),
            ("visibility_gamma", self.visibility_gamma),
        ];
        for (name, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(crate::Error::validation(
                    name,
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        if self.n_frames < 4 {
            return Err(crate::Error::validation(
                "n_frames",
                format!("need at least 4 frames, got {}", self.n_frames),
            ));
        }
        if self.points_per_frame == 0 {
            return Err(crate::Error::validation("points_per_frame", "must be at least 1"));
        }
        for (name, value) in [("lidar_sigma", self.lidar_sigma), ("pose_sigma", self.pose_sigma)] {
            if !value.is_finite() || value < 0.0 {
                return Err(crate::Error::validation(
                    name,
                    format!("must be non-negative and finite, got {value}"),
                ));
            }
        }
        let finite3 = [("drift", self.drift), ("sensor_position", self.sensor_position)];
        for (name, value) in finite3 {
            if !value.iter().all(|c| c.is_finite()) {
                return Err(crate::Error::validation(name, "non-finite coordinate"));
            }
        }
        if self.template_vertices < crate::body::MIN_TEMPLATE_VERTICES {
            return Err(crate::Error::validation(
                "template_vertices",
                format!(
                    "need at least {}, got {}",
                    crate::body::MIN_TEMPLATE_VERTICES,
                    self.template_vertices
                ),
            ));
        }
        Ok(())
    }

    pub fn sensor(&self) -> Vector3<f64> {
        Vector3::from(self.sensor_position)
    }

    pub fn template(&self) -> crate::Result<BodyTemplate> {
        make_synthetic_template(self.template_vertices, self.template_seed)
    }
}

/// One generated fixture: template, scene, ground-truth motion, and the
/// static sensor trajectory that goes with the sweeps.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub template: BodyTemplate,
    pub scene: SceneMesh,
    pub motion: MotionSequence,
    pub sensor_positions: Vec<Vector3<f64>>,
}

/// In-plane axes and outward normal of the wall surface.
///
/// `surface(lx, lu) = lateral * lx + up * lu` spans the wall plane through
/// the origin; `out` points toward the climber. `climb` is the direction the
/// root advances: `up` for climbing kinds, `lateral` for the traverse.
#[derive(Debug, Clone, Copy)]
struct WallFrame {
    lateral: Vector3<f64>,
    up: Vector3<f64>,
    out: Vector3<f64>,
    climb: Vector3<f64>,
}

impl WallFrame {
    fn new(kind: WallKind) -> Self {
        let lateral = Vector3::new(1.0, 0.0, 0.0);
        let (up, out) = match kind {
            WallKind::Horizontal | WallKind::Vertical => {
                (Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, -1.0, 0.0))
            }
            WallKind::Overhang => {
                let (s, c) = OVERHANG_TILT.sin_cos();
                (Vector3::new(0.0, -s, c), Vector3::new(0.0, -c, -s))
            }
        };
        let climb = if kind == WallKind::Horizontal { lateral } else { up };
        Self { lateral, up, out, climb }
    }

    fn surface(&self, lx: f64, lu: f64) -> Vector3<f64> {
        self.lateral * lx + self.up * lu
    }
}

/// (base, mid, pin, tip) joint indices of a limb chain.
fn chain(limb: Limb) -> (usize, usize, usize, usize) {
    match limb {
        Limb::LeftFoot => (1, 4, 7, 10),
        Limb::RightFoot => (2, 5, 8, 11),
        Limb::LeftHand => (16, 18, 20, 22),
        Limb::RightHand => (17, 19, 21, 23),
    }
}

/// Order in which limbs relocate within one cycle.
fn limb_phase(limb: Limb) -> usize {
    match limb {
        Limb::LeftHand => 0,
        Limb::RightFoot => 1,
        Limb::RightHand => 2,
        Limb::LeftFoot => 3,
    }
}

/// Lateral hold offset from the root column, metres.
fn lateral_offset(limb: Limb) -> f64 {
    match limb {
        Limb::LeftFoot => 0.22,
        Limb::RightFoot => -0.22,
        Limb::LeftHand => 0.35,
        Limb::RightHand => -0.35,
    }
}

/// Hold offset along the climb-up axis relative to the root, metres.
fn along_offset(limb: Limb) -> f64 {
    if limb.is_foot() {
        -0.61
    } else {
        0.52
    }
}

fn standoff(limb: Limb) -> f64 {
    if limb.is_foot() {
        FOOT_STANDOFF
    } else {
        HAND_STANDOFF
    }
}

/// Fixed global orientation of the pinned end-effector pair. Feet turn their
/// toes inward so the ring lies along the wall and the toe tips stay out of
/// the hand columns (a foot hold sits 5 mm below a hand hold every third
/// step); hands keep the rest orientation, which is already wall-parallel.
fn pin_rotation(limb: Limb) -> Matrix3<f64> {
    match limb {
        // toes point -x
        Limb::LeftFoot => Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        // toes point +x
        Limb::RightFoot => Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        Limb::LeftHand | Limb::RightHand => Matrix3::identity(),
    }
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Frame-by-frame pin targets for every limb plus the root line.
struct Choreography {
    wall: WallFrame,
    root: Vec<Vector3<f64>>,
    /// Pin-joint (ankle or wrist) world target per frame per limb.
    targets: Vec<[Vector3<f64>; 4]>,
    /// True when the limb rests exactly on a hold at that frame.
    pinned: Vec<[bool; 4]>,
    /// Highest hold index each limb references.
    max_hold: [usize; 4],
}

/// In-plane wall coordinates of hold `c` for `limb`.
fn hold_plane_coords(config: &SynthConfig, limb: Limb, c: usize, x_start: f64) -> (f64, f64) {
    let q = limb_phase(limb) as f64;
    let prog = HOLD_STEP * (c as f64 + (q + 0.5) / 4.0 - 0.5);
    match config.wall {
        WallKind::Horizontal => (
            x_start + lateral_offset(limb) + prog,
            START_ALONG + along_offset(limb),
        ),
        _ => (lateral_offset(limb), START_ALONG + along_offset(limb) + prog),
    }
}

fn hold_position(
    config: &SynthConfig,
    wall: &WallFrame,
    limb: Limb,
    c: usize,
    x_start: f64,
) -> Vector3<f64> {
    let (lx, lu) = hold_plane_coords(config, limb, c, x_start);
    wall.surface(lx, lu) + wall.out * standoff(limb)
}

fn plan_choreography(config: &SynthConfig) -> crate::Result<Choreography> {
    config.validate()?;
    let wall = WallFrame::new(config.wall);
    let n = config.n_frames;
    let speed = HOLD_STEP / CYCLE_LEN as f64;
    let travel = speed * (n - 1) as f64;
    let x_start = if config.wall == WallKind::Horizontal {
        -travel / 2.0
    } else {
        0.0
    };

    let base = if config.wall == WallKind::Horizontal {
        wall.surface(x_start, START_ALONG) + wall.out * ROOT_STANDOFF
    } else {
        wall.surface(0.0, START_ALONG) + wall.out * ROOT_STANDOFF
    };
    let root: Vec<Vector3<f64>> = (0..n).map(|k| base + wall.climb * (speed * k as f64)).collect();

    let mut targets = vec![[Vector3::zeros(); 4]; n];
    let mut pinned = vec![[true; 4]; n];
    let mut max_hold = [0usize; 4];
    for limb in Limb::ALL {
        let li = limb.index();
        let q = limb_phase(limb);
        for k in 0..n {
            let c = k / CYCLE_LEN;
            let p = (k % CYCLE_LEN) / PHASE_LEN;
            if p == q {
                let j = k % CYCLE_LEN - q * PHASE_LEN;
                let from = hold_position(config, &wall, limb, c, x_start);
                let to = hold_position(config, &wall, limb, c + 1, x_start);
                max_hold[li] = max_hold[li].max(c + 1);
                if j == PHASE_LEN - 1 {
                    targets[k][li] = to;
                } else {
                    // Lift off along the wall's up axis; approach the next
                    // hold from below when climbing, from above when
                    // traversing. No sampled frame leaves the limb inside
                    // the tangent-plane skirt of a hold copy.
                    let a = from + wall.up * CLEARANCE_HOP;
                    let b = if config.wall == WallKind::Horizontal {
                        to + wall.up * CLEARANCE_HOP
                    } else {
                        to - wall.up * CLEARANCE_HOP
                    };
                    let s = smoothstep(j as f64 / (PHASE_LEN - 2) as f64);
                    targets[k][li] = a + (b - a) * s;
                    pinned[k][li] = false;
                }
            } else {
                let c_occ = c + usize::from(p > q);
                max_hold[li] = max_hold[li].max(c_occ);
                targets[k][li] = hold_position(config, &wall, limb, c_occ, x_start);
            }
        }
    }

    for limb in Limb::ALL {
        for c in 0..=max_hold[limb.index()] {
            let (lx, lu) = hold_plane_coords(config, limb, c, x_start);
            let half = config.wall_width / 2.0 - WALL_MARGIN;
            if lu < WALL_MARGIN || lu > config.wall_height - WALL_MARGIN || lx.abs() > half {
                return Err(crate::Error::validation(
                    "wall",
                    format!(
                        "hold {c} for {} lands outside the {}x{} m wall; \
                         enlarge the wall or shorten the clip",
                        limb.name(),
                        config.wall_width,
                        config.wall_height
                    ),
                ));
            }
        }
    }

    Ok(Choreography { wall, root, targets, pinned, max_hold })
}

/// Rotation taking unit vector `a1` to unit vector `b1` while mapping the
/// half-plane of `reference` around `a1` onto the one around `b1`.
fn triad_rotation(
    a1: Vector3<f64>,
    b1: Vector3<f64>,
    reference: Vector3<f64>,
) -> crate::Result<Matrix3<f64>> {
    let perp = |axis: Vector3<f64>| -> crate::Result<Vector3<f64>> {
        let p = reference - axis * reference.dot(&axis);
        let norm = p.norm();
        if norm < 1e-9 {
            return Err(crate::Error::Degenerate(
                "pole reference is parallel to a limb axis".into(),
            ));
        }
        Ok(p / norm)
    };
    let a2 = perp(a1)?;
    let b2 = perp(b1)?;
    let a = Matrix3::from_columns(&[a1, a2, a1.cross(&a2)]);
    let b = Matrix3::from_columns(&[b1, b2, b1.cross(&b2)]);
    Ok(b * a.transpose())
}

/// Global rotations of the upper and lower bone reaching `target` from
/// `base`, bending toward `pole`.
fn two_bone_ik(
    rest: &[Vector3<f64>; JOINT_COUNT],
    joints: (usize, usize, usize),
    base: Vector3<f64>,
    target: Vector3<f64>,
    pole: Vector3<f64>,
) -> crate::Result<(Matrix3<f64>, Matrix3<f64>)> {
    let (j1, j2, j3) = joints;
    let u1 = rest[j2] - rest[j1];
    let u2 = rest[j3] - rest[j2];
    let l1 = u1.norm();
    let l2 = u2.norm();
    let d = target - base;
    let r = d.norm();
    let hi = 0.99 * (l1 + l2);
    let lo = ((l1 - l2).abs() * 1.05).max(0.02);
    if r > hi || r < lo {
        return Err(crate::Error::validation(
            "choreography",
            format!("pin target at reach {r:.3} m is outside the comfortable range {lo:.3}..{hi:.3}"),
        ));
    }
    let dir = d / r;
    let cos_a = ((l1 * l1 + r * r - l2 * l2) / (2.0 * l1 * r)).clamp(-1.0, 1.0);
    let sin_a = (1.0 - cos_a * cos_a).sqrt();
    let side = pole - dir * pole.dot(&dir);
    let side_norm = side.norm();
    if side_norm < 1e-9 {
        return Err(crate::Error::Degenerate(
            "bend pole is parallel to the reach direction".into(),
        ));
    }
    let bend = dir * cos_a + (side / side_norm) * sin_a;
    let g_upper = triad_rotation(u1 / l1, bend, pole)?;
    let mid = base + bend * l1;
    let lower = (target - mid).normalize();
    let g_lower = triad_rotation(u2 / l2, lower, pole)?;
    Ok((g_upper, g_lower))
}

fn pose_for_frame(
    rest: &[Vector3<f64>; JOINT_COUNT],
    plan: &Choreography,
    k: usize,
) -> crate::Result<FramePose> {
    let mut pose: FramePose = [Vector3::zeros(); JOINT_COUNT];
    let pole = plan.wall.out;
    for limb in Limb::ALL {
        let (j_base, j_mid, j_pin, j_tip) = chain(limb);
        let base = plan.root[k] + rest[j_base];
        let target = plan.targets[k][limb.index()];
        let (g_upper, g_lower) = two_bone_ik(rest, (j_base, j_mid, j_pin), base, target, pole)?;
        let r_pin = pin_rotation(limb);
        pose[j_base] = log_map(&g_upper);
        pose[j_mid] = log_map(&(g_upper.transpose() * g_lower));
        pose[j_pin] = log_map(&(g_lower.transpose() * r_pin));
        debug_assert_eq!(pose[j_tip], Vector3::zeros());
    }
    Ok(pose)
}

/// Outward surface normal of each end-effector group vertex in the rest
/// pose: radial off the bone axis for capsule vertices, the offset direction
/// for joint markers (which sit within 8 mm of their joint).
fn ring_rest_normals(
    shaped: &ShapedTemplate,
    group: &[usize],
    bone: (usize, usize),
) -> crate::Result<Vec<Vector3<f64>>> {
    let a = shaped.joints[bone.0];
    let axis = (shaped.joints[bone.1] - a).normalize();
    group
        .iter()
        .map(|&vi| {
            let v = shaped.vertices[vi];
            for j in [bone.0, bone.1] {
                let r = v - shaped.joints[j];
                if r.norm() < 0.02 {
                    return Ok(r.normalize());
                }
            }
            let r = v - a;
            let radial = r - axis * r.dot(&axis);
            let norm = radial.norm();
            if norm < 1e-9 {
                return Err(crate::Error::Degenerate(format!(
                    "end-effector vertex {vi} sits on its bone axis"
                )));
            }
            Ok(radial / norm)
        })
        .collect()
}

fn add_grid(
    vertices: &mut Vec<Vector3<f64>>,
    normals: &mut Vec<Vector3<f64>>,
    faces: &mut Vec<[usize; 3]>,
    origin: Vector3<f64>,
    dir1: Vector3<f64>,
    len1: f64,
    dir2: Vector3<f64>,
    len2: f64,
    pitch: f64,
    normal: Vector3<f64>,
) {
    let n1 = (len1 / pitch).round().max(1.0) as usize;
    let n2 = (len2 / pitch).round().max(1.0) as usize;
    let e1 = dir1 * (len1 / n1 as f64);
    let e2 = dir2 * (len2 / n2 as f64);
    let start = vertices.len();
    for i2 in 0..=n2 {
        for i1 in 0..=n1 {
            vertices.push(origin + e1 * i1 as f64 + e2 * i2 as f64);
            normals.push(normal);
        }
    }
    let idx = |i1: usize, i2: usize| start + i2 * (n1 + 1) + i1;
    for i2 in 0..n2 {
        for i1 in 0..n1 {
            faces.push([idx(i1, i2), idx(i1 + 1, i2), idx(i1 + 1, i2 + 1)]);
            faces.push([idx(i1, i2), idx(i1 + 1, i2 + 1), idx(i1, i2 + 1)]);
        }
    }
}

/// Five exposed faces of a decorative hold box; the back face lies on the
/// wall plane and is omitted. Corner normals average the adjacent faces.
fn add_decor_box(
    vertices: &mut Vec<Vector3<f64>>,
    normals: &mut Vec<Vector3<f64>>,
    faces: &mut Vec<[usize; 3]>,
    wall: &WallFrame,
    lx: f64,
    lu: f64,
) {
    let center = wall.surface(lx, lu);
    let start = vertices.len();
    // index bits: 1 = +lateral, 2 = +up, 4 = +out
    for bits in 0..8usize {
        let sx = if bits & 1 != 0 { 1.0 } else { -1.0 };
        let su = if bits & 2 != 0 { 1.0 } else { -1.0 };
        let so = if bits & 4 != 0 { 1.0 } else { 0.0 };
        vertices.push(
            center + wall.lateral * (sx * DECOR_HALF) + wall.up * (su * DECOR_HALF)
                + wall.out * (so * DECOR_DEPTH),
        );
        let mut n = wall.lateral * sx + wall.up * su;
        if bits & 4 != 0 {
            n += wall.out;
        }
        normals.push(n.normalize());
    }
    let v = |bits: usize| start + bits;
    let mut quad = |a: usize, b: usize, c: usize, d: usize| {
        faces.push([v(a), v(b), v(c)]);
        faces.push([v(a), v(c), v(d)]);
    };
    quad(4, 5, 7, 6); // outer (+out)
    quad(1, 5, 7, 3); // +lateral
    quad(0, 4, 6, 2); // -lateral
    quad(2, 6, 7, 3); // +up
    quad(0, 4, 5, 1); // -up
}

fn build_scene(
    config: &SynthConfig,
    template: &BodyTemplate,
    shaped: &ShapedTemplate,
    plan: &Choreography,
) -> crate::Result<SceneMesh> {
    let wall = &plan.wall;
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();

    let half_w = config.wall_width / 2.0;
    let ground_x = half_w + 1.0;
    add_grid(
        &mut vertices,
        &mut normals,
        &mut faces,
        Vector3::new(-ground_x, -2.5, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        2.0 * ground_x,
        Vector3::new(0.0, 1.0, 0.0),
        3.0,
        GROUND_PITCH,
        Vector3::new(0.0, 0.0, 1.0),
    );
    add_grid(
        &mut vertices,
        &mut normals,
        &mut faces,
        wall.surface(-half_w, 0.0),
        wall.lateral,
        config.wall_width,
        wall.up,
        config.wall_height,
        WALL_PITCH,
        wall.out,
    );

    // Lateral spans the body's limbs sweep through, kept clear of decor.
    let x_start = {
        let speed = HOLD_STEP / CYCLE_LEN as f64;
        let travel = speed * (config.n_frames - 1) as f64;
        if config.wall == WallKind::Horizontal {
            -travel / 2.0
        } else {
            0.0
        }
    };
    let lanes: Vec<(f64, f64)> = Limb::ALL
        .iter()
        .map(|&limb| {
            let first = hold_plane_coords(config, limb, 0, x_start).0;
            let last = hold_plane_coords(config, limb, plan.max_hold[limb.index()], x_start).0;
            (first.min(last) - DECOR_LANE_CLEAR, first.max(last) + DECOR_LANE_CLEAR)
        })
        .collect();
    let mut iu = 0;
    loop {
        let lu = (iu as f64 + 0.5) * DECOR_PITCH;
        if lu > config.wall_height - DECOR_LANE_CLEAR {
            break;
        }
        if lu >= 0.5 {
            let mut ix = 0;
            loop {
                let lx = -half_w + (ix as f64 + 0.5) * DECOR_PITCH;
                if lx > half_w - DECOR_HALF {
                    break;
                }
                if !lanes.iter().any(|(lo, hi)| lx >= *lo && lx <= *hi) {
                    add_decor_box(&mut vertices, &mut normals, &mut faces, wall, lx, lu);
                }
                ix += 1;
            }
        }
        iu += 1;
    }

    // Contact patches: exact copies of each pinned ring at every hold.
    for limb in Limb::ALL {
        let (_, _, j_pin, j_tip) = chain(limb);
        let group = template.groups.limb(limb);
        let rest_normals = ring_rest_normals(shaped, group, (j_pin, j_tip))?;
        let r_pin = pin_rotation(limb);
        for c in 0..=plan.max_hold[limb.index()] {
            let pin = hold_position(config, wall, limb, c, x_start);
            for (gi, &vi) in group.iter().enumerate() {
                let offset = r_pin * (shaped.vertices[vi] - shaped.joints[j_pin]);
                vertices.push(pin + offset);
                normals.push(r_pin * rest_normals[gi]);
            }
        }
    }

    SceneMesh::new(vertices, normals, faces, CoordinateFrame::World)
}

/// The climbing wall, decorative holds, and contact patches for the
/// choreography implied by `config`.
pub fn generate_scene(config: &SynthConfig) -> crate::Result<SceneMesh> {
    let template = config.template()?;
    let shaped = template.shaped(&[0.0; SHAPE_COUNT]);
    let plan = plan_choreography(config)?;
    build_scene(config, &template, &shaped, &plan)
}

/// Ground-truth climbing motion for `config`, checked against `scene`.
///
/// Fails when a hold is unreachable, a ring misses its contact patch by more
/// than a millimetre, or any body vertex penetrates the scene.
pub fn generate_motion(
    config: &SynthConfig,
    template: &BodyTemplate,
    scene: &SceneMesh,
) -> crate::Result<MotionSequence> {
    let plan = plan_choreography(config)?;
    let shaped = template.shaped(&[0.0; SHAPE_COUNT]);
    let poses: Vec<crate::Result<FramePose>> =
        parallel::map_indexed(config.n_frames, |k| pose_for_frame(&shaped.joints, &plan, k));
    let poses: Vec<FramePose> = poses.into_iter().collect::<crate::Result<_>>()?;
    let motion = MotionSequence::new(
        plan.root.clone(),
        poses,
        [0.0; SHAPE_COUNT],
        config.frame_rate,
        CoordinateFrame::World,
    )?;
    self_check(template, &shaped, &motion, scene, &plan)?;
    Ok(motion)
}

fn self_check(
    template: &BodyTemplate,
    shaped: &ShapedTemplate,
    motion: &MotionSequence,
    scene: &SceneMesh,
    plan: &Choreography,
) -> crate::Result<()> {
    let posed = skin_all(template, motion);
    let hood = MeshNeighborhood::new(scene)?;
    for (k, body) in posed.iter().enumerate() {
        for v in &body.vertices {
            // Clearance is a tangent-plane estimate against the nearest
            // vertex; a capsule grazing a hold copy can dip a few
            // millimetres negative without the surfaces intersecting. A
            // centimetre means actual overlap.
            let clearance = hood.clearance(v);
            if clearance < -1e-2 {
                return Err(crate::Error::validation(
                    "choreography",
                    format!("body penetrates the scene at frame {k} (clearance {clearance:.2e} m)"),
                ));
            }
        }
        for limb in Limb::ALL {
            if !plan.pinned[k][limb.index()] {
                continue;
            }
            let (_, _, j_pin, _) = chain(limb);
            let r_pin = pin_rotation(limb);
            let pin = plan.targets[k][limb.index()];
            for &vi in template.groups.limb(limb) {
                let twin = pin + r_pin * (shaped.vertices[vi] - shaped.joints[j_pin]);
                let miss = (body.vertices[vi] - twin).norm();
                if miss > 1e-3 {
                    return Err(crate::Error::validation(
                        "choreography",
                        format!(
                            "{} misses its hold by {miss:.2e} m at frame {k}; \
                             the hold layout is unreachable",
                            limb.name()
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// One-call fixture: template, scene, ground-truth motion, and the constant
/// sensor trajectory.
pub fn generate_sequence(config: &SynthConfig) -> crate::Result<SyntheticSequence> {
    let template = config.template()?;
    let scene = generate_scene(config)?;
    let motion = generate_motion(config, &template, &scene)?;
    let sensor_positions = vec![config.sensor(); config.n_frames];
    Ok(SyntheticSequence { template, scene, motion, sensor_positions })
}

fn sensor_inside(hull_points: &[Vector3<f64>], faces: &[[usize; 3]], s: &Vector3<f64>) -> bool {
    faces.iter().all(|f| {
        let a = hull_points[f[0]];
        let n = (hull_points[f[1]] - a).cross(&(hull_points[f[2]] - a));
        n.dot(&(s - a)) <= 0.0
    })
}

/// Simulated sweeps: per frame, the hidden-point-removal-visible body
/// vertices from the sensor, optionally subsampled to `points_per_frame`
/// and perturbed with isotropic Gaussian noise.
///
/// With zero noise and a large enough point budget every emitted point is a
/// bitwise copy of a visible body vertex.
pub fn simulate_lidar(
    template: &BodyTemplate,
    motion: &MotionSequence,
    sensor: &Vector3<f64>,
    config: &SynthConfig,
) -> crate::Result<Vec<PointCloudFrame>> {
    config.validate()?;
    if !sensor.iter().all(|c| c.is_finite()) {
        return Err(crate::Error::NonFinite("sensor position".into()));
    }
    let posed = skin_all(template, motion);
    let frames: Vec<crate::Result<PointCloudFrame>> =
        parallel::map_indexed(motion.num_frames(), |k| {
            let body = &posed[k];
            let hull = convex_hull_3d(&body.vertices)?;
            if sensor_inside(&body.vertices, &hull.faces, sensor) {
                return Err(crate::Error::Degenerate(format!(
                    "sensor is inside the subject at frame {k}"
                )));
            }
            let visible = hpr(&body.vertices, sensor, config.visibility_gamma)?;
            let mut points: Vec<Vector3<f64>> =
                visible.iter().map(|&i| body.vertices[i]).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(LIDAR_STREAM_BASE + k as u64);
            if points.len() > config.points_per_frame {
                let mut keep =
                    rand::seq::index::sample(&mut rng, points.len(), config.points_per_frame)
                        .into_vec();
                keep.sort_unstable();
                points = keep.into_iter().map(|i| points[i]).collect();
            }
            if config.lidar_sigma > 0.0 {
                let noise = Normal::new(0.0, config.lidar_sigma)
                    .expect("validated sigma is finite and non-negative");
                for p in &mut points {
                    for c in 0..3 {
                        p[c] += noise.sample(&mut rng);
                    }
                }
            }
            PointCloudFrame::new(
                points,
                k as f64 / motion.frame_rate,
                motion.frame,
                PointLabel::Human,
            )
        });
    frames.into_iter().collect()
}

/// Benchmark initialization: linear root drift reaching `config.drift`
/// exactly at the last frame plus iid Gaussian noise on every axis-angle
/// pose coordinate. Zero settings return the input bitwise.
pub fn corrupt_motion(
    motion: &MotionSequence,
    config: &SynthConfig,
) -> crate::Result<MotionSequence> {
    config.validate()?;
    let drift = Vector3::from(config.drift);
    if config.pose_sigma == 0.0 && drift == Vector3::zeros() {
        return Ok(motion.clone());
    }
    let n = motion.num_frames();
    if n < 2 {
        return Err(crate::Error::NotEnoughFrames {
            context: "motion corruption",
            needed: 2,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(CORRUPT_STREAM);
    let mut translations = motion.translations.clone();
    for (k, t) in translations.iter_mut().enumerate() {
        *t += drift * (k as f64 / (n - 1) as f64);
    }
    let mut poses = motion.poses.clone();
    if config.pose_sigma > 0.0 {
        let noise = Normal::new(0.0, config.pose_sigma)
            .expect("validated sigma is finite and non-negative");
        for pose in &mut poses {
            for joint in pose.iter_mut() {
                for c in 0..3 {
                    joint[c] += noise.sample(&mut rng);
                }
            }
        }
    }
    MotionSequence::new(translations, poses, motion.betas, motion.frame_rate, motion.frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{total_loss, LossConfig, LossWeights, SequenceInputs, Stage};

    fn small_config() -> SynthConfig {
        SynthConfig { n_frames: 24, ..SynthConfig::default() }
    }

    #[test]
    fn scene_bounding_box_matches_layout() {
        let scene = generate_scene(&SynthConfig::default()).unwrap();
        let (lo, hi) = scene.bounding_box();
        // Ground: x in [-3, 3], y in [-2.5, 0.5]; wall: z in [0, 3].
        assert!((lo.x - -3.0).abs() < 1e-9);
        assert!((hi.x - 3.0).abs() < 1e-9);
        assert!((lo.y - -2.5).abs() < 1e-9);
        assert!((hi.y - 0.5).abs() < 1e-9);
        assert!(lo.z.abs() < 1e-9);
        assert!((hi.z - 3.0).abs() < 1e-9);
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let config = small_config();
        assert_eq!(generate_scene(&config).unwrap(), generate_scene(&config).unwrap());
    }

    #[test]
    fn all_wall_kinds_produce_valid_fixtures() {
        for wall in [WallKind::Horizontal, WallKind::Vertical, WallKind::Overhang] {
            let config = SynthConfig { wall, ..small_config() };
            let seq = generate_sequence(&config).unwrap();
            assert_eq!(seq.motion.num_frames(), config.n_frames);
            assert_eq!(seq.motion.frame_rate, config.frame_rate);
        }
    }

    #[test]
    fn undersized_wall_is_rejected() {
        let config = SynthConfig { wall_height: 1.2, ..small_config() };
        let err = generate_scene(&config).unwrap_err();
        assert!(err.to_string().contains("wall"), "{err}");
    }

    #[test]
    fn ground_truth_zeroes_every_loss_term() {
        let config = small_config();
        let seq = generate_sequence(&config).unwrap();
        let clouds = simulate_lidar(&seq.template, &seq.motion, &config.sensor(), &config).unwrap();
        let inputs = SequenceInputs {
            template: &seq.template,
            motion: &seq.motion,
            scene: &seq.scene,
            clouds: &clouds,
            sensor_positions: &seq.sensor_positions,
        };
        for stage in [Stage::Annotate, Stage::Postprocess] {
            let report =
                total_loss(stage, &LossWeights::default(), &inputs, &LossConfig::default())
                    .unwrap();
            for (name, value) in &report.raw {
                assert!(*value < 1e-6, "{stage} {name} = {value:e}");
            }
        }
    }

    #[test]
    fn noise_free_sweeps_copy_visible_vertices() {
        let config = small_config();
        let seq = generate_sequence(&config).unwrap();
        let clouds = simulate_lidar(&seq.template, &seq.motion, &config.sensor(), &config).unwrap();
        let posed = skin_all(&seq.template, &seq.motion);
        for (k, cloud) in clouds.iter().enumerate() {
            let visible = hpr(&posed[k].vertices, &config.sensor(), config.visibility_gamma).unwrap();
            assert_eq!(cloud.points.len(), visible.len());
            for (p, &vi) in cloud.points.iter().zip(&visible) {
                assert_eq!(*p, posed[k].vertices[vi]);
            }
            assert_eq!(cloud.timestamp, k as f64 / config.frame_rate);
        }
    }

    #[test]
    fn sweeps_are_deterministic_and_respect_the_budget() {
        let config = SynthConfig { lidar_sigma: 0.02, points_per_frame: 50, ..small_config() };
        let seq = generate_sequence(&config).unwrap();
        let a = simulate_lidar(&seq.template, &seq.motion, &config.sensor(), &config).unwrap();
        let b = simulate_lidar(&seq.template, &seq.motion, &config.sensor(), &config).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| c.points.len() == 50));
    }

    #[test]
    fn lidar_noise_stays_within_statistical_bounds() {
        let sigma = 0.01;
        let config = SynthConfig { lidar_sigma: sigma, ..small_config() };
        let seq = generate_sequence(&config).unwrap();
        let clouds = simulate_lidar(&seq.template, &seq.motion, &config.sensor(), &config).unwrap();
        let posed = skin_all(&seq.template, &seq.motion);
        for (k, cloud) in clouds.iter().enumerate() {
            let visible: Vec<Vector3<f64>> =
                hpr(&posed[k].vertices, &config.sensor(), config.visibility_gamma)
                    .unwrap()
                    .iter()
                    .map(|&i| posed[k].vertices[i])
                    .collect();
            let d = crate::geometry::chamfer(&cloud.points, &visible).unwrap();
            // Each side is bounded by E||noise||^2 = 3 sigma^2 in expectation.
            assert!(d < 2.0 * 3.0 * sigma * sigma * 1.5, "chamfer {d:e} too large at frame {k}");
            assert!(d > 0.0);
        }
    }

    #[test]
    fn sensor_inside_the_body_is_rejected() {
        let config = small_config();
        let seq = generate_sequence(&config).unwrap();
        let inside = seq.motion.translations[0];
        let err = simulate_lidar(&seq.template, &seq.motion, &inside, &config).unwrap_err();
        assert!(err.to_string().contains("inside"), "{err}");
    }

    #[test]
    fn zero_corruption_is_bitwise_identity() {
        let config = small_config();
        let seq = generate_sequence(&config).unwrap();
        let corrupted = corrupt_motion(&seq.motion, &config).unwrap();
        assert_eq!(corrupted, seq.motion);
    }

    #[test]
    fn drift_lands_exactly_on_the_final_frame() {
        let config = SynthConfig { drift: [0.3, -0.1, 0.05], ..small_config() };
        let seq = generate_sequence(&config).unwrap();
        let corrupted = corrupt_motion(&seq.motion, &config).unwrap();
        let n = seq.motion.num_frames();
        assert_eq!(corrupted.translations[0], seq.motion.translations[0]);
        assert_eq!(
            corrupted.translations[n - 1],
            seq.motion.translations[n - 1] + Vector3::new(0.3, -0.1, 0.05)
        );
        assert_eq!(corrupted.poses, seq.motion.poses);
    }

    #[test]
    fn pose_noise_degrades_joint_accuracy() {
        let config = SynthConfig { pose_sigma: 0.05, ..small_config() };
        let seq = generate_sequence(&config).unwrap();
        let corrupted = corrupt_motion(&seq.motion, &config).unwrap();
        let err_mm = crate::metrics::mpjpe(&corrupted, &seq.motion, &seq.template).unwrap();
        assert!(err_mm > 5.0, "pose noise should move joints, mpjpe = {err_mm} mm");
    }

    #[test]
    fn config_serde_round_trips_with_uppercase_tags() {
        let config = SynthConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        assert!(text.contains("\"VERTICAL\""), "{text}");
        let back: SynthConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
        let bogus = serde_json::from_str::<SynthConfig>("{\"no_such_field\": 1}");
        assert!(bogus.is_err());
    }
}
