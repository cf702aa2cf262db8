//! Staged motion refinement: finite-difference gradients and Adam.
//!
//! The objective's gates (stability verdicts, contact environments, visible
//! sets, nearest-neighbor correspondences) make it only piecewise smooth.
//! The driver therefore alternates: freeze every gate at the current iterate,
//! descend the now-smooth surrogate with Adam for `gate_refresh_period`
//! iterations, refresh, repeat. Between refreshes the surrogate agrees with
//! the live objective at the freeze point and stays smooth everywhere else.
//!
//! Gradients are forward finite differences. Every loss atom touches at most
//! three consecutive frames, so perturbing one frame's parameters requires
//! re-skinning that frame alone and re-evaluating only the handful of atoms
//! whose stencil contains it.

use crate::body::{skin_pose, BodyTemplate, Limb, PosedBody, ShapedTemplate};
use crate::geometry::{hpr, icp_points, IcpResult, MeshNeighborhood, NeighborIndex};
use crate::losses::{
    detect_stable_limbs, LossConfig, LossWeights, PartCode, PartMask, SequenceInputs, Stage,
};
use crate::motion::{FramePose, MotionSequence, JOINT_COUNT};
use crate::parallel;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// Optimized coordinates per frame: the root translation plus every joint's
/// axis-angle vector. Shape stays frozen.
pub const FRAME_PARAMS: usize = 3 + JOINT_COUNT * 3;

/// One entry of the stage schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stage: Stage,
    pub weights: LossWeights,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Finite-difference step.
    pub gradient_step: f64,
    /// Use central differences instead of forward ones (twice the cost;
    /// meant for verification).
    pub central_difference: bool,
    /// Iterations between gate refreshes.
    pub gate_refresh_period: usize,
    /// Convergence test: stop a stage when the best loss fails to improve by
    /// this relative fraction over a refresh window, or falls to or below
    /// this absolute value.
    pub tolerance: f64,
    pub schedule: Vec<StagePlan>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            gradient_step: 1e-7,
            central_difference: false,
            gate_refresh_period: 25,
            tolerance: 1e-9,
            schedule: vec![
                StagePlan {
                    stage: Stage::Annotate,
                    weights: LossWeights::default(),
                    max_iters: 300,
                },
                StagePlan {
                    stage: Stage::Postprocess,
                    weights: LossWeights::default(),
                    max_iters: 200,
                },
            ],
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("gradient_step", self.gradient_step),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(crate::Error::validation(name, "must be finite and positive"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !v.is_finite() || v <= 0.0 || v >= 1.0 {
                return Err(crate::Error::validation(name, "must lie strictly inside (0, 1)"));
            }
        }
        if self.gate_refresh_period == 0 {
            return Err(crate::Error::validation("gate_refresh_period", "must be at least 1"));
        }
        if !self.tolerance.is_finite() || self.tolerance < 0.0 {
            return Err(crate::Error::validation("tolerance", "must be finite and non-negative"));
        }
        if self.schedule.is_empty() {
            return Err(crate::Error::validation("schedule", "must contain at least one stage"));
        }
        for (i, plan) in self.schedule.iter().enumerate() {
            if plan.max_iters == 0 {
                return Err(crate::Error::validation(
                    format!("schedule[{i}].max_iters"),
                    "must be at least 1",
                ));
            }
            plan.weights.validate()?;
        }
        Ok(())
    }
}

/// First and second moment accumulators for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.t
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    state: &mut AdamState,
    gradient: &[f64],
    config: &OptimizerConfig,
) -> crate::Result<()> {
    if gradient.len() != params.len() || state.m.len() != params.len() {
        return Err(crate::Error::DimensionMismatch {
            context: "adam step",
            expected: params.len(),
            got: if gradient.len() != params.len() {
                gradient.len()
            } else {
                state.m.len()
            },
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        let g = gradient[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Dense finite-difference gradient of an arbitrary objective.
///
/// Forward differences by default; central when the config asks for them.
/// The step actually taken is the representable one (`(x + h) - x`), which
/// removes the rounding component of the truncation error.
pub fn gradient<F>(objective: &F, params: &[f64], config: &OptimizerConfig) -> crate::Result<Vec<f64>>
where
    F: Fn(&[f64]) -> crate::Result<f64> + Sync,
{
    config.validate()?;
    let f0 = objective(params)?;
    if !f0.is_finite() {
        return Err(crate::Error::NonFinite("objective at the expansion point".into()));
    }
    let h = config.gradient_step;
    let results: Vec<crate::Result<f64>> = parallel::map_indexed(params.len(), |i| {
        let mut x = params.to_vec();
        let xi = x[i];
        x[i] = xi + h;
        let h_plus = x[i] - xi;
        let f_plus = objective(&x)?;
        let g = if config.central_difference {
            x[i] = xi - h;
            let h_minus = xi - x[i];
            let f_minus = objective(&x)?;
            (f_plus - f_minus) / (h_plus + h_minus)
        } else {
            (f_plus - f0) / h_plus
        };
        if !g.is_finite() {
            return Err(crate::Error::NonFinite(format!("gradient coordinate {i}")));
        }
        Ok(g)
    });
    results.into_iter().collect()
}

/// Flattens per-frame translation and pose into the optimized vector.
pub fn pack_parameters(motion: &MotionSequence) -> Vec<f64> {
    let mut out = Vec::with_capacity(motion.num_frames() * FRAME_PARAMS);
    for k in 0..motion.num_frames() {
        out.extend_from_slice(motion.translations[k].as_slice());
        for j in 0..JOINT_COUNT {
            out.extend_from_slice(motion.poses[k][j].as_slice());
        }
    }
    out
}

/// Rebuilds a motion from the flattened vector, keeping the base sequence's
/// shape, frame rate, and coordinate frame.
pub fn unpack_parameters(params: &[f64], base: &MotionSequence) -> crate::Result<MotionSequence> {
    let n = base.num_frames();
    if params.len() != n * FRAME_PARAMS {
        return Err(crate::Error::DimensionMismatch {
            context: "parameter vector vs motion",
            expected: n * FRAME_PARAMS,
            got: params.len(),
        });
    }
    let mut translations = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    for k in 0..n {
        let (t, pose) = frame_parameters(params, k);
        translations.push(t);
        poses.push(pose);
    }
    MotionSequence::new(translations, poses, base.betas, base.frame_rate, base.frame)
}

fn frame_parameters(params: &[f64], k: usize) -> (Vector3<f64>, FramePose) {
    let base = k * FRAME_PARAMS;
    let t = Vector3::new(params[base], params[base + 1], params[base + 2]);
    let mut pose = [Vector3::zeros(); JOINT_COUNT];
    for (j, aa) in pose.iter_mut().enumerate() {
        let o = base + 3 + j * 3;
        *aa = Vector3::new(params[o], params[o + 1], params[o + 2]);
    }
    (t, pose)
}

/// Immutable per-sequence context shared by every evaluation in a refinement:
/// everything that does not depend on the optimized parameters.
struct Context<'a> {
    template: &'a BodyTemplate,
    shaped: ShapedTemplate,
    scene: &'a crate::mesh::SceneMesh,
    hood: MeshNeighborhood,
    clouds: &'a [crate::cloud::PointCloudFrame],
    cloud_index: Vec<NeighborIndex>,
    sensors: &'a [Vector3<f64>],
    /// `|sensors[j+1] - sensors[j]|`, precomputed.
    sensor_steps: Vec<f64>,
    mask: PartMask,
    loss: &'a LossConfig,
    n: usize,
}

impl<'a> Context<'a> {
    fn new(inputs: &SequenceInputs<'a>, loss: &'a LossConfig) -> crate::Result<Self> {
        inputs.validate()?;
        loss.validate()?;
        let n = inputs.motion.num_frames();
        if n < 3 {
            return Err(crate::Error::NotEnoughFrames {
                context: "refinement",
                needed: 3,
                got: n,
            });
        }
        let cloud_index = inputs
            .clouds
            .iter()
            .map(|c| NeighborIndex::build(&c.points))
            .collect::<crate::Result<Vec<_>>>()?;
        let sensor_steps = (0..n - 1)
            .map(|j| (inputs.sensor_positions[j + 1] - inputs.sensor_positions[j]).norm())
            .collect();
        Ok(Self {
            template: inputs.template,
            shaped: inputs.template.shaped(&inputs.motion.betas),
            scene: inputs.scene,
            hood: MeshNeighborhood::new(inputs.scene)?,
            clouds: inputs.clouds,
            cloud_index,
            sensors: inputs.sensor_positions,
            sensor_steps,
            mask: PartMask::new(&inputs.template.groups, inputs.template.num_vertices()),
            loss,
            n,
        })
    }

    fn skin_frame(&self, params: &[f64], k: usize) -> PosedBody {
        let (t, pose) = frame_parameters(params, k);
        skin_pose(self.template, &self.shaped, &t, &pose)
    }

    fn skin_all(&self, params: &[f64]) -> Vec<PosedBody> {
        parallel::map_indexed(self.n, |k| self.skin_frame(params, k))
    }
}

/// Everything frozen between gate refreshes. Per-frame vectors are indexed by
/// frame; correspondence vectors are parallel to the lists they index into.
struct Gates {
    stage: Stage,
    weights: LossWeights,
    /// Sorted visible vertex indices per frame.
    visible: Vec<Vec<usize>>,
    /// Nearest cloud point per visible vertex (parallel to `visible`).
    v2p: Vec<Vec<usize>>,
    /// Nearest visible-list position per cloud point.
    p2v: Vec<Vec<usize>>,
    /// Frozen rigid pre-registration when the Chamfer term is evaluated
    /// post-ICP.
    chamfer_fit: Option<Vec<IcpResult>>,
    stable: Vec<[bool; 4]>,
    /// Nearest contact-environment scene vertex per group vertex, per stable
    /// limb (empty when unstable).
    contact_nn: Vec<[Vec<usize>; 4]>,
    /// Per-vertex gated proximity entries `(vertex, cloud point, weight)` and
    /// the frozen divisor.
    prox: Vec<Vec<(usize, usize, f64)>>,
    prox_count: Vec<usize>,
    /// Nearest scene vertex per body vertex.
    pen_nn: Vec<Vec<usize>>,
    /// Visible end-effector vertices and their nearest cloud point.
    effector_nn: Vec<Vec<(usize, usize)>>,
    /// Window `j` (frames j-1, j, j+1) passes the speed gate; index `j - 1`.
    dir_active: Vec<bool>,
}

impl Gates {
    fn freeze(
        stage: Stage,
        weights: &LossWeights,
        ctx: &Context,
        motion: &MotionSequence,
        posed: &[PosedBody],
    ) -> crate::Result<Self> {
        let n = ctx.n;
        let per_frame: Vec<crate::Result<(Vec<usize>, Vec<usize>, Vec<usize>)>> =
            parallel::map_indexed(n, |k| {
                let visible = hpr(
                    &posed[k].vertices,
                    &ctx.sensors[k],
                    ctx.loss.visibility_gamma,
                )?;
                let visible_points: Vec<Vector3<f64>> =
                    visible.iter().map(|&i| posed[k].vertices[i]).collect();
                let v2p = visible_points
                    .iter()
                    .map(|p| ctx.cloud_index[k].nearest(p).0)
                    .collect();
                let visible_index = NeighborIndex::build(&visible_points)?;
                let p2v = ctx.clouds[k]
                    .points
                    .iter()
                    .map(|p| visible_index.nearest(p).0)
                    .collect();
                Ok((visible, v2p, p2v))
            });
        let mut visible = Vec::with_capacity(n);
        let mut v2p = Vec::with_capacity(n);
        let mut p2v = Vec::with_capacity(n);
        for (k, r) in per_frame.into_iter().enumerate() {
            let (vis, a, b) = r.map_err(|e| match e {
                crate::Error::Degenerate(msg) => {
                    crate::Error::Degenerate(format!("frame {k}: {msg}"))
                }
                other => other,
            })?;
            visible.push(vis);
            v2p.push(a);
            p2v.push(b);
        }

        let mut gates = Self {
            stage,
            weights: weights.clone(),
            visible,
            v2p,
            p2v,
            chamfer_fit: None,
            stable: Vec::new(),
            contact_nn: Vec::new(),
            prox: Vec::new(),
            prox_count: Vec::new(),
            pen_nn: Vec::new(),
            effector_nn: Vec::new(),
            dir_active: Vec::new(),
        };

        match stage {
            Stage::Annotate => {
                if ctx.loss.chamfer_registered {
                    let fits: Vec<crate::Result<IcpResult>> = parallel::map_indexed(n, |k| {
                        let pts: Vec<Vector3<f64>> = gates.visible[k]
                            .iter()
                            .map(|&i| posed[k].vertices[i])
                            .collect();
                        icp_points(&pts, &ctx.clouds[k].points, &ctx.loss.icp)
                    });
                    gates.chamfer_fit =
                        Some(fits.into_iter().collect::<crate::Result<Vec<_>>>()?);
                }

                let record = detect_stable_limbs(ctx.template, motion, ctx.scene, ctx.loss)?;
                gates.stable = record.stable.clone();
                gates.contact_nn = (0..n)
                    .map(|k| {
                        let mut per_limb: [Vec<usize>; 4] = Default::default();
                        for limb in Limb::ALL {
                            if !record.is_stable(k, limb) {
                                continue;
                            }
                            let env = record.environment(k, limb);
                            per_limb[limb.index()] = ctx
                                .template
                                .groups
                                .limb(limb)
                                .iter()
                                .map(|&vi| {
                                    *env.iter()
                                        .min_by(|&&a, &&b| {
                                            let da = (posed[k].vertices[vi]
                                                - ctx.scene.vertices[a])
                                                .norm_squared();
                                            let db = (posed[k].vertices[vi]
                                                - ctx.scene.vertices[b])
                                                .norm_squared();
                                            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                                        })
                                        .expect("nonempty environment")
                                })
                                .collect();
                        }
                        per_limb
                    })
                    .collect();

                gates.prox = (0..n)
                    .map(|k| {
                        let mut entries = Vec::new();
                        for (i, &vi) in gates.visible[k].iter().enumerate() {
                            let ci = gates.v2p[k][i];
                            let d = (posed[k].vertices[vi] - ctx.clouds[k].points[ci]).norm();
                            let entry = match ctx.mask.code(vi) {
                                PartCode::Torso if d <= ctx.loss.torso_gate => {
                                    Some(ctx.loss.torso_weight)
                                }
                                PartCode::Limb | PartCode::Foot | PartCode::Hand
                                    if d <= ctx.loss.limb_gate =>
                                {
                                    Some(ctx.loss.limb_weight)
                                }
                                _ => None,
                            };
                            if let Some(w) = entry {
                                entries.push((vi, ci, w));
                            }
                        }
                        entries
                    })
                    .collect();
                gates.prox_count = gates.prox.iter().map(Vec::len).collect();

                gates.pen_nn = parallel::map_indexed(n, |k| {
                    posed[k]
                        .vertices
                        .iter()
                        .map(|v| ctx.hood.nearest_vertex(v).0)
                        .collect()
                });
            }
            Stage::Postprocess => {
                let effectors = ctx.template.groups.end_effectors();
                gates.effector_nn = (0..n)
                    .map(|k| {
                        let mut pairs = Vec::new();
                        let (mut a, mut b) = (0usize, 0usize);
                        let vis = &gates.visible[k];
                        while a < effectors.len() && b < vis.len() {
                            match effectors[a].cmp(&vis[b]) {
                                std::cmp::Ordering::Less => a += 1,
                                std::cmp::Ordering::Greater => b += 1,
                                std::cmp::Ordering::Equal => {
                                    pairs.push((effectors[a], gates.v2p[k][b]));
                                    a += 1;
                                    b += 1;
                                }
                            }
                        }
                        pairs
                    })
                    .collect();
                gates.dir_active = (1..n - 1)
                    .map(|j| {
                        let u = motion.translations[j] - motion.translations[j - 1];
                        let w = motion.translations[j + 1] - motion.translations[j];
                        u.norm() > ctx.loss.speed_gate && w.norm() > ctx.loss.speed_gate
                    })
                    .collect();
            }
        }
        Ok(gates)
    }
}

fn centroid(body: &PosedBody, group: &[usize]) -> Vector3<f64> {
    group.iter().map(|&i| body.vertices[i]).sum::<Vector3<f64>>() / group.len() as f64
}

/// Raw (unweighted, not yet clip-averaged) per-term values at one frame.
fn frame_terms(ctx: &Context, gates: &Gates, k: usize, body: &PosedBody) -> Vec<(&'static str, f64)> {
    match gates.stage {
        Stage::Annotate => {
            let mut contact = 0.0;
            for limb in Limb::ALL {
                if !gates.stable[k][limb.index()] {
                    continue;
                }
                let group = ctx.template.groups.limb(limb);
                let nn = &gates.contact_nn[k][limb.index()];
                let sum: f64 = group
                    .iter()
                    .zip(nn)
                    .map(|(&vi, &si)| (body.vertices[vi] - ctx.scene.vertices[si]).norm())
                    .sum();
                contact += sum / group.len() as f64;
            }

            let vis = &gates.visible[k];
            let positions: Vec<Vector3<f64>> = match &gates.chamfer_fit {
                Some(fits) => vis.iter().map(|&i| fits[k].apply(&body.vertices[i])).collect(),
                None => vis.iter().map(|&i| body.vertices[i]).collect(),
            };
            let fwd: f64 = positions
                .iter()
                .enumerate()
                .map(|(i, p)| (p - ctx.clouds[k].points[gates.v2p[k][i]]).norm_squared())
                .sum::<f64>()
                / positions.len() as f64;
            let bwd: f64 = ctx.clouds[k]
                .points
                .iter()
                .enumerate()
                .map(|(j, p)| (p - positions[gates.p2v[k][j]]).norm_squared())
                .sum::<f64>()
                / ctx.clouds[k].points.len() as f64;
            let chamfer = fwd + bwd;

            let prox = if gates.prox_count[k] == 0 {
                0.0
            } else {
                gates.prox[k]
                    .iter()
                    .map(|&(vi, ci, w)| {
                        w * (body.vertices[vi] - ctx.clouds[k].points[ci]).norm_squared()
                    })
                    .sum::<f64>()
                    / gates.prox_count[k] as f64
            };

            let pen = body
                .vertices
                .iter()
                .zip(&gates.pen_nn[k])
                .map(|(v, &si)| {
                    let clearance = (v - ctx.scene.vertices[si]).dot(&ctx.scene.normals[si]);
                    let depth = (-clearance).max(0.0);
                    depth * depth
                })
                .sum::<f64>()
                / body.vertices.len() as f64;

            vec![
                ("contact", contact),
                ("cloud_chamfer", chamfer),
                ("proximity", prox),
                ("penetration", pen),
            ]
        }
        Stage::Postprocess => {
            let vis = &gates.visible[k];
            let weighted = if vis.is_empty() {
                0.0
            } else {
                vis.iter()
                    .enumerate()
                    .map(|(i, &vi)| {
                        let d2 = (body.vertices[vi] - ctx.clouds[k].points[gates.v2p[k][i]])
                            .norm_squared();
                        ctx.mask.part_weight(vi, &ctx.loss.part_weights) * d2
                    })
                    .sum::<f64>()
                    / vis.len() as f64
            };
            let pairs = &gates.effector_nn[k];
            let effector = if pairs.is_empty() {
                0.0
            } else {
                pairs
                    .iter()
                    .map(|&(vi, ci)| (body.vertices[vi] - ctx.clouds[k].points[ci]).norm_squared())
                    .sum::<f64>()
                    / pairs.len() as f64
            };
            vec![("weighted_fit", weighted), ("end_effector_fit", effector)]
        }
    }
}

/// Raw per-term values on the consecutive pair `(j, j + 1)`.
fn pair_terms(
    ctx: &Context,
    gates: &Gates,
    j: usize,
    a: &PosedBody,
    b: &PosedBody,
    ta: &Vector3<f64>,
    tb: &Vector3<f64>,
) -> Vec<(&'static str, f64)> {
    match gates.stage {
        Stage::Annotate => {
            let mut sliding = 0.0;
            for limb in Limb::ALL {
                if gates.stable[j][limb.index()] && gates.stable[j + 1][limb.index()] {
                    let group = ctx.template.groups.limb(limb);
                    sliding += (centroid(b, group) - centroid(a, group)).norm();
                }
            }
            let trans = (ctx.sensor_steps[j] - (tb - ta).norm()).max(0.0);
            vec![("sliding", sliding), ("translation_smooth", trans)]
        }
        Stage::Postprocess => Vec::new(),
    }
}

/// Raw per-term values on the window centred at `j` (frames j-1, j, j+1).
fn window_terms(
    ctx: &Context,
    gates: &Gates,
    j: usize,
    prev: &PosedBody,
    mid: &PosedBody,
    next: &PosedBody,
    t_prev: &Vector3<f64>,
    t_mid: &Vector3<f64>,
    t_next: &Vector3<f64>,
) -> Vec<(&'static str, f64)> {
    match gates.stage {
        Stage::Annotate => {
            let joints = &ctx.template.stable_joints;
            let sum: f64 = joints
                .iter()
                .map(|&s| {
                    ((next.joints[s] - mid.joints[s]) - (mid.joints[s] - prev.joints[s])).norm()
                })
                .sum();
            vec![("joint_smooth", sum / joints.len() as f64)]
        }
        Stage::Postprocess => {
            let value = if gates.dir_active[j - 1] {
                let u = t_mid - t_prev;
                let w = t_next - t_mid;
                let denom = (u.norm() * w.norm()).max(1e-12);
                1.0 - u.dot(&w) / denom
            } else {
                0.0
            };
            vec![("direction_smooth", value)]
        }
    }
}

fn term_weight(weights: &LossWeights, key: &str) -> f64 {
    match key {
        "contact" => weights.contact,
        "sliding" => weights.sliding,
        "translation_smooth" => weights.translation_smooth,
        "joint_smooth" => weights.joint_smooth,
        "cloud_chamfer" => weights.cloud_chamfer,
        "proximity" => weights.proximity,
        "penetration" => weights.penetration,
        "weighted_fit" => weights.weighted_fit,
        "direction_smooth" => weights.direction_smooth,
        "end_effector_fit" => weights.end_effector_fit,
        _ => unreachable!("unknown loss term {key}"),
    }
}

fn weighted_sum(ctx: &Context, gates: &Gates, terms: &[(&'static str, f64)]) -> f64 {
    terms
        .iter()
        .map(|&(key, v)| term_weight(&gates.weights, key) * v / ctx.n as f64)
        .sum()
}

/// Cached per-frame skins and atom values for the current iterate.
struct Evaluation {
    posed: Vec<PosedBody>,
    translations: Vec<Vector3<f64>>,
    frame_atoms: Vec<f64>,
    pair_atoms: Vec<f64>,
    window_atoms: Vec<f64>,
    /// Weighted per-term totals (clip-averaged), alphabetical by key.
    terms: BTreeMap<String, f64>,
    total: f64,
}

impl Evaluation {
    fn compute(ctx: &Context, gates: &Gates, params: &[f64]) -> Self {
        let n = ctx.n;
        let posed = ctx.skin_all(params);
        let translations: Vec<Vector3<f64>> =
            (0..n).map(|k| frame_parameters(params, k).0).collect();

        let frame_lists: Vec<Vec<(&'static str, f64)>> =
            parallel::map_indexed(n, |k| frame_terms(ctx, gates, k, &posed[k]));
        let pair_lists: Vec<Vec<(&'static str, f64)>> = parallel::map_indexed(n - 1, |j| {
            pair_terms(
                ctx,
                gates,
                j,
                &posed[j],
                &posed[j + 1],
                &translations[j],
                &translations[j + 1],
            )
        });
        let window_lists: Vec<Vec<(&'static str, f64)>> = parallel::map_indexed(n - 2, |w| {
            let j = w + 1;
            window_terms(
                ctx,
                gates,
                j,
                &posed[j - 1],
                &posed[j],
                &posed[j + 1],
                &translations[j - 1],
                &translations[j],
                &translations[j + 1],
            )
        });

        let mut raw: BTreeMap<String, f64> = BTreeMap::new();
        for list in frame_lists.iter().chain(&pair_lists).chain(&window_lists) {
            for &(key, v) in list {
                *raw.entry(key.to_string()).or_insert(0.0) += v;
            }
        }
        let terms: BTreeMap<String, f64> = raw
            .into_iter()
            .map(|(key, v)| {
                let w = term_weight(&gates.weights, &key);
                (key, w * v / n as f64)
            })
            .collect();
        let total = terms.values().sum();

        Self {
            frame_atoms: frame_lists.iter().map(|l| weighted_sum(ctx, gates, l)).collect(),
            pair_atoms: pair_lists.iter().map(|l| weighted_sum(ctx, gates, l)).collect(),
            window_atoms: window_lists.iter().map(|l| weighted_sum(ctx, gates, l)).collect(),
            posed,
            translations,
            terms,
            total,
        }
    }

    /// Sum of every cached atom whose stencil contains frame `k`.
    fn local_base(&self, k: usize) -> f64 {
        let n = self.posed.len();
        let mut sum = self.frame_atoms[k];
        if k > 0 {
            sum += self.pair_atoms[k - 1];
        }
        if k + 1 < n {
            sum += self.pair_atoms[k];
        }
        for j in k.saturating_sub(1)..=k + 1 {
            if (1..n - 1).contains(&j) {
                sum += self.window_atoms[j - 1];
            }
        }
        sum
    }

    /// Same atoms re-evaluated with frame `k` replaced by `body`/`t`.
    fn local_at(
        &self,
        ctx: &Context,
        gates: &Gates,
        k: usize,
        body: &PosedBody,
        t: &Vector3<f64>,
    ) -> f64 {
        let n = self.posed.len();
        let pick_body = |i: usize| if i == k { body } else { &self.posed[i] };
        let pick_t = |i: usize| if i == k { t } else { &self.translations[i] };

        let mut sum = weighted_sum(ctx, gates, &frame_terms(ctx, gates, k, body));
        if k > 0 {
            let j = k - 1;
            sum += weighted_sum(
                ctx,
                gates,
                &pair_terms(ctx, gates, j, pick_body(j), body, pick_t(j), t),
            );
        }
        if k + 1 < n {
            sum += weighted_sum(
                ctx,
                gates,
                &pair_terms(ctx, gates, k, body, pick_body(k + 1), t, pick_t(k + 1)),
            );
        }
        for j in k.saturating_sub(1)..=k + 1 {
            if (1..n - 1).contains(&j) {
                sum += weighted_sum(
                    ctx,
                    gates,
                    &window_terms(
                        ctx,
                        gates,
                        j,
                        pick_body(j - 1),
                        pick_body(j),
                        pick_body(j + 1),
                        pick_t(j - 1),
                        pick_t(j),
                        pick_t(j + 1),
                    ),
                );
            }
        }
        sum
    }
}

/// Atom-local finite-difference gradient over all frames.
fn frozen_gradient(
    ctx: &Context,
    gates: &Gates,
    eval: &Evaluation,
    params: &[f64],
    config: &OptimizerConfig,
) -> crate::Result<Vec<f64>> {
    let n = ctx.n;
    let h = config.gradient_step;
    let blocks: Vec<crate::Result<Vec<f64>>> = parallel::map_indexed(n, |k| {
        let base = k * FRAME_PARAMS;
        let mut local = params[base..base + FRAME_PARAMS].to_vec();
        let f_base = eval.local_base(k);
        let mut out = Vec::with_capacity(FRAME_PARAMS);
        for c in 0..FRAME_PARAMS {
            let xc = local[c];
            local[c] = xc + h;
            let h_plus = local[c] - xc;
            let f_plus = local_value(ctx, gates, eval, k, &local);
            let g = if config.central_difference {
                local[c] = xc - h;
                let h_minus = xc - local[c];
                let f_minus = local_value(ctx, gates, eval, k, &local);
                (f_plus - f_minus) / (h_plus + h_minus)
            } else {
                (f_plus - f_base) / h_plus
            };
            local[c] = xc;
            if !g.is_finite() {
                return Err(crate::Error::NonFinite(format!(
                    "gradient at frame {k} coordinate {c}"
                )));
            }
            out.push(g);
        }
        Ok(out)
    });
    let mut gradient = Vec::with_capacity(n * FRAME_PARAMS);
    for block in blocks {
        gradient.extend(block?);
    }
    Ok(gradient)
}

fn local_value(ctx: &Context, gates: &Gates, eval: &Evaluation, k: usize, frame: &[f64]) -> f64 {
    let t = Vector3::new(frame[0], frame[1], frame[2]);
    let mut pose = [Vector3::zeros(); JOINT_COUNT];
    for (j, aa) in pose.iter_mut().enumerate() {
        *aa = Vector3::new(frame[3 + j * 3], frame[4 + j * 3], frame[5 + j * 3]);
    }
    let body = skin_pose(ctx.template, &ctx.shaped, &t, &pose);
    eval.local_at(ctx, gates, k, &body, &t)
}

/// A stage objective with every gate frozen at construction. Exposes dense
/// evaluation (for verification against generic finite differences) and the
/// atom-local gradient the driver uses.
pub struct FrozenObjective<'a> {
    ctx: Context<'a>,
    gates: Gates,
}

impl<'a> FrozenObjective<'a> {
    /// Freezes gates at `inputs.motion`.
    pub fn new(
        inputs: &SequenceInputs<'a>,
        loss: &'a LossConfig,
        stage: Stage,
        weights: &LossWeights,
    ) -> crate::Result<Self> {
        weights.validate()?;
        let ctx = Context::new(inputs, loss)?;
        let params = pack_parameters(inputs.motion);
        let posed = ctx.skin_all(&params);
        let gates = Gates::freeze(stage, weights, &ctx, inputs.motion, &posed)?;
        Ok(Self { ctx, gates })
    }

    pub fn dimension(&self) -> usize {
        self.ctx.n * FRAME_PARAMS
    }

    /// Full objective value at `params`.
    pub fn value(&self, params: &[f64]) -> crate::Result<f64> {
        if params.len() != self.dimension() {
            return Err(crate::Error::DimensionMismatch {
                context: "frozen objective parameters",
                expected: self.dimension(),
                got: params.len(),
            });
        }
        Ok(Evaluation::compute(&self.ctx, &self.gates, params).total)
    }

    /// Atom-local finite-difference gradient at `params`.
    pub fn gradient(&self, params: &[f64], config: &OptimizerConfig) -> crate::Result<Vec<f64>> {
        config.validate()?;
        if params.len() != self.dimension() {
            return Err(crate::Error::DimensionMismatch {
                context: "frozen objective parameters",
                expected: self.dimension(),
                got: params.len(),
            });
        }
        let eval = Evaluation::compute(&self.ctx, &self.gates, params);
        frozen_gradient(&self.ctx, &self.gates, &eval, params, config)
    }

    /// Per-atom values at `params`, exposed for stencil verification:
    /// `(per-frame, per-pair, per-window)` weighted atom sums.
    pub fn atoms(&self, params: &[f64]) -> crate::Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if params.len() != self.dimension() {
            return Err(crate::Error::DimensionMismatch {
                context: "frozen objective parameters",
                expected: self.dimension(),
                got: params.len(),
            });
        }
        let eval = Evaluation::compute(&self.ctx, &self.gates, params);
        Ok((eval.frame_atoms, eval.pair_atoms, eval.window_atoms))
    }
}

/// One recorded optimizer iteration (after its Adam step).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: Stage,
    /// 1-based within the stage.
    pub iteration: usize,
    /// Frozen objective at the current iterate.
    pub total: f64,
    /// Best value seen in the stage, re-based at gate refreshes.
    pub best: f64,
    /// Weighted per-term breakdown at the current iterate.
    pub terms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub initial_total: f64,
    pub final_total: f64,
    pub iterations_run: usize,
    pub converged: bool,
}

/// Gate state at the end of the last stage, summarized for the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateSummary {
    pub stage: Stage,
    pub visible_counts: Vec<usize>,
    /// Stable flags per frame and limb; present for the annotation stage.
    pub stable_limbs: Option<Vec<[bool; 4]>>,
    /// Count of speed-gated direction windows; present for post-processing.
    pub active_direction_windows: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbortInfo {
    pub stage: Stage,
    pub iteration: usize,
    pub reason: String,
}

/// Distance between the initial and final parameter vectors, split by
/// parameter kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterDelta {
    pub translation_max: f64,
    pub translation_rms: f64,
    pub pose_max: f64,
    pub pose_rms: f64,
}

fn parameter_delta(initial: &[f64], fin: &[f64]) -> ParameterDelta {
    let n = initial.len() / FRAME_PARAMS;
    let mut t_max = 0.0f64;
    let mut t_sq = 0.0;
    let mut p_max = 0.0f64;
    let mut p_sq = 0.0;
    for k in 0..n {
        let base = k * FRAME_PARAMS;
        for c in 0..FRAME_PARAMS {
            let d = fin[base + c] - initial[base + c];
            if c < 3 {
                t_max = t_max.max(d.abs());
                t_sq += d * d;
            } else {
                p_max = p_max.max(d.abs());
                p_sq += d * d;
            }
        }
    }
    ParameterDelta {
        translation_max: t_max,
        translation_rms: (t_sq / (3 * n) as f64).sqrt(),
        pose_max: p_max,
        pose_rms: (p_sq / ((FRAME_PARAMS - 3) * n) as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub stages: Vec<StageRecord>,
    pub iterations: Vec<IterationRecord>,
    pub final_gates: GateSummary,
    pub parameter_delta: ParameterDelta,
    /// Set when a stage stopped on divergence or a non-finite value; later
    /// stages are skipped and the best parameters so far are returned.
    pub aborted: Option<AbortInfo>,
    /// Wall-clock seconds. Excluded from serialization so that artifacts
    /// from identical runs stay byte-identical.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

fn gate_summary(gates: &Gates) -> GateSummary {
    GateSummary {
        stage: gates.stage,
        visible_counts: gates.visible.iter().map(Vec::len).collect(),
        stable_limbs: match gates.stage {
            Stage::Annotate => Some(gates.stable.clone()),
            Stage::Postprocess => None,
        },
        active_direction_windows: match gates.stage {
            Stage::Annotate => None,
            Stage::Postprocess => Some(gates.dir_active.iter().filter(|&&a| a).count()),
        },
    }
}

/// Runs the stage schedule on `inputs.motion` and returns the best-loss
/// parameters with the full optimization trace.
///
/// Shape coefficients are held fixed; each stage optimizes all frame
/// translations and joint rotations jointly under its own weights. A stage
/// ends early when the best loss stops improving across a refresh window or
/// drops to the absolute tolerance. Divergence past ten times the stage's
/// initial loss, or any non-finite value, aborts the schedule: the report
/// records the abort and the best parameters found so far are returned.
pub fn refine_sequence(
    inputs: &SequenceInputs,
    loss: &LossConfig,
    config: &OptimizerConfig,
) -> crate::Result<(MotionSequence, OptimizationReport)> {
    config.validate()?;
    let started = Instant::now();
    let ctx = Context::new(inputs, loss)?;
    let mut params = pack_parameters(inputs.motion);
    let initial_params = params.clone();

    let mut stages = Vec::new();
    let mut iterations = Vec::new();
    let mut aborted: Option<AbortInfo> = None;
    let mut final_gates: Option<GateSummary> = None;

    for plan in &config.schedule {
        let motion = unpack_parameters(&params, inputs.motion)?;
        let posed = ctx.skin_all(&params);
        let mut gates = Gates::freeze(plan.stage, &plan.weights, &ctx, &motion, &posed)?;
        let mut eval = Evaluation::compute(&ctx, &gates, &params);
        if !eval.total.is_finite() {
            return Err(crate::Error::NonFinite(format!(
                "initial {} objective",
                plan.stage
            )));
        }

        let stage_initial = eval.total;
        let divergence_cap = 10.0 * stage_initial.max(config.tolerance);
        let mut best_total = eval.total;
        let mut best_params = params.clone();
        let mut window_best = best_total;
        let mut adam = AdamState::new(params.len());
        let mut iterations_run = 0;
        let mut converged = best_total <= config.tolerance;

        while !converged && aborted.is_none() && iterations_run < plan.max_iters {
            // Refresh gates at window boundaries; the check compares the best
            // of this window against the best of the previous one, both under
            // a single (the newer) gate set.
            if iterations_run > 0 && iterations_run % config.gate_refresh_period == 0 {
                let motion = unpack_parameters(&params, inputs.motion)?;
                gates = Gates::freeze(plan.stage, &plan.weights, &ctx, &motion, &eval.posed)?;
                eval = Evaluation::compute(&ctx, &gates, &params);
                let best_eval = Evaluation::compute(&ctx, &gates, &best_params);
                if eval.total <= best_eval.total {
                    best_total = eval.total;
                    best_params = params.clone();
                } else {
                    best_total = best_eval.total;
                }
                if !best_total.is_finite() {
                    aborted = Some(AbortInfo {
                        stage: plan.stage,
                        iteration: iterations_run,
                        reason: "non-finite loss after gate refresh".into(),
                    });
                    break;
                }
                if window_best - best_total <= config.tolerance * window_best.max(f64::MIN_POSITIVE)
                {
                    converged = true;
                    break;
                }
                window_best = best_total;
            }

            let grad = match frozen_gradient(&ctx, &gates, &eval, &params, config) {
                Ok(g) => g,
                Err(crate::Error::NonFinite(what)) => {
                    aborted = Some(AbortInfo {
                        stage: plan.stage,
                        iteration: iterations_run + 1,
                        reason: format!("non-finite {what}"),
                    });
                    break;
                }
                Err(other) => return Err(other),
            };
            adam_step(&mut params, &mut adam, &grad, config)?;
            eval = Evaluation::compute(&ctx, &gates, &params);
            iterations_run += 1;

            if !eval.total.is_finite() {
                aborted = Some(AbortInfo {
                    stage: plan.stage,
                    iteration: iterations_run,
                    reason: "non-finite loss".into(),
                });
                break;
            }
            if eval.total < best_total {
                best_total = eval.total;
                best_params = params.clone();
            }
            iterations.push(IterationRecord {
                stage: plan.stage,
                iteration: iterations_run,
                total: eval.total,
                best: best_total,
                terms: eval.terms.clone(),
            });
            if eval.total > divergence_cap {
                aborted = Some(AbortInfo {
                    stage: plan.stage,
                    iteration: iterations_run,
                    reason: format!(
                        "diverged: loss {:.6e} exceeds 10x the stage's initial {:.6e}",
                        eval.total, stage_initial
                    ),
                });
                break;
            }
            if best_total <= config.tolerance {
                converged = true;
            }
        }

        params = best_params;
        stages.push(StageRecord {
            stage: plan.stage,
            initial_total: stage_initial,
            final_total: best_total,
            iterations_run,
            converged,
        });
        final_gates = Some(gate_summary(&gates));
        if aborted.is_some() {
            break;
        }
    }

    let refined = unpack_parameters(&params, inputs.motion)?;
    let report = OptimizationReport {
        stages,
        iterations,
        final_gates: final_gates.expect("schedule validated nonempty stages"),
        parameter_delta: parameter_delta(&initial_params, &params),
        aborted,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((refined, report))
}
