//! Objective terms for motion refinement.
//!
//! Two optimization stages share this module. The annotation stage fits the
//! full-body estimate against clouds and scene (contact, sliding, root and
//! joint smoothness, visible-surface Chamfer, gated proximity, penetration).
//! The post-processing stage polishes with part-weighted cloud fitting,
//! velocity-direction smoothing, and end-effector refinement.
//!
//! Cloud-driven terms evaluate on the sensor-visible subset of body vertices
//! (hidden point removal from the sensor position): a partial scan carries no
//! evidence about occluded vertices, and pulling those toward the cloud would
//! bias the fit.

mod stability;
mod terms;

pub use stability::{contact_loss, detect_stable_limbs, sliding_loss, StabilityRecord};
pub use terms::{
    cloud_chamfer_loss, direction_smooth_loss, end_effector_fit_loss, joint_smooth_loss,
    penetration_loss, proximity_loss, translation_smooth_loss, visible_vertices,
    weighted_fit_loss, PartCode, PartMask,
};

use crate::body::{skin_all, BodyTemplate};
use crate::cloud::PointCloudFrame;
use crate::geometry::{hpr, IcpConfig, MeshNeighborhood, NeighborIndex};
use crate::mesh::SceneMesh;
use crate::motion::MotionSequence;
use crate::parallel;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-part multipliers for the part-weighted cloud fit. End effectors get
/// the largest pull since they carry the contact semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartWeights {
    pub torso: f64,
    pub limbs: f64,
    pub feet: f64,
    pub hands: f64,
}

impl Default for PartWeights {
    fn default() -> Self {
        Self {
            torso: 1.0,
            limbs: 2.0,
            feet: 3.0,
            hands: 3.0,
        }
    }
}

/// Thresholds, gates, and sub-algorithm settings shared by all loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// A limb moving less than this per frame can be stable, metres.
    pub stability_threshold: f64,
    /// Scene vertices within this radius of a stable limb's centroid form
    /// its contact environment, metres.
    pub contact_radius: f64,
    /// Root speeds at or below this have no meaningful direction, m/frame.
    pub speed_gate: f64,
    /// Torso vertices farther than this from the cloud are ignored by the
    /// gated proximity term, metres.
    pub torso_gate: f64,
    /// Same gate for limb vertices; must not exceed `torso_gate`.
    pub limb_gate: f64,
    pub torso_weight: f64,
    pub limb_weight: f64,
    /// Hidden-point-removal exponent for the visibility sphere radius.
    pub visibility_gamma: f64,
    pub icp: IcpConfig,
    /// Evaluate the visible-surface Chamfer after rigid registration to the
    /// cloud instead of in place.
    pub chamfer_registered: bool,
    pub part_weights: PartWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            stability_threshold: 0.03,
            contact_radius: 0.10,
            speed_gate: 0.02,
            torso_gate: 0.10,
            limb_gate: 0.05,
            torso_weight: 1.0,
            limb_weight: 2.0,
            visibility_gamma: 2.0,
            icp: IcpConfig::default(),
            chamfer_registered: false,
            part_weights: PartWeights::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let positives = [
            ("stability_threshold", self.stability_threshold),
            ("contact_radius", self.contact_radius),
            ("torso_gate", self.torso_gate),
            ("limb_gate", self.limb_gate),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(crate::Error::validation(name, "must be finite and positive"));
            }
        }
        let nonneg = [
            ("speed_gate", self.speed_gate),
            ("torso_weight", self.torso_weight),
            ("limb_weight", self.limb_weight),
            ("part_weights.torso", self.part_weights.torso),
            ("part_weights.limbs", self.part_weights.limbs),
            ("part_weights.feet", self.part_weights.feet),
            ("part_weights.hands", self.part_weights.hands),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(crate::Error::validation(name, "must be finite and non-negative"));
            }
        }
        if self.limb_gate > self.torso_gate {
            return Err(crate::Error::validation(
                "limb_gate",
                format!(
                    "limb gate {} must not exceed torso gate {}",
                    self.limb_gate, self.torso_gate
                ),
            ));
        }
        if !self.visibility_gamma.is_finite() {
            return Err(crate::Error::validation("visibility_gamma", "must be finite"));
        }
        Ok(())
    }
}

/// Per-term multipliers. Field names match the breakdown keys reported by
/// [`total_loss`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub contact: f64,
    pub sliding: f64,
    pub translation_smooth: f64,
    pub joint_smooth: f64,
    pub cloud_chamfer: f64,
    pub proximity: f64,
    pub penetration: f64,
    pub weighted_fit: f64,
    pub direction_smooth: f64,
    pub end_effector_fit: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            contact: 1.0,
            sliding: 1.0,
            translation_smooth: 1.0,
            joint_smooth: 1.0,
            cloud_chamfer: 1.0,
            // Proximity pulls individual visible vertices onto individual scan
            // points; at parity with the Chamfer term it pins limbs to sensor
            // noise. The small multiplier keeps only its part-weighted gating.
            proximity: 0.01,
            penetration: 1.0,
            weighted_fit: 1.0,
            direction_smooth: 1.0,
            end_effector_fit: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let fields = [
            ("contact", self.contact),
            ("sliding", self.sliding),
            ("translation_smooth", self.translation_smooth),
            ("joint_smooth", self.joint_smooth),
            ("cloud_chamfer", self.cloud_chamfer),
            ("proximity", self.proximity),
            ("penetration", self.penetration),
            ("weighted_fit", self.weighted_fit),
            ("direction_smooth", self.direction_smooth),
            ("end_effector_fit", self.end_effector_fit),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(crate::Error::validation(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Which composite objective is being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Annotate,
    Postprocess,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Annotate => write!(f, "ANNOTATE"),
            Stage::Postprocess => write!(f, "POSTPROCESS"),
        }
    }
}

/// Everything a sequence-level loss evaluation needs. All geometry must be
/// expressed in the motion's coordinate frame.
pub struct SequenceInputs<'a> {
    pub template: &'a BodyTemplate,
    pub motion: &'a MotionSequence,
    pub scene: &'a SceneMesh,
    /// Human-labelled points, one cloud per motion frame.
    pub clouds: &'a [PointCloudFrame],
    /// Sensor origin per frame, used both as the visibility viewpoint and as
    /// the sensor ego-motion trajectory.
    pub sensor_positions: &'a [Vector3<f64>],
}

impl SequenceInputs<'_> {
    pub(crate) fn validate(&self) -> crate::Result<()> {
        let n = self.motion.num_frames();
        if self.clouds.len() != n {
            return Err(crate::Error::DimensionMismatch {
                context: "clouds per frame",
                expected: n,
                got: self.clouds.len(),
            });
        }
        if self.sensor_positions.len() != n {
            return Err(crate::Error::DimensionMismatch {
                context: "sensor positions per frame",
                expected: n,
                got: self.sensor_positions.len(),
            });
        }
        crate::frame::expect_frame("scene vs motion", self.motion.frame, self.scene.frame)?;
        for cloud in self.clouds {
            crate::frame::expect_frame("cloud vs motion", self.motion.frame, cloud.frame)?;
        }
        Ok(())
    }
}

/// Weighted objective value with its exact decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    /// Weighted contributions; their ordered sum reproduces `total` exactly.
    pub terms: BTreeMap<String, f64>,
    /// Unweighted term values under the same keys.
    pub raw: BTreeMap<String, f64>,
}

impl LossReport {
    fn from_parts(parts: Vec<(&'static str, f64, f64)>) -> Self {
        let mut terms = BTreeMap::new();
        let mut raw = BTreeMap::new();
        for (key, weight, value) in parts {
            terms.insert(key.to_string(), weight * value);
            raw.insert(key.to_string(), value);
        }
        let total = terms.values().sum();
        Self { total, terms, raw }
    }
}

/// The composite objective for one stage, with a per-term breakdown.
pub fn total_loss(
    stage: Stage,
    weights: &LossWeights,
    inputs: &SequenceInputs,
    config: &LossConfig,
) -> crate::Result<LossReport> {
    weights.validate()?;
    config.validate()?;
    inputs.validate()?;
    let n = inputs.motion.num_frames();
    if n < 3 {
        return Err(crate::Error::NotEnoughFrames {
            context: "sequence loss",
            needed: 3,
            got: n,
        });
    }

    let posed = skin_all(inputs.template, inputs.motion);
    let mask = PartMask::new(&inputs.template.groups, inputs.template.num_vertices());

    // Per-frame visibility and cloud indexes, shared by every cloud term.
    let frame_data: Vec<crate::Result<(Vec<usize>, NeighborIndex)>> =
        parallel::map_indexed(n, |k| {
            let visible = hpr(
                &posed[k].vertices,
                &inputs.sensor_positions[k],
                config.visibility_gamma,
            )?;
            let index = NeighborIndex::build(&inputs.clouds[k].points)?;
            Ok((visible, index))
        });
    let mut frames = Vec::with_capacity(n);
    for (k, r) in frame_data.into_iter().enumerate() {
        frames.push(r.map_err(|e| match e {
            crate::Error::Degenerate(msg) => {
                crate::Error::Degenerate(format!("frame {k}: {msg}"))
            }
            other => other,
        })?);
    }

    let mean = |values: Vec<f64>| parallel::sum_ordered(&values) / n as f64;

    let parts = match stage {
        Stage::Annotate => {
            let stability =
                detect_stable_limbs(inputs.template, inputs.motion, inputs.scene, config)?;
            let contact = contact_loss(inputs.template, inputs.motion, inputs.scene, &stability)?;
            let sliding = sliding_loss(inputs.template, inputs.motion, &stability)?;
            let translation =
                translation_smooth_loss(inputs.motion, inputs.sensor_positions)?;
            let joints = joint_smooth_loss(inputs.template, inputs.motion)?;

            let scene_index = MeshNeighborhood::new(inputs.scene)?;
            let chamfer_frames: Vec<crate::Result<f64>> = parallel::map_indexed(n, |k| {
                let (visible, _) = &frames[k];
                let visible_points: Vec<Vector3<f64>> =
                    visible.iter().map(|&i| posed[k].vertices[i]).collect();
                cloud_chamfer_loss(
                    &visible_points,
                    &inputs.clouds[k].points,
                    config.chamfer_registered,
                    &config.icp,
                )
            });
            let chamfer = mean(chamfer_frames.into_iter().collect::<crate::Result<Vec<_>>>()?);
            let proximity = mean(parallel::map_indexed(n, |k| {
                let (visible, index) = &frames[k];
                proximity_loss(&posed[k].vertices, visible, &mask, index, config)
            }));
            let touch = mean(parallel::map_indexed(n, |k| {
                penetration_loss(&posed[k].vertices, &scene_index)
            }));

            vec![
                ("contact", weights.contact, contact),
                ("sliding", weights.sliding, sliding),
                ("translation_smooth", weights.translation_smooth, translation),
                ("joint_smooth", weights.joint_smooth, joints),
                ("cloud_chamfer", weights.cloud_chamfer, chamfer),
                ("proximity", weights.proximity, proximity),
                ("penetration", weights.penetration, touch),
            ]
        }
        Stage::Postprocess => {
            let weighted = mean(parallel::map_indexed(n, |k| {
                let (visible, index) = &frames[k];
                weighted_fit_loss(
                    &posed[k].vertices,
                    visible,
                    &mask,
                    index,
                    &config.part_weights,
                )
            }));
            let direction = direction_smooth_loss(inputs.motion, config.speed_gate)?;
            let end_effector = mean(parallel::map_indexed(n, |k| {
                let (visible, index) = &frames[k];
                end_effector_fit_loss(
                    &posed[k].vertices,
                    visible,
                    &inputs.template.groups,
                    index,
                )
            }));
            vec![
                ("weighted_fit", weights.weighted_fit, weighted),
                ("direction_smooth", weights.direction_smooth, direction),
                ("end_effector_fit", weights.end_effector_fit, end_effector),
            ]
        }
    };
    Ok(LossReport::from_parts(parts))
}
