//! JSON storage documents.
//!
//! Core types stay free of serialization concerns; these documents define
//! the explicit on-disk schema and convert through the core constructors so
//! every load passes full validation.

use super::io_err;
use crate::body::{BodyTemplate, VertexGroups};
use crate::frame::CoordinateFrame;
use crate::motion::{FramePose, MotionSequence, JOINT_COUNT, SHAPE_COUNT};
use crate::transform::RigidTransform;
use nalgebra::{Matrix4, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Serialize any document as pretty-printed JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| crate::Error::Parse {
        path: path.display().to_string(),
        location: "serialization".into(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Load a JSON document, reporting the line and column of any syntax or
/// schema violation.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> crate::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| crate::Error::Parse {
        path: path.display().to_string(),
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

fn vec3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionDoc {
    frame: CoordinateFrame,
    frame_rate: f64,
    betas: Vec<f64>,
    translations: Vec<[f64; 3]>,
    poses: Vec<Vec<[f64; 3]>>,
}

pub fn save_motion(path: &Path, motion: &MotionSequence) -> crate::Result<()> {
    let doc = MotionDoc {
        frame: motion.frame,
        frame_rate: motion.frame_rate,
        betas: motion.betas.to_vec(),
        translations: motion.translations.iter().map(arr3).collect(),
        poses: motion
            .poses
            .iter()
            .map(|frame| frame.iter().map(arr3).collect())
            .collect(),
    };
    save_json(path, &doc)
}

pub fn load_motion(path: &Path) -> crate::Result<MotionSequence> {
    let doc: MotionDoc = load_json(path)?;
    let schema = |field: String, message: String| crate::Error::Parse {
        path: path.display().to_string(),
        location: field,
        message,
    };
    if doc.betas.len() != SHAPE_COUNT {
        return Err(schema(
            "betas".into(),
            format!("expected {SHAPE_COUNT} shape coefficients, got {}", doc.betas.len()),
        ));
    }
    let mut betas = [0.0; SHAPE_COUNT];
    betas.copy_from_slice(&doc.betas);
    let mut poses: Vec<FramePose> = Vec::with_capacity(doc.poses.len());
    for (k, frame) in doc.poses.iter().enumerate() {
        if frame.len() != JOINT_COUNT {
            return Err(schema(
                format!("poses[{k}]"),
                format!("expected {JOINT_COUNT} joint rotations, got {}", frame.len()),
            ));
        }
        let mut fp: FramePose = [Vector3::zeros(); JOINT_COUNT];
        for (j, aa) in frame.iter().enumerate() {
            fp[j] = vec3(*aa);
        }
        poses.push(fp);
    }
    MotionSequence::new(
        doc.translations.into_iter().map(vec3).collect(),
        poses,
        betas,
        doc.frame_rate,
        doc.frame,
    )
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformDoc {
    source_frame: CoordinateFrame,
    target_frame: CoordinateFrame,
    /// Row-major homogeneous matrix.
    matrix: [[f64; 4]; 4],
}

impl TransformDoc {
    fn from_transform(t: &RigidTransform) -> Self {
        let m = t.matrix();
        let mut rows = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                rows[r][c] = m[(r, c)];
            }
        }
        Self {
            source_frame: t.source_frame(),
            target_frame: t.target_frame(),
            matrix: rows,
        }
    }

    fn into_transform(self) -> crate::Result<RigidTransform> {
        let mut m = Matrix4::zeros();
        for r in 0..4 {
            for c in 0..4 {
                m[(r, c)] = self.matrix[r][c];
            }
        }
        RigidTransform::from_matrix(m, self.source_frame, self.target_frame)
    }
}

pub fn save_transform(path: &Path, transform: &RigidTransform) -> crate::Result<()> {
    save_json(path, &TransformDoc::from_transform(transform))
}

pub fn load_transform(path: &Path) -> crate::Result<RigidTransform> {
    load_json::<TransformDoc>(path)?.into_transform()
}

/// Timestamped sensor poses, one per scan, mapping sensor frame to world.
#[derive(Debug, Clone)]
pub struct SensorTrajectory {
    pub timestamps: Vec<f64>,
    pub poses: Vec<RigidTransform>,
}

impl SensorTrajectory {
    pub fn new(timestamps: Vec<f64>, poses: Vec<RigidTransform>) -> crate::Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(crate::Error::DimensionMismatch {
                context: "trajectory timestamps vs poses",
                expected: poses.len(),
                got: timestamps.len(),
            });
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(crate::Error::validation(
                "timestamps",
                "must be strictly increasing",
            ));
        }
        Ok(Self { timestamps, poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryDoc {
    timestamps: Vec<f64>,
    poses: Vec<TransformDoc>,
}

pub fn save_trajectory(path: &Path, trajectory: &SensorTrajectory) -> crate::Result<()> {
    let doc = TrajectoryDoc {
        timestamps: trajectory.timestamps.clone(),
        poses: trajectory.poses.iter().map(TransformDoc::from_transform).collect(),
    };
    save_json(path, &doc)
}

pub fn load_trajectory(path: &Path) -> crate::Result<SensorTrajectory> {
    let doc: TrajectoryDoc = load_json(path)?;
    let poses = doc
        .poses
        .into_iter()
        .map(TransformDoc::into_transform)
        .collect::<crate::Result<Vec<_>>>()?;
    SensorTrajectory::new(doc.timestamps, poses)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupsDoc {
    left_foot: Vec<usize>,
    right_foot: Vec<usize>,
    left_hand: Vec<usize>,
    right_hand: Vec<usize>,
    torso: Vec<usize>,
    limbs: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateDoc {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    /// Parent joint per joint; -1 marks the root.
    parents: Vec<i64>,
    skin_weights: Vec<Vec<(usize, f64)>>,
    shape_basis: Vec<Vec<[f64; 3]>>,
    joint_regressor: Vec<Vec<(usize, f64)>>,
    groups: GroupsDoc,
    stable_joints: Vec<usize>,
}

pub fn save_template(path: &Path, template: &BodyTemplate) -> crate::Result<()> {
    let doc = TemplateDoc {
        vertices: template.rest_vertices.iter().map(arr3).collect(),
        faces: template.faces.clone(),
        parents: template
            .parents
            .iter()
            .map(|p| p.map_or(-1, |v| v as i64))
            .collect(),
        skin_weights: template.skin_weights.clone(),
        shape_basis: template
            .shape_basis
            .iter()
            .map(|offsets| offsets.iter().map(arr3).collect())
            .collect(),
        joint_regressor: template.joint_regressor.clone(),
        groups: GroupsDoc {
            left_foot: template.groups.left_foot.clone(),
            right_foot: template.groups.right_foot.clone(),
            left_hand: template.groups.left_hand.clone(),
            right_hand: template.groups.right_hand.clone(),
            torso: template.groups.torso.clone(),
            limbs: template.groups.limbs.clone(),
        },
        stable_joints: template.stable_joints.clone(),
    };
    save_json(path, &doc)
}

pub fn load_template(path: &Path) -> crate::Result<BodyTemplate> {
    let doc: TemplateDoc = load_json(path)?;
    let schema = |field: String, message: String| crate::Error::Parse {
        path: path.display().to_string(),
        location: field,
        message,
    };
    if doc.parents.len() != JOINT_COUNT {
        return Err(schema(
            "parents".into(),
            format!("expected {JOINT_COUNT} entries, got {}", doc.parents.len()),
        ));
    }
    let mut parents = [None; JOINT_COUNT];
    for (j, &p) in doc.parents.iter().enumerate() {
        parents[j] = match p {
            -1 => None,
            p if p >= 0 && (p as usize) < JOINT_COUNT => Some(p as usize),
            p => {
                return Err(schema(
                    format!("parents[{j}]"),
                    format!("parent {p} is not -1 or a joint index"),
                ))
            }
        };
    }
    let mut shape_basis = Vec::with_capacity(doc.shape_basis.len());
    for (i, offsets) in doc.shape_basis.iter().enumerate() {
        if offsets.len() != SHAPE_COUNT {
            return Err(schema(
                format!("shape_basis[{i}]"),
                format!("expected {SHAPE_COUNT} offsets, got {}", offsets.len()),
            ));
        }
        let mut row = [Vector3::zeros(); SHAPE_COUNT];
        for (s, off) in offsets.iter().enumerate() {
            row[s] = vec3(*off);
        }
        shape_basis.push(row);
    }
    let template = BodyTemplate {
        rest_vertices: doc.vertices.into_iter().map(vec3).collect(),
        faces: doc.faces,
        parents,
        skin_weights: doc.skin_weights,
        shape_basis,
        joint_regressor: doc.joint_regressor,
        groups: VertexGroups {
            left_foot: doc.groups.left_foot,
            right_foot: doc.groups.right_foot,
            left_hand: doc.groups.left_hand,
            right_hand: doc.groups.right_hand,
            torso: doc.groups.torso,
            limbs: doc.groups.limbs,
        },
        stable_joints: doc.stable_joints,
    };
    template.validate()?;
    Ok(template)
}
