//! Triangulated scene meshes with per-vertex normals.

use nalgebra::Vector3;
use crate::frame::CoordinateFrame;

/// A triangle mesh of the static environment.
///
/// Normals are unit length per vertex and point out of the surface toward
/// free space; penetration queries rely on that orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub frame: CoordinateFrame,
}

impl SceneMesh {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        frame: CoordinateFrame,
    ) -> crate::Result<Self> {
        let mesh = Self {
            vertices,
            normals,
            faces,
            frame,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.vertices.is_empty() {
            return Err(crate::Error::validation("vertices", "mesh has no vertices"));
        }
        if self.normals.len() != self.vertices.len() {
            return Err(crate::Error::DimensionMismatch {
                context: "mesh normals vs vertices",
                expected: self.vertices.len(),
                got: self.normals.len(),
            });
        }
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(crate::Error::validation(
                    format!("vertices[{i}]"),
                    "non-finite coordinate",
                ));
            }
        }
        for (i, n) in self.normals.iter().enumerate() {
            if !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > 1e-6 {
                return Err(crate::Error::validation(
                    format!("normals[{i}]"),
                    format!("normal must be unit length, |n| = {}", n.norm()),
                ));
            }
        }
        for (f, face) in self.faces.iter().enumerate() {
            for &idx in face {
                if idx >= self.vertices.len() {
                    return Err(crate::Error::IndexOutOfRange {
                        what: "face vertex",
                        index: idx,
                        len: self.vertices.len(),
                    });
                }
            }
            let [a, b, c] = *face;
            let area2 = (self.vertices[b] - self.vertices[a])
                .cross(&(self.vertices[c] - self.vertices[a]))
                .norm();
            if area2 < 1e-14 {
                return Err(crate::Error::validation(
                    format!("faces[{f}]"),
                    "degenerate zero-area face",
                ));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    /// Appends another mesh (same frame), reindexing its faces.
    pub fn merge(&mut self, other: &SceneMesh) -> crate::Result<()> {
        crate::frame::expect_frame("mesh merge", self.frame, other.frame)?;
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.normals.extend_from_slice(&other.normals);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        Ok(())
    }
}
