//! Signed clearance of body points against a scene mesh.

use super::kdtree::NeighborIndex;
use crate::mesh::SceneMesh;
use nalgebra::Vector3;

/// Nearest-vertex index over a scene mesh, for clearance and contact queries.
///
/// The clearance of a query point is measured against the plane of the
/// nearest mesh vertex: positive on the outside (along the vertex normal),
/// negative inside the surface.
pub struct MeshNeighborhood {
    index: NeighborIndex,
    normals: Vec<Vector3<f64>>,
}

impl MeshNeighborhood {
    pub fn new(mesh: &SceneMesh) -> crate::Result<Self> {
        if mesh.vertices.len() != mesh.normals.len() {
            return Err(crate::Error::DimensionMismatch {
                context: "mesh normals".into(),
                expected: mesh.vertices.len(),
                got: mesh.normals.len(),
            });
        }
        Ok(Self {
            index: NeighborIndex::build(&mesh.vertices)?,
            normals: mesh.normals.clone(),
        })
    }

    /// Index of and squared distance to the nearest mesh vertex.
    pub fn nearest_vertex(&self, p: &Vector3<f64>) -> (usize, f64) {
        self.index.nearest(p)
    }

    /// Signed clearance; negative values mean `p` is inside the surface.
    pub fn clearance(&self, p: &Vector3<f64>) -> f64 {
        let (q, _) = self.index.nearest(p);
        (p - self.index.point(q)).dot(&self.normals[q])
    }

    /// Mesh vertex indices within `radius` of `p`, sorted by index.
    pub fn within_radius(&self, p: &Vector3<f64>, radius: f64) -> Vec<usize> {
        self.index.within_radius(p, radius)
    }

    pub fn vertex(&self, i: usize) -> Vector3<f64> {
        *self.index.point(i)
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }
}
