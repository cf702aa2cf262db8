//! 3D convex hulls by the quickhull algorithm.
//!
//! Faces are kept in a flat arena with tombstones; adjacency lives in a map
//! from directed edge to owning face, which makes the horizon walk a BFS over
//! reversed edges. All candidate bookkeeping is index-ordered, so the result
//! is deterministic for a given input.

use nalgebra::Vector3;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct ConvexHull {
    /// Sorted indices of input points that lie on the hull.
    pub vertex_indices: Vec<usize>,
    /// Outward-oriented triangles, indices into the input slice.
    pub faces: Vec<[usize; 3]>,
}

impl ConvexHull {
    /// Largest signed distance of any point to its nearest face plane;
    /// non-positive means every point is inside or on the hull.
    pub fn max_outside_distance(&self, points: &[Vector3<f64>]) -> f64 {
        let planes: Vec<(Vector3<f64>, f64)> = self
            .faces
            .iter()
            .map(|f| {
                let n = plane_normal(&points[f[0]], &points[f[1]], &points[f[2]]);
                (n, n.dot(&points[f[0]]))
            })
            .collect();
        let mut worst = f64::NEG_INFINITY;
        for p in points {
            let d = planes
                .iter()
                .map(|(n, off)| n.dot(p) - off)
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
        worst
    }
}

fn plane_normal(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Vector3<f64> {
    (b - a).cross(&(c - a)).normalize()
}

struct Face {
    verts: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn signed(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// The outside point furthest from the plane, lowest index on ties.
    fn furthest(&self, points: &[Vector3<f64>]) -> usize {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for &i in &self.outside {
            let d = self.signed(&points[i]);
            if d > best.0 || (d == best.0 && i < best.1) {
                best = (d, i);
            }
        }
        best.1
    }
}

fn edge_key(a: usize, b: usize) -> u64 {
    ((a as u64) << 32) | b as u64
}

/// Convex hull of at least four non-coplanar points.
///
/// Coincident, collinear, or coplanar input (within a scale-relative
/// tolerance) is rejected as degenerate.
pub fn convex_hull_3d(points: &[Vector3<f64>]) -> crate::Result<ConvexHull> {
    if points.len() < 4 {
        return Err(crate::Error::Degenerate(format!(
            "convex hull needs at least 4 points, got {}",
            points.len()
        )));
    }
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !scale.is_finite() {
        return Err(crate::Error::NonFinite("hull input".into()));
    }
    let eps = (scale * 1e-12).max(1e-300);

    let (i0, i1, i2, i3, interior) = initial_simplex(points, eps)?;

    let mut faces: Vec<Face> = Vec::new();
    let mut edges: HashMap<u64, usize> = HashMap::new();

    let add_face = |faces: &mut Vec<Face>,
                        edges: &mut HashMap<u64, usize>,
                        verts: [usize; 3]|
     -> crate::Result<usize> {
        let [a, b, c] = verts;
        let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
        if n.norm() <= eps * eps {
            return Err(crate::Error::Degenerate(
                "hull update produced a zero-area face".into(),
            ));
        }
        let n = n.normalize();
        let offset = n.dot(&points[a]);
        // Faces must face away from the simplex interior.
        let (verts, n, offset) = if n.dot(&interior) - offset > 0.0 {
            ([a, c, b], -n, -offset)
        } else {
            (verts, n, offset)
        };
        let id = faces.len();
        faces.push(Face {
            verts,
            normal: n,
            offset,
            outside: Vec::new(),
            alive: true,
        });
        for k in 0..3 {
            let (u, v) = (verts[k], verts[(k + 1) % 3]);
            if edges.insert(edge_key(u, v), id).is_some() {
                return Err(crate::Error::Degenerate(
                    "inconsistent hull topology (duplicate directed edge)".into(),
                ));
            }
        }
        Ok(id)
    };

    for verts in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        add_face(&mut faces, &mut edges, verts)?;
    }

    // Initial partition of candidates to faces.
    for i in 0..points.len() {
        if i == i0 || i == i1 || i == i2 || i == i3 {
            continue;
        }
        for f in 0..faces.len() {
            if faces[f].signed(&points[i]) > eps {
                faces[f].outside.push(i);
                break;
            }
        }
    }

    let mut pending: Vec<usize> = (0..faces.len()).collect();
    let mut insertions = 0usize;
    while let Some(fid) = pending.pop() {
        if !faces[fid].alive || faces[fid].outside.is_empty() {
            continue;
        }
        insertions += 1;
        if insertions > points.len() + 8 {
            return Err(crate::Error::Degenerate(
                "hull construction did not terminate; input is numerically ill-conditioned".into(),
            ));
        }
        let apex = faces[fid].furthest(points);
        let apex_p = points[apex];

        // Flood fill the faces the apex can see.
        let mut visible = vec![fid];
        let mut seen: HashMap<usize, ()> = HashMap::new();
        seen.insert(fid, ());
        let mut cursor = 0;
        while cursor < visible.len() {
            let current = visible[cursor];
            cursor += 1;
            let verts = faces[current].verts;
            for k in 0..3 {
                let (u, v) = (verts[k], verts[(k + 1) % 3]);
                if let Some(&nb) = edges.get(&edge_key(v, u)) {
                    if faces[nb].alive
                        && !seen.contains_key(&nb)
                        && faces[nb].signed(&apex_p) > eps
                    {
                        seen.insert(nb, ());
                        visible.push(nb);
                    }
                }
            }
        }

        // Horizon: directed edges of visible faces whose twin face survives.
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for &vf in &visible {
            let verts = faces[vf].verts;
            for k in 0..3 {
                let (u, v) = (verts[k], verts[(k + 1) % 3]);
                let nb = edges.get(&edge_key(v, u)).copied();
                match nb {
                    Some(nb) if seen.contains_key(&nb) => {}
                    _ => horizon.push((u, v)),
                }
            }
        }

        // Retire visible faces and collect their stranded candidates.
        let mut orphans: Vec<usize> = Vec::new();
        for &vf in &visible {
            faces[vf].alive = false;
            let verts = faces[vf].verts;
            for k in 0..3 {
                edges.remove(&edge_key(verts[k], verts[(k + 1) % 3]));
            }
            orphans.extend(faces[vf].outside.drain(..));
        }

        let mut created: Vec<usize> = Vec::new();
        for &(u, v) in &horizon {
            let id = add_face(&mut faces, &mut edges, [u, v, apex])?;
            if faces[id].signed(&apex_p) > eps {
                return Err(crate::Error::Degenerate(
                    "hull update produced an inverted face".into(),
                ));
            }
            created.push(id);
        }

        orphans.sort_unstable();
        for &i in &orphans {
            if i == apex {
                continue;
            }
            for &nf in &created {
                if faces[nf].signed(&points[i]) > eps {
                    faces[nf].outside.push(i);
                    break;
                }
            }
        }
        for &nf in &created {
            if !faces[nf].outside.is_empty() {
                pending.push(nf);
            }
        }
    }

    let mut out_faces = Vec::new();
    let mut verts: Vec<usize> = Vec::new();
    for f in &faces {
        if f.alive {
            out_faces.push(f.verts);
            verts.extend_from_slice(&f.verts);
        }
    }
    verts.sort_unstable();
    verts.dedup();
    Ok(ConvexHull {
        vertex_indices: verts,
        faces: out_faces,
    })
}

/// Extreme points spanning a non-degenerate tetrahedron, plus its centroid.
fn initial_simplex(
    points: &[Vector3<f64>],
    eps: f64,
) -> crate::Result<(usize, usize, usize, usize, Vector3<f64>)> {
    let mut best_pair = (0usize, 0usize);
    let mut best_span = -1.0;
    for axis in 0..3 {
        let mut lo = 0usize;
        let mut hi = 0usize;
        for (i, p) in points.iter().enumerate() {
            if p[axis] < points[lo][axis] {
                lo = i;
            }
            if p[axis] > points[hi][axis] {
                hi = i;
            }
        }
        let span = points[hi][axis] - points[lo][axis];
        if span > best_span {
            best_span = span;
            best_pair = (lo, hi);
        }
    }
    let (i0, i1) = best_pair;
    if (points[i1] - points[i0]).norm() <= eps {
        return Err(crate::Error::Degenerate(
            "all points coincide; hull is undefined".into(),
        ));
    }

    let dir = (points[i1] - points[i0]).normalize();
    let mut i2 = usize::MAX;
    let mut best = eps;
    for (i, p) in points.iter().enumerate() {
        let off = p - points[i0];
        let d = (off - dir * off.dot(&dir)).norm();
        if d > best {
            best = d;
            i2 = i;
        }
    }
    if i2 == usize::MAX {
        return Err(crate::Error::Degenerate(
            "points are collinear; hull is flat".into(),
        ));
    }

    let n = (points[i1] - points[i0])
        .cross(&(points[i2] - points[i0]))
        .normalize();
    let mut i3 = usize::MAX;
    let mut best = eps;
    for (i, p) in points.iter().enumerate() {
        let d = (p - points[i0]).dot(&n).abs();
        if d > best {
            best = d;
            i3 = i;
        }
    }
    if i3 == usize::MAX {
        return Err(crate::Error::Degenerate(
            "points are coplanar; hull is flat".into(),
        ));
    }

    let interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    Ok((i0, i1, i2, i3, interior))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tetrahedron_is_its_own_hull() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let hull = convex_hull_3d(&pts).unwrap();
        assert_eq!(hull.vertex_indices, vec![0, 1, 2, 3]);
        assert_eq!(hull.faces.len(), 4);
        assert!(hull.max_outside_distance(&pts) <= 1e-9);
    }

    #[test]
    fn interior_points_are_excluded() {
        let mut pts = vec![
            Vector3::new(-1.0, -1.0, -1.0),
            Vector3::new(1.0, -1.0, -1.0),
            Vector3::new(-1.0, 1.0, -1.0),
            Vector3::new(1.0, 1.0, -1.0),
            Vector3::new(-1.0, -1.0, 1.0),
            Vector3::new(1.0, -1.0, 1.0),
            Vector3::new(-1.0, 1.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            pts.push(Vector3::new(
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
            ));
        }
        let hull = convex_hull_3d(&pts).unwrap();
        assert_eq!(hull.vertex_indices, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        // Euler: 8 cube corners triangulated into 12 faces.
        assert_eq!(hull.faces.len(), 12);
        assert!(hull.max_outside_distance(&pts) <= 1e-9);
    }

    #[test]
    fn random_clouds_are_contained_and_faces_point_outward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [4usize, 10, 100, 1000] {
            let pts: Vec<Vector3<f64>> = (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                    )
                })
                .collect();
            let hull = match convex_hull_3d(&pts) {
                Ok(h) => h,
                // Tiny random sets can be nearly flat.
                Err(_) if n == 4 => continue,
                Err(e) => panic!("hull failed on n={n}: {e}"),
            };
            assert!(hull.max_outside_distance(&pts) <= 1e-9);
            let centroid: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / n as f64;
            for f in &hull.faces {
                let normal = plane_normal(&pts[f[0]], &pts[f[1]], &pts[f[2]]);
                assert!(normal.dot(&(pts[f[0]] - centroid)) > 0.0, "face not outward");
            }
        }
    }

    #[test]
    fn degenerate_inputs_error() {
        let coincident = vec![Vector3::new(1.0, 1.0, 1.0); 5];
        assert!(convex_hull_3d(&coincident).is_err());
        let collinear: Vec<Vector3<f64>> =
            (0..6).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(convex_hull_3d(&collinear).is_err());
        let coplanar: Vec<Vector3<f64>> = (0..8)
            .map(|i| Vector3::new((i % 3) as f64, (i / 3) as f64, 0.5))
            .collect();
        assert!(convex_hull_3d(&coplanar).is_err());
        assert!(convex_hull_3d(&coincident[..3]).is_err());
    }

    #[test]
    fn duplicated_hull_corners_keep_one_representative() {
        let mut pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        pts.push(pts[1]);
        pts.push(pts[3]);
        let hull = convex_hull_3d(&pts).unwrap();
        assert_eq!(hull.vertex_indices.len(), 4);
        assert!(hull.max_outside_distance(&pts) <= 1e-12);
    }
}
