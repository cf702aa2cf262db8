//! Exact nearest-neighbour index over 3D points.
//!
//! An axis-aligned splitting tree built by median partition on the widest
//! axis. Queries return exactly what a linear scan would: the squared
//! distance is computed with the same expression, and ties are broken toward
//! the lowest point index, so the tree never prunes a subtree that could
//! contain an equal-distance point with a smaller index.

use nalgebra::Vector3;

struct Node {
    /// Index into the original point slice.
    point: usize,
    axis: usize,
    left: i32,
    right: i32,
}

pub struct NeighborIndex {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: i32,
}

fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl NeighborIndex {
    pub fn build(points: &[Vector3<f64>]) -> crate::Result<Self> {
        if points.is_empty() {
            return Err(crate::Error::Degenerate("cannot index an empty point set".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(crate::Error::validation(
                    format!("points[{i}]"),
                    "non-finite coordinate",
                ));
            }
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_recursive(points, &mut order, &mut nodes);
        Ok(Self {
            points: points.to_vec(),
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vector3<f64> {
        &self.points[i]
    }

    /// The exact nearest point to `q`: `(index, squared distance)`. Among
    /// equidistant points the lowest index wins.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        best
    }

    fn search(&self, node: i32, q: &Vector3<f64>, best: &mut (usize, f64)) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point];
        let d2 = dist2(q, p);
        if d2 < best.1 || (d2 == best.1 && n.point < best.0) {
            *best = (n.point, d2);
        }
        let diff = q[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, q, best);
        // An equal plane distance can still hide an equidistant point with a
        // lower index, so only prune on strict excess.
        if diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }

    /// Indices of all points within `radius` of `q` (inclusive), ascending.
    pub fn within_radius(&self, q: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_search(self.root, q, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_search(&self, node: i32, q: &Vector3<f64>, r2: f64, out: &mut Vec<usize>) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point];
        if dist2(q, p) <= r2 {
            out.push(n.point);
        }
        let diff = q[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.radius_search(near, q, r2, out);
        if diff * diff <= r2 {
            self.radius_search(far, q, r2, out);
        }
    }
}

fn build_recursive(points: &[Vector3<f64>], order: &mut [usize], nodes: &mut Vec<Node>) -> i32 {
    if order.is_empty() {
        return -1;
    }
    // Split on the widest axis of this subset.
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let mut axis = 0;
    for a in 1..3 {
        if hi[a] - lo[a] > hi[axis] - lo[axis] {
            axis = a;
        }
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let point = order[mid];
    let id = nodes.len();
    nodes.push(Node {
        point,
        axis,
        left: -1,
        right: -1,
    });
    let (left_slice, right_slice) = order.split_at_mut(mid);
    let left = build_recursive(points, left_slice, nodes);
    let right = build_recursive(points, &mut right_slice[1..], nodes);
    nodes[id].left = left;
    nodes[id].right = right;
    id as i32
}

/// Reference implementation used by the oracle tests: linear scan with the
/// same distance expression and tie rule.
pub fn nearest_linear(points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = dist2(q, p);
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            best = (i, d2);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-scale..scale),
                    rng.gen_range(-scale..scale),
                    rng.gen_range(-scale..scale),
                )
            })
            .collect()
    }

    #[test]
    fn matches_linear_scan_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for round in 0..20 {
            let n = 1 + (round * 37) % 500;
            let pts = random_points(&mut rng, n, 2.0);
            let index = NeighborIndex::build(&pts).unwrap();
            for _ in 0..50 {
                let q = Vector3::new(
                    rng.gen_range(-2.5..2.5),
                    rng.gen_range(-2.5..2.5),
                    rng.gen_range(-2.5..2.5),
                );
                assert_eq!(index.nearest(&q), nearest_linear(&pts, &q));
            }
        }
    }

    #[test]
    fn ties_prefer_lowest_index() {
        // Two points symmetric about the query.
        let pts = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
        ];
        let index = NeighborIndex::build(&pts).unwrap();
        let (i, d2) = index.nearest(&Vector3::zeros());
        assert_eq!((i, d2), (0, 1.0));
        // Duplicated coordinates as well.
        let (i, _) = index.nearest(&Vector3::new(1.1, 0.0, 0.0));
        assert_eq!(i, 0);
    }

    #[test]
    fn within_radius_is_inclusive_and_sorted() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.5, 0.0, 0.0),
        ];
        let index = NeighborIndex::build(&pts).unwrap();
        assert_eq!(index.within_radius(&Vector3::zeros(), 1.0), vec![0, 1, 3]);
        assert!(index.within_radius(&Vector3::new(10.0, 0.0, 0.0), 0.5).is_empty());
    }

    #[test]
    fn rejects_empty_input() {
        assert!(NeighborIndex::build(&[]).is_err());
    }
}
