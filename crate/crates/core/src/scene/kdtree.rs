//! Static 3D kd-tree for exact nearest-neighbour queries.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{sqrt, Vec3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Exact nearest-neighbour index over a fixed point set. Ties are broken
/// towards the smaller point index so results equal a linear scan.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
fn dist_sq(a: Vec3, b: Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl PointIndex {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, &mut nodes);
        }
        Self { points, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index and Euclidean distance of the closest point.
    pub fn nearest(&self, query: Vec3) -> Result<(usize, f64)> {
        if self.points.is_empty() {
            return Err(Error::State("nearest-neighbour query on an empty index".into()));
        }
        let mut best = (u32::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        Ok((best.0 as usize, sqrt(best.1)))
    }

    fn search(&self, node: u32, q: Vec3, best: &mut (u32, f64)) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let d = dist_sq(self.points[i as usize], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie-break.
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[Vec3], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { start: offset as u32, end: (offset + order.len()) as u32 });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] - lo[axis] == 0.0 {
        nodes.push(Node::Leaf { start: offset as u32, end: (offset + order.len()) as u32 });
        return id;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis]).then(a.cmp(&b))
    });
    let value = points[order[mid] as usize][axis];
    nodes.push(Node::Split { axis: axis as u8, value, left: 0, right: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build(points, l, offset, nodes);
    let right = build(points, r, offset + mid, nodes);
    nodes[id as usize] = Node::Split { axis: axis as u8, value, left, right };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_scan(points: &[Vec3], q: Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = dist_sq(*p, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, sqrt(best.1))
    }

    #[test]
    fn trivial_queries() {
        let idx = PointIndex::new(alloc::vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        assert_eq!(idx.nearest([4.0, 0.0, 0.0]).unwrap(), (0, 4.0));
        assert_eq!(idx.nearest([10.0, 0.0, 0.0]).unwrap(), (1, 0.0));
        assert!(PointIndex::new(Vec::new()).nearest([0.0; 3]).is_err());
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pts: Vec<Vec3> = (0..2000)
            .map(|_| core::array::from_fn(|_| rng.random_range(-2.0..2.0)))
            .collect();
        // Duplicates and a flat cluster exercise ties and zero-extent splits.
        pts.extend_from_slice(&pts[..50].to_vec());
        pts.extend((0..40).map(|i| [i as f64 * 0.1, 0.5, 0.0]));
        let idx = PointIndex::new(pts.clone());
        for _ in 0..1000 {
            let q = core::array::from_fn(|_| rng.random_range(-2.5..2.5));
            assert_eq!(idx.nearest(q).unwrap(), linear_scan(&pts, q));
        }
        for p in pts.iter().take(60) {
            assert_eq!(idx.nearest(*p).unwrap(), linear_scan(&pts, *p));
        }
    }
}
