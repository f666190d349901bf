use super::{dist2, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Immutable k-d tree answering exact nearest-neighbor queries.
///
/// Ties in distance resolve to the lowest point index, so results agree
/// with a linear scan that keeps the first minimum.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("spatial index over zero points".into()));
        }
        let mut index = SpatialIndex {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        let n = index.points.len();
        index.build(0, n);
        Ok(index)
    }

    pub fn from_cloud(cloud: &PointCloud) -> Result<Self> {
        Self::new(cloud.points_f64())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .expect("three axes");
        if hi[axis] - lo[axis] == 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Index of the nearest point and its Euclidean distance.
    pub fn nearest(&self, query: [f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        (best.0, best.1.sqrt())
    }

    fn search(&self, node: usize, q: [f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equidistant candidates with lower indices reachable
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// Nearest-neighbor distance for every query point.
    pub fn distances(&self, queries: &[[f64; 3]]) -> Vec<f64> {
        queries.iter().map(|&q| self.nearest(q).1).collect()
    }
}

/// Linear-scan nearest neighbor, first minimum wins.
pub fn brute_force_nearest(points: &[[f64; 3]], query: [f64; 3]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in points.iter().enumerate() {
        let d = dist2(p, query);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, d)| (i, d.sqrt()))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn single_point() {
        let idx = SpatialIndex::new(vec![[1.0, 2.0, 3.0]]).unwrap();
        let (i, d) = idx.nearest([1.0, 2.0, 5.0]);
        assert_eq!(i, 0);
        assert_eq!(d, 2.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(SpatialIndex::new(vec![]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<[f64; 3]> = (0..256)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let idx = SpatialIndex::new(pts.clone()).unwrap();
        for _ in 0..64 {
            let q = [rng.random(), rng.random(), rng.random()];
            assert_eq!(idx.nearest(q), brute_force_nearest(&pts, q).unwrap());
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // many duplicates and a symmetric layout around the query
        let mut pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];
        pts.extend(std::iter::repeat_n([0.0, 0.0, 1.0], 20));
        pts.extend(std::iter::repeat_n([-1.0, 0.0, 0.0], 20));
        let idx = SpatialIndex::new(pts.clone()).unwrap();
        assert_eq!(idx.nearest([0.0, 0.0, 0.0]).0, 0);
        assert_eq!(idx.nearest([-1.0, 0.0, 0.0]).0, 1);
        assert_eq!(idx.nearest([0.0, 0.0, 2.0]).0, 4);
        let copies = SpatialIndex::new(vec![[0.5; 3]; 40]).unwrap();
        assert_eq!(copies.nearest([0.0; 3]).0, 0);
    }
}
