//! Static 3-D kd-tree for nearest-neighbor queries over point clouds.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Kd-tree over a borrowed-then-copied set of points. Query results refer to
/// indices in the original slice.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let axis = extent.imax();
        if extent[axis] <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Nearest point: `(index, squared distance)`. Ties resolve to the
    /// smallest index.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        self.nearest_within(q, f64::INFINITY)
    }

    /// Nearest point strictly closer than `max_dist`.
    pub fn nearest_within(&self, q: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, max_dist * max_dist);
        self.search(0, q, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }

    /// All points within `radius` (inclusive), in ascending index order.
    pub fn within_radius(&self, q: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.collect_radius(0, q, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn collect_radius(&self, node: usize, q: &Vector3<f64>, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| (self.points[i] - q).norm_squared() <= r2),
                );
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff < 0.0 || diff * diff <= r2 {
                    self.collect_radius(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.collect_radius(right, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn empty_tree() {
        let t = KdTree::build(&[]);
        assert!(t.nearest(&Vector3::zeros()).is_none());
    }

    #[test]
    fn duplicate_points_resolve_to_lowest_index() {
        let pts = vec![Vector3::new(1.0, 1.0, 1.0); 20];
        let t = KdTree::build(&pts);
        assert_eq!(t.nearest(&Vector3::zeros()).unwrap().0, 0);
    }

    #[test]
    fn radius_limit() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let t = KdTree::build(&pts);
        assert!(t.nearest_within(&Vector3::new(0.5, 0.6, 0.0), 0.5).is_none());
        assert_eq!(t.nearest_within(&Vector3::new(0.9, 0.0, 0.0), 0.5).unwrap().0, 1);
        assert_eq!(t.within_radius(&Vector3::new(0.5, 0.0, 0.0), 0.5), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..300),
            q in (-1.5f64..1.5, -1.5f64..1.5, -1.5f64..1.5),
        ) {
            let pts: Vec<_> = raw.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
            let q = Vector3::new(q.0, q.1, q.2);
            let t = KdTree::build(&pts);
            let (_, d_tree) = t.nearest(&q).unwrap();
            let (_, d_brute) = brute(&pts, &q);
            prop_assert_eq!(d_tree, d_brute);
        }
    }
}
