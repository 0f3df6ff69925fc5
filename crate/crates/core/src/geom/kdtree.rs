use nalgebra::Vector3;

/// Static 3D k-d tree answering exact nearest-neighbor distance queries.
#[derive(Debug, Clone)]
pub struct KdTree3 {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    // the point stored at this node is points[index]
    index: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree3 {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut tree = KdTree3 {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
        };
        tree.build(&mut order, 0);
        tree
    }

    fn build(&mut self, order: &mut [usize], depth: usize) -> Option<usize> {
        if order.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = order.len() / 2;
        let points = &self.points;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let slot = self.nodes.len();
        self.nodes.push(Node {
            index: order[mid],
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = order.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut rest[1..], depth + 1);
        self.nodes[slot].left = left;
        self.nodes[slot].right = right;
        Some(slot)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Euclidean distance from `q` to the closest stored point.
    pub fn nearest_distance(&self, q: &Vector3<f64>) -> Option<f64> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        self.search(0, q, &mut best);
        Some(best.sqrt())
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best: &mut f64) {
        let n = self.nodes[node];
        let p = &self.points[n.index];
        let d2 = (p - q).norm_squared();
        if d2 < *best {
            *best = d2;
        }
        let delta = q[n.axis] - p[n.axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(c, q, best);
        }
        if let Some(c) = far {
            if delta * delta <= *best {
                self.search(c, q, best);
            }
        }
    }
}
