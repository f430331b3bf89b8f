//! Exact nearest-neighbor search over a fixed 4-D point set.
//!
//! Ties are broken by the lowest point index, so the tree and the linear
//! scan in [`nearest_brute_force`] return the same point, not merely the
//! same distance.

pub const DIM: usize = 4;
const LEAF_SIZE: usize = 8;

pub type Point = [f64; DIM];

/// Squared Euclidean distance, summed in a fixed order.
#[inline]
pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let mut acc = 0.0;
    for k in 0..DIM {
        let d = a[k] - b[k];
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub squared_distance: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.squared_distance.sqrt()
    }

    #[inline]
    fn beats(&self, d2: f64, index: usize) -> bool {
        d2 < self.squared_distance || (d2 == self.squared_distance && index < self.index)
    }
}

pub trait NearestNeighbor {
    fn nearest(&self, query: &Point) -> Option<Neighbor>;
}

/// Linear scan.
pub fn nearest_brute_force(points: &[Point], query: &Point) -> Option<Neighbor> {
    let mut best: Option<Neighbor> = None;
    for (index, p) in points.iter().enumerate() {
        let d2 = squared_distance(p, query);
        if best.is_none_or(|b| b.beats(d2, index)) {
            best = Some(Neighbor {
                index,
                squared_distance: d2,
            });
        }
    }
    best
}

pub struct BruteForce<'a>(pub &'a [Point]);

impl NearestNeighbor for BruteForce<'_> {
    fn nearest(&self, query: &Point) -> Option<Neighbor> {
        nearest_brute_force(self.0, query)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree; built once, queried read-only from many threads.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    /// Point indices, permuted so that each leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: Vec<Point>) -> Self {
        let mut tree = Self {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            let n = tree.points.len();
            tree.build_range(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn build_range(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split on the axis of largest spread.
        let mut lo = [f64::INFINITY; DIM];
        let mut hi = [f64::NEG_INFINITY; DIM];
        for &i in &self.order[start..end] {
            for k in 0..DIM {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        let axis = (0..DIM)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] == 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_range(start, mid);
        let right = self.build_range(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn search(&self, node: usize, query: &Point, best: &mut Option<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let d2 = squared_distance(&self.points[index], query);
                    if best.is_none_or(|b| b.beats(d2, index)) {
                        *best = Some(Neighbor {
                            index,
                            squared_distance: d2,
                        });
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, best);
                // `<=` keeps equidistant points on the far side reachable for
                // the index tie-break.
                if best.is_none_or(|b| diff * diff <= b.squared_distance) {
                    self.search(far, query, best);
                }
            }
        }
    }
}

impl NearestNeighbor for KdTree {
    fn nearest(&self, query: &Point) -> Option<Neighbor> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = None;
        self.search(0, query, &mut best);
        best
    }
}
