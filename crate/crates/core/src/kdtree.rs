//! Median-split k-d tree over a fixed point set.
//!
//! Neighbours are ordered by `(squared distance, point index)`, so ties are
//! always resolved towards the lowest build index.

use std::cmp::Ordering;

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 8;

/// One neighbour returned by a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sq_dist: f64,
}

impl Neighbor {
    #[inline]
    fn precedes(&self, other: &Neighbor) -> bool {
        match self.sq_dist.partial_cmp(&other.sq_dist) {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => self.index < other.index,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut tree = Self {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            let n = tree.points.len();
            tree.build(0, n);
        }
        tree
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

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
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

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        (hi - lo).imax()
    }

    /// Nearest neighbour of `x`. Panics on an empty tree.
    pub fn nearest(&self, x: &Vec3) -> Neighbor {
        let mut best = [Neighbor {
            index: usize::MAX,
            sq_dist: f64::INFINITY,
        }];
        let mut found = 0;
        self.search(0, x, &mut best, &mut found);
        assert!(found == 1, "nearest() on an empty k-d tree");
        best[0]
    }

    /// The `k` nearest neighbours of `x`, sorted by `(distance, index)`.
    pub fn knn(&self, x: &Vec3, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut best = vec![
            Neighbor {
                index: usize::MAX,
                sq_dist: f64::INFINITY,
            };
            k
        ];
        let mut found = 0;
        self.search(0, x, &mut best, &mut found);
        best.truncate(found);
        best
    }

    fn search(&self, node: usize, x: &Vec3, best: &mut [Neighbor], found: &mut usize) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        sq_dist: (self.points[i] - x).norm_squared(),
                    };
                    insert_sorted(best, found, cand);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = x[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, x, best, found);
                let worst = best[best.len() - 1].sq_dist;
                // `<=` keeps equal-distance candidates with a lower index reachable
                if diff * diff <= worst {
                    self.search(far, x, best, found);
                }
            }
        }
    }
}

#[inline]
fn insert_sorted(best: &mut [Neighbor], found: &mut usize, cand: Neighbor) {
    let k = best.len();
    if *found == k && !cand.precedes(&best[k - 1]) {
        return;
    }
    let mut pos = (*found).min(k - 1);
    while pos > 0 && cand.precedes(&best[pos - 1]) {
        best[pos] = best[pos - 1];
        pos -= 1;
    }
    best[pos] = cand;
    if *found < k {
        *found += 1;
    }
}
