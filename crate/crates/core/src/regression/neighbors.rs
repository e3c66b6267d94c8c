//! Exact k-nearest-neighbor search.
//!
//! Both indexes order neighbors by `(squared distance, training index)`, so
//! they return identical results including ties.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::Matrix;

/// Training sets at least this large are indexed with a kd-tree.
pub const KDTREE_THRESHOLD: usize = 50_000;
const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    d2: f64,
    idx: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Bounded max-heap keeping the `k` best candidates.
struct Best {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if c < *self.heap.peek().expect("k >= 1") {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    /// Squared radius beyond which nothing can enter.
    #[inline]
    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.d2)
        }
    }

    fn finish(self, out: &mut Vec<(f64, usize)>) {
        out.clear();
        out.extend(self.heap.into_sorted_vec().into_iter().map(|c| (c.d2.sqrt(), c.idx as usize)));
    }
}

enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

pub struct KdTree {
    points: Matrix,
    perm: Vec<u32>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    pub fn build(points: Matrix) -> Self {
        let mut perm: Vec<u32> = (0..points.rows() as u32).collect();
        let mut nodes = Vec::new();
        build_node(&points, &mut perm, 0, points.rows(), &mut nodes);
        Self { points, perm, nodes }
    }

    fn search(&self, node: usize, query: &[f64], best: &mut Best) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    best.offer(Candidate {
                        d2: squared_distance(query, self.points.row(i as usize)),
                        idx: i,
                    });
                }
            }
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, best);
                // equal bounds are still visited so index ties resolve as in
                // the brute-force scan
                if diff * diff <= best.bound() {
                    self.search(far, query, best);
                }
            }
        }
    }
}

fn build_node(points: &Matrix, perm: &mut [u32], start: usize, end: usize, nodes: &mut Vec<KdNode>) -> usize {
    let id = nodes.len();
    let n = end - start;
    let p = points.cols();
    if n <= LEAF_SIZE || p == 0 {
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let seg = &mut perm[start..end];
    let (dim, spread) = (0..p)
        .map(|d| {
            let (lo, hi) = seg.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = points.get(i as usize, d);
                (lo.min(v), hi.max(v))
            });
            (d, hi - lo)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .expect("p >= 1");
    if spread <= 0.0 {
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let mid = n / 2;
    seg.select_nth_unstable_by(mid, |&a, &b| {
        points.get(a as usize, dim).total_cmp(&points.get(b as usize, dim))
    });
    let value = points.get(seg[mid] as usize, dim);
    // left holds values <= split, right holds values >= split; both bounds
    // are valid for the pruning test
    nodes.push(KdNode::Leaf { start, end });
    let left = build_node(points, perm, start, start + mid, nodes);
    let right = build_node(points, perm, start + mid, end, nodes);
    nodes[id] = KdNode::Split {
        dim,
        value,
        left,
        right,
    };
    id
}

pub enum NeighborIndex {
    Brute(Matrix),
    KdTree(KdTree),
}

impl NeighborIndex {
    /// Brute force below [`KDTREE_THRESHOLD`] points, kd-tree otherwise.
    pub fn build(points: Matrix) -> Self {
        if points.rows() >= KDTREE_THRESHOLD {
            Self::KdTree(KdTree::build(points))
        } else {
            Self::Brute(points)
        }
    }

    pub fn points(&self) -> &Matrix {
        match self {
            Self::Brute(p) => p,
            Self::KdTree(t) => &t.points,
        }
    }

    /// The `k` nearest points as `(distance, index)`, nearest first.
    pub fn query(&self, query: &[f64], k: usize, out: &mut Vec<(f64, usize)>) {
        let k = k.min(self.points().rows());
        if k == 0 {
            out.clear();
            return;
        }
        let mut best = Best::new(k);
        match self {
            Self::Brute(points) => {
                for (i, row) in points.iter_rows().enumerate() {
                    let d2 = squared_distance(query, row);
                    if d2 <= best.bound() {
                        best.offer(Candidate { d2, idx: i as u32 });
                    }
                }
            }
            Self::KdTree(tree) => tree.search(0, query, &mut best),
        }
        best.finish(out);
    }
}
