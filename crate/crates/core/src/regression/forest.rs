//! Random forest of multi-output CART regression trees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfrParams {
    pub num_trees: usize,
    /// Candidate features per split; `None` means `max(1, P / 3)`.
    pub features_per_node: Option<usize>,
    pub min_leaf_size: usize,
    pub bootstrap: bool,
    pub rng_seed: u64,
}

impl Default for RfrParams {
    fn default() -> Self {
        Self {
            num_trees: 64,
            features_per_node: None,
            min_leaf_size: 1,
            bootstrap: true,
            rng_seed: 0,
        }
    }
}

impl RfrParams {
    pub fn resolved_features(&self, p: usize) -> usize {
        self.features_per_node.unwrap_or((p / 3).max(1)).clamp(1, p.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Offset of the leaf mean in the tree's value buffer.
    Leaf { value: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
    pub(crate) values: Vec<f64>,
    pub(crate) outputs: usize,
}

impl Tree {
    pub fn predict_row<'a>(&'a self, x: &[f64]) -> &'a [f64] {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
                Node::Leaf { value } => {
                    let v = value as usize;
                    return &self.values[v..v + self.outputs];
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.values.len() / self.outputs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub(crate) trees: Vec<Tree>,
    pub(crate) inputs: usize,
    pub(crate) outputs: usize,
    pub(crate) oob_error: Option<f64>,
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Mean squared out-of-bag error per output channel, if any point was
    /// left out of at least one bootstrap sample.
    pub fn oob_error(&self) -> Option<f64> {
        self.oob_error
    }

    pub fn predict(&self, queries: &Matrix) -> Matrix {
        let q = self.outputs;
        let mut out = Matrix::zeros(queries.rows(), q);
        let scale = 1.0 / self.trees.len() as f64;
        out.data_mut()
            .par_chunks_mut(q)
            .enumerate()
            .for_each(|(i, row)| {
                let x = queries.row(i);
                for t in &self.trees {
                    for (o, v) in row.iter_mut().zip(t.predict_row(x)) {
                        *o += v;
                    }
                }
                row.iter_mut().for_each(|o| *o *= scale);
            });
        out
    }
}

pub fn fit_forest(inputs: &Matrix, targets: &Matrix, params: &RfrParams) -> Forest {
    let m = inputs.rows();
    let fitted: Vec<(Tree, Vec<usize>)> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
            rng.set_stream(t as u64);
            let sample: Vec<usize> = if params.bootstrap {
                (0..m).map(|_| rng.random_range(0..m)).collect()
            } else {
                (0..m).collect()
            };
            let tree = build_tree(inputs, targets, &sample, params, &mut rng);
            (tree, sample)
        })
        .collect();

    let q = targets.cols();
    let oob_error = if params.bootstrap {
        let mut sums = vec![0.0; m * q];
        let mut counts = vec![0usize; m];
        let mut in_bag = vec![false; m];
        for (tree, sample) in &fitted {
            in_bag.iter_mut().for_each(|b| *b = false);
            sample.iter().for_each(|&i| in_bag[i] = true);
            for i in (0..m).filter(|&i| !in_bag[i]) {
                counts[i] += 1;
                for (s, v) in sums[i * q..(i + 1) * q].iter_mut().zip(tree.predict_row(inputs.row(i))) {
                    *s += v;
                }
            }
        }
        let mut err = 0.0;
        let mut n = 0usize;
        for i in (0..m).filter(|&i| counts[i] > 0) {
            n += 1;
            for c in 0..q {
                let e = sums[i * q + c] / counts[i] as f64 - targets.get(i, c);
                err += e * e;
            }
        }
        (n > 0).then(|| err / (n * q) as f64)
    } else {
        None
    };

    Forest {
        trees: fitted.into_iter().map(|(t, _)| t).collect(),
        inputs: inputs.cols(),
        outputs: q,
        oob_error,
    }
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
}

/// Grows one tree on the (possibly repeated) rows `sample`.
///
/// Every feature keeps its own ordering of the node's samples; a split
/// partitions all orderings stably so each stays sorted without re-sorting.
fn build_tree(inputs: &Matrix, targets: &Matrix, sample: &[usize], params: &RfrParams, rng: &mut ChaCha8Rng) -> Tree {
    let p = inputs.cols();
    let q = targets.cols();
    let n = sample.len();
    let r = params.resolved_features(p);
    let min_leaf = params.min_leaf_size.max(1);

    let x: Vec<f64> = sample.iter().flat_map(|&i| inputs.row(i).iter().copied()).collect();
    let y: Vec<f64> = sample.iter().flat_map(|&i| targets.row(i).iter().copied()).collect();

    let mut orders: Vec<Vec<u32>> = (0..p)
        .map(|f| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| x[a as usize * p + f].total_cmp(&x[b as usize * p + f]).then(a.cmp(&b)));
            o
        })
        .collect();

    let mut nodes = vec![Node::Leaf { value: 0 }];
    let mut values = Vec::new();
    let mut goes_left = vec![false; n];
    let mut scratch: Vec<u32> = Vec::with_capacity(n);
    let mut features: Vec<usize> = (0..p).collect();
    let mut stack = vec![Pending { node: 0, start: 0, end: n }];

    let mut left_sum = vec![0.0; q];
    let mut total = vec![0.0; q];

    while let Some(Pending { node, start, end }) = stack.pop() {
        let count = end - start;
        total.iter_mut().for_each(|t| *t = 0.0);
        let mut sumsq = 0.0;
        for &s in &orders[0][start..end] {
            let row = &y[s as usize * q..(s as usize + 1) * q];
            for (t, v) in total.iter_mut().zip(row) {
                *t += v;
                sumsq += v * v;
            }
        }
        let node_sse = sumsq - total.iter().map(|t| t * t).sum::<f64>() / count as f64;
        let pure = orders[0][start..end]
            .iter()
            .all(|&s| y[s as usize * q..(s as usize + 1) * q] == y[orders[0][start] as usize * q..(orders[0][start] as usize + 1) * q]);

        let mut best: Option<(f64, usize, usize, f64)> = None; // (score, feature, position, threshold)
        if count >= 2 * min_leaf && !pure && node_sse > 0.0 {
            features.shuffle(rng);
            // the first r features are candidates; further features are only
            // consulted when none of those admits a split
            for (tried, &f) in features.iter().enumerate() {
                if tried >= r && best.is_some() {
                    break;
                }
                let order = &orders[f][start..end];
                left_sum.iter_mut().for_each(|v| *v = 0.0);
                for (pos, &s) in order[..count - 1].iter().enumerate() {
                    let s = s as usize;
                    for (l, v) in left_sum.iter_mut().zip(&y[s * q..(s + 1) * q]) {
                        *l += v;
                    }
                    let nl = pos + 1;
                    let nr = count - nl;
                    if nl < min_leaf || nr < min_leaf {
                        continue;
                    }
                    let xa = x[s * p + f];
                    let xb = x[order[pos + 1] as usize * p + f];
                    if xa >= xb {
                        continue;
                    }
                    // maximizing this is minimizing the children's summed SSE
                    let mut score = 0.0;
                    for (l, t) in left_sum.iter().zip(total.iter()) {
                        let rr = t - l;
                        score += l * l / nl as f64 + rr * rr / nr as f64;
                    }
                    if best.is_none_or(|b| score > b.0) {
                        let mut thr = 0.5 * (xa + xb);
                        if !(thr >= xa && thr < xb) {
                            thr = xa;
                        }
                        best = Some((score, f, nl, thr));
                    }
                }
            }
        }

        match best {
            None => {
                let offset = values.len() as u32;
                values.extend(total.iter().map(|t| t / count as f64));
                nodes[node] = Node::Leaf { value: offset };
            }
            Some((_, f, nl, thr)) => {
                for &s in &orders[f][start..end] {
                    goes_left[s as usize] = x[s as usize * p + f] <= thr;
                }
                for order in orders.iter_mut() {
                    let seg = &mut order[start..end];
                    scratch.clear();
                    let mut w = 0;
                    for i in 0..seg.len() {
                        let s = seg[i];
                        if goes_left[s as usize] {
                            seg[w] = s;
                            w += 1;
                        } else {
                            scratch.push(s);
                        }
                    }
                    seg[w..].copy_from_slice(&scratch);
                }
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0 });
                nodes.push(Node::Leaf { value: 0 });
                nodes[node] = Node::Split {
                    feature: f as u32,
                    threshold: thr,
                    left: left as u32,
                    right: left as u32 + 1,
                };
                stack.push(Pending {
                    node: left + 1,
                    start: start + nl,
                    end,
                });
                stack.push(Pending {
                    node: left,
                    start,
                    end: start + nl,
                });
            }
        }
    }

    Tree {
        nodes,
        values,
        outputs: q,
    }
}
