//! Regression trees and the exact greedy, level-wise tree builder.

use serde::{Deserialize, Serialize};

/// Marker in [`Node::feature`] for leaves.
pub const LEAF: u32 = u32::MAX;

/// Flat tree node. Children of a split are stored at `left` and `left + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    /// Leaf output (residual mean); unused for splits.
    pub value: f64,
    /// Squared-error reduction achieved by the split; zero for leaves.
    pub gain: f64,
}

impl Node {
    pub fn leaf(value: f64) -> Self {
        Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            value,
            gain: 0.0,
        }
    }

    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::leaf(value)],
        }
    }

    /// Single split on `feature` at `threshold` (`x <= threshold` goes left).
    pub fn stump(feature: usize, threshold: f64, left: f64, right: f64, gain: f64) -> Self {
        Tree {
            nodes: vec![
                Node {
                    feature: feature as u32,
                    threshold,
                    left: 1,
                    value: 0.0,
                    gain,
                },
                Node::leaf(left),
                Node::leaf(right),
            ],
        }
    }

    #[inline]
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return i;
            }
            i = n.left as usize + usize::from(x[n.feature as usize] > n.threshold);
        }
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.left as usize + 1))
            }
        }
        walk(self, 0)
    }

    pub fn max_abs_leaf(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.value.abs())
            .fold(0.0, f64::max)
    }

    pub fn to_nested(&self) -> NestedNode {
        fn build(t: &Tree, i: usize) -> NestedNode {
            let n = &t.nodes[i];
            if n.is_leaf() {
                NestedNode::Leaf { v: n.value }
            } else {
                NestedNode::Split {
                    f: n.feature,
                    t: n.threshold,
                    g: n.gain,
                    l: Box::new(build(t, n.left as usize)),
                    r: Box::new(build(t, n.left as usize + 1)),
                }
            }
        }
        build(self, 0)
    }

    pub fn from_nested(root: &NestedNode) -> Tree {
        let mut nodes = vec![Node::leaf(0.0)];
        // Breadth-first, which reproduces the builder's level-wise layout.
        let mut queue = std::collections::VecDeque::from([(root, 0usize)]);
        while let Some((n, slot)) = queue.pop_front() {
            match n {
                NestedNode::Leaf { v } => nodes[slot] = Node::leaf(*v),
                NestedNode::Split { f, t, g, l, r } => {
                    let left = nodes.len();
                    nodes.push(Node::leaf(0.0));
                    nodes.push(Node::leaf(0.0));
                    nodes[slot] = Node {
                        feature: *f,
                        threshold: *t,
                        left: left as u32,
                        value: 0.0,
                        gain: *g,
                    };
                    queue.push_back((l, left));
                    queue.push_back((r, left + 1));
                }
            }
        }
        Tree { nodes }
    }
}

/// Serialized tree node: `{"f","t","g","l","r"}` for splits, `{"v"}` for leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NestedNode {
    Split {
        f: u32,
        t: f64,
        g: f64,
        l: Box<NestedNode>,
        r: Box<NestedNode>,
    },
    Leaf {
        v: f64,
    },
}

/// Column-major training matrix with per-feature sort orders, shared by
/// every tree of one boosting run.
pub struct TrainingMatrix {
    pub n_rows: usize,
    pub columns: Vec<Vec<f64>>,
    /// Row indices sorted by value for each searchable feature.
    sorted: Vec<(usize, Vec<u32>)>,
}

impl TrainingMatrix {
    pub fn new(rows: &[impl AsRef<[f64]>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let columns: Vec<Vec<f64>> = (0..n_cols)
            .map(|j| rows.iter().map(|r| r.as_ref()[j]).collect())
            .collect();
        let mut sorted: Vec<(usize, Vec<u32>)> = Vec::new();
        for (j, col) in columns.iter().enumerate() {
            let mut order: Vec<u32> = (0..n_rows as u32).collect();
            order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            if n_rows == 0 || col[order[0] as usize] == col[order[n_rows - 1] as usize] {
                // Constant column: no candidate thresholds.
                continue;
            }
            let redundant = sorted
                .iter()
                .any(|(i, ord)| monotone_equivalent(&columns[*i], col, ord));
            if !redundant {
                sorted.push((j, order));
            }
        }
        TrainingMatrix {
            n_rows,
            columns,
            sorted,
        }
    }

    /// Features that take part in the split search, in index order.
    pub fn searched_features(&self) -> Vec<usize> {
        self.sorted.iter().map(|(j, _)| *j).collect()
    }
}

/// True when `b` is a strictly monotone function of `a` on these rows, so
/// both induce the same candidate partitions. Ties are then resolved in
/// favour of the lower feature index, which makes skipping `b` exact.
fn monotone_equivalent(a: &[f64], b: &[f64], order_a: &[u32]) -> bool {
    let mut direction = 0i8;
    for w in order_a.windows(2) {
        let (p, q) = (w[0] as usize, w[1] as usize);
        if a[p] == a[q] {
            if b[p] != b[q] {
                return false;
            }
            continue;
        }
        let d = if b[q] > b[p] {
            1
        } else if b[q] < b[p] {
            -1
        } else {
            return false;
        };
        if direction == 0 {
            direction = d;
        } else if direction != d {
            return false;
        }
    }
    true
}

pub struct TreeParams {
    pub max_depth: usize,
    pub min_split: usize,
    /// Splits must reduce squared error by more than this.
    pub min_gain: f64,
}

const NO_SLOT: u32 = u32::MAX;
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree on `residuals`; on return `node_of[i]` is the leaf that
/// row `i` falls into.
pub fn grow_tree(
    data: &TrainingMatrix,
    residuals: &[f64],
    params: &TreeParams,
    node_of: &mut Vec<u32>,
) -> Tree {
    let n = data.n_rows;
    node_of.clear();
    node_of.resize(n, 0);
    let total: f64 = residuals.iter().sum();
    let mut nodes = vec![Node::leaf(total / n as f64)];
    let total_sq: f64 = residuals.iter().map(|r| r * r).sum();
    // (node id, count, sum, sum of squares) of nodes that may still split.
    let mut frontier: Vec<(u32, usize, f64, f64)> = Vec::new();
    if n >= params.min_split && params.max_depth > 0 {
        frontier.push((0, n, total, total_sq));
    }
    let mut slot_of: Vec<u32> = vec![NO_SLOT];

    let mut depth = 0;
    while !frontier.is_empty() && depth < params.max_depth {
        slot_of.resize(nodes.len(), NO_SLOT);
        for (slot, &(id, ..)) in frontier.iter().enumerate() {
            slot_of[id as usize] = slot as u32;
        }
        let m = frontier.len();
        let mut best: Vec<Option<Candidate>> = vec![None; m];
        let mut left_n = vec![0usize; m];
        let mut left_sum = vec![0.0f64; m];
        let mut last = vec![0.0f64; m];

        for (feature, order) in &data.sorted {
            let col = &data.columns[*feature];
            left_n.iter_mut().for_each(|c| *c = 0);
            left_sum.iter_mut().for_each(|c| *c = 0.0);
            for &row in order {
                let row = row as usize;
                let slot = slot_of[node_of[row] as usize];
                if slot == NO_SLOT {
                    continue;
                }
                let slot = slot as usize;
                let v = col[row];
                let nl = left_n[slot];
                if nl > 0 && v > last[slot] {
                    let (_, cnt, sum, sq) = frontier[slot];
                    let sl = left_sum[slot];
                    let sr = sum - sl;
                    let nr = cnt - nl;
                    let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - sum * sum / cnt as f64;
                    // Gains within rounding noise count as ties, which the
                    // earlier (lower feature, lower threshold) candidate wins.
                    if best[slot].is_none_or(|b| gain > b.gain + TIE_TOL * sq) {
                        best[slot] = Some(Candidate {
                            gain,
                            feature: *feature,
                            threshold: midpoint(last[slot], v),
                        });
                    }
                }
                left_n[slot] = nl + 1;
                left_sum[slot] += residuals[row];
                last[slot] = v;
            }
        }

        // Apply the splits.
        let mut next = Vec::new();
        let mut split_of: Vec<Option<(usize, f64, u32)>> = vec![None; m];
        for (slot, &(id, ..)) in frontier.iter().enumerate() {
            let Some(c) = best[slot] else { continue };
            if c.gain <= params.min_gain {
                continue;
            }
            let left = nodes.len() as u32;
            nodes.push(Node::leaf(0.0));
            nodes.push(Node::leaf(0.0));
            let node = &mut nodes[id as usize];
            node.feature = c.feature as u32;
            node.threshold = c.threshold;
            node.left = left;
            node.gain = c.gain;
            node.value = 0.0;
            split_of[slot] = Some((c.feature, c.threshold, left));
        }
        let mut child_n = vec![0usize; nodes.len()];
        let mut child_sum = vec![0.0f64; nodes.len()];
        let mut child_sq = vec![0.0f64; nodes.len()];
        for row in 0..n {
            let id = node_of[row] as usize;
            let slot = slot_of.get(id).copied().unwrap_or(NO_SLOT);
            if slot == NO_SLOT {
                continue;
            }
            if let Some((f, t, left)) = split_of[slot as usize] {
                let child = left + u32::from(data.columns[f][row] > t);
                node_of[row] = child;
                child_n[child as usize] += 1;
                child_sum[child as usize] += residuals[row];
                child_sq[child as usize] += residuals[row] * residuals[row];
            }
        }
        for (slot, &(id, ..)) in frontier.iter().enumerate() {
            slot_of[id as usize] = NO_SLOT;
            if let Some((_, _, left)) = split_of[slot] {
                for child in [left, left + 1] {
                    let c = child as usize;
                    nodes[c].value = child_sum[c] / child_n[c] as f64;
                    if child_n[c] >= params.min_split && depth + 1 < params.max_depth {
                        next.push((child, child_n[c], child_sum[c], child_sq[c]));
                    }
                }
            }
        }
        frontier = next;
        depth += 1;
    }
    Tree { nodes }
}

/// Threshold strictly between `a < b` such that `a <= t < b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) * 0.5;
    if m >= b {
        a
    } else {
        m
    }
}
