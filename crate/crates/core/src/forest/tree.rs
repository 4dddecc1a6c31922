use serde::{Deserialize, Serialize};

use super::ColMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Leaf {
        value: f64,
    },
    Split {
        var: usize,
        cut: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub depth: u32,
    #[serde(flatten)]
    pub kind: NodeKind,
}

impl Node {
    pub fn leaf(depth: u32, value: f64) -> Self {
        Self {
            depth,
            kind: NodeKind::Leaf { value },
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// Logistic gate ψ(u) = 1 / (1 + e^(−u)).
#[inline]
pub fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Probability of routing right at a split with cutpoint `cut`.
#[inline]
pub fn gate(x: f64, cut: f64, bandwidth: f64, soft: bool) -> f64 {
    if soft {
        logistic((x - cut) / bandwidth)
    } else if x > cut {
        1.0
    } else if x < cut {
        0.0
    } else {
        0.5
    }
}

/// Binary tree with probabilistic splits. Node 0 is the root; every split
/// node has exactly two children. Covariates are expected on the unit scale
/// produced by the owning forest's scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTree {
    pub nodes: Vec<Node>,
    pub bandwidth: f64,
}

impl SoftTree {
    pub fn stump(value: f64, bandwidth: f64) -> Self {
        Self {
            nodes: vec![Node::leaf(0, value)],
            bandwidth,
        }
    }

    /// Leaf node indices in depth-first (left before right) order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            match self.nodes[i].kind {
                NodeKind::Leaf { .. } => out.push(i),
                NodeKind::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Split nodes in depth-first order.
    pub fn internal(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if let NodeKind::Split { left, right, .. } = self.nodes[i].kind {
                out.push(i);
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }

    /// Split nodes whose two children are both leaves.
    pub fn prunable(&self) -> Vec<usize> {
        self.internal()
            .into_iter()
            .filter(|&i| match self.nodes[i].kind {
                NodeKind::Split { left, right, .. } => {
                    self.nodes[left].is_leaf() && self.nodes[right].is_leaf()
                }
                NodeKind::Leaf { .. } => false,
            })
            .collect()
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.leaves()
            .into_iter()
            .map(|i| match self.nodes[i].kind {
                NodeKind::Leaf { value } => value,
                NodeKind::Split { .. } => unreachable!(),
            })
            .collect()
    }

    /// Assign leaf values in [`Self::leaves`] order.
    pub fn set_leaf_values(&mut self, values: &[f64]) {
        for (i, &v) in self.leaves().into_iter().zip(values) {
            self.nodes[i].kind = NodeKind::Leaf { value: v };
        }
    }

    /// Turn leaf `i` into a split with two leaf children.
    pub fn grow(&mut self, i: usize, var: usize, cut: f64) {
        let depth = self.nodes[i].depth;
        let value = match self.nodes[i].kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Split { .. } => panic!("grow on a split node"),
        };
        let left = self.nodes.len();
        self.nodes.push(Node::leaf(depth + 1, value));
        self.nodes.push(Node::leaf(depth + 1, value));
        self.nodes[i].kind = NodeKind::Split {
            var,
            cut,
            left,
            right: left + 1,
        };
    }

    /// Collapse split `i` (whose children are leaves) into a leaf and
    /// compact the node arena.
    pub fn prune(&mut self, i: usize) {
        let NodeKind::Split { left, right, .. } = self.nodes[i].kind else {
            panic!("prune on a leaf");
        };
        assert!(self.nodes[left].is_leaf() && self.nodes[right].is_leaf());
        self.nodes[i].kind = NodeKind::Leaf { value: 0.0 };
        self.compact();
    }

    /// Rebuild the arena keeping only nodes reachable from the root,
    /// numbered in depth-first order.
    fn compact(&mut self) {
        let mut out: Vec<Node> = Vec::with_capacity(self.nodes.len());
        fn visit(src: &[Node], i: usize, out: &mut Vec<Node>) -> usize {
            let idx = out.len();
            out.push(src[i]);
            if let NodeKind::Split {
                var,
                cut,
                left,
                right,
            } = src[i].kind
            {
                let l = visit(src, left, out);
                let r = visit(src, right, out);
                out[idx].kind = NodeKind::Split {
                    var,
                    cut,
                    left: l,
                    right: r,
                };
            }
            idx
        }
        visit(&self.nodes, 0, &mut out);
        self.nodes = out;
    }

    pub fn set_rule(&mut self, i: usize, new_var: usize, new_cut: f64) {
        match &mut self.nodes[i].kind {
            NodeKind::Split { var, cut, .. } => {
                *var = new_var;
                *cut = new_cut;
            }
            NodeKind::Leaf { .. } => panic!("set_rule on a leaf"),
        }
    }

    /// Leaf weights for every row of `x`: returns one column per leaf in
    /// [`Self::leaves`] order, each of length `x.n_rows()`.
    pub fn leaf_weights(&self, x: &ColMatrix, soft: bool) -> Vec<Vec<f64>> {
        let n = x.n_rows();
        let mut cols = Vec::new();
        self.fill_weights(0, vec![1.0; n], x, soft, &mut cols);
        cols
    }

    fn fill_weights(
        &self,
        node: usize,
        w: Vec<f64>,
        x: &ColMatrix,
        soft: bool,
        cols: &mut Vec<Vec<f64>>,
    ) {
        match self.nodes[node].kind {
            NodeKind::Leaf { .. } => cols.push(w),
            NodeKind::Split {
                var,
                cut,
                left,
                right,
            } => {
                let xc = x.col(var);
                let mut right_w = w;
                let mut left_w = Vec::with_capacity(right_w.len());
                for (wi, &xi) in right_w.iter_mut().zip(xc) {
                    let g = gate(xi, cut, self.bandwidth, soft);
                    left_w.push(*wi * (1.0 - g));
                    *wi *= g;
                }
                self.fill_weights(left, left_w, x, soft, cols);
                self.fill_weights(right, right_w, x, soft, cols);
            }
        }
    }

    /// Weight of reaching leaf node `leaf` for one covariate row.
    pub fn path_weight(&self, row: &[f64], leaf: usize, soft: bool) -> Option<f64> {
        fn go(t: &SoftTree, node: usize, target: usize, row: &[f64], soft: bool) -> Option<f64> {
            if node == target {
                return Some(1.0);
            }
            match t.nodes[node].kind {
                NodeKind::Leaf { .. } => None,
                NodeKind::Split {
                    var,
                    cut,
                    left,
                    right,
                } => {
                    let g = gate(row[var], cut, t.bandwidth, soft);
                    go(t, left, target, row, soft)
                        .map(|w| w * (1.0 - g))
                        .or_else(|| go(t, right, target, row, soft).map(|w| w * g))
                }
            }
        }
        if !self.nodes.get(leaf)?.is_leaf() {
            return None;
        }
        go(self, 0, leaf, row, soft)
    }

    /// Prediction for one covariate row (unit scale).
    pub fn predict_row(&self, row: &[f64], soft: bool) -> f64 {
        fn go(t: &SoftTree, node: usize, row: &[f64], soft: bool) -> f64 {
            match t.nodes[node].kind {
                NodeKind::Leaf { value } => value,
                NodeKind::Split {
                    var,
                    cut,
                    left,
                    right,
                } => {
                    let g = gate(row[var], cut, t.bandwidth, soft);
                    let mut acc = 0.0;
                    if g < 1.0 {
                        acc += (1.0 - g) * go(t, left, row, soft);
                    }
                    if g > 0.0 {
                        acc += g * go(t, right, row, soft);
                    }
                    acc
                }
            }
        }
        go(self, 0, row, soft)
    }

    /// Per-row predictions for all rows of `x`.
    pub fn predict(&self, x: &ColMatrix, soft: bool) -> Vec<f64> {
        if self.nodes.len() == 1 {
            let v = self.leaf_values()[0];
            return vec![v; x.n_rows()];
        }
        let phi = self.leaf_weights(x, soft);
        let values = self.leaf_values();
        let mut out = vec![0.0; x.n_rows()];
        for (col, v) in phi.iter().zip(&values) {
            for (o, p) in out.iter_mut().zip(col) {
                *o += p * v;
            }
        }
        out
    }

    /// Split variables used anywhere in the tree.
    pub fn split_vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n.kind {
            NodeKind::Split { var, .. } => Some(var),
            NodeKind::Leaf { .. } => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depth1(cut: f64, b: f64) -> SoftTree {
        let mut t = SoftTree::stump(0.0, b);
        t.grow(0, 0, cut);
        t.set_leaf_values(&[-1.0, 2.0]);
        t
    }

    #[test]
    fn midpoint_gate_splits_evenly() {
        let t = depth1(0.3, 0.1);
        let leaves = t.leaves();
        assert_eq!(t.path_weight(&[0.3], leaves[0], true), Some(0.5));
        assert_eq!(t.path_weight(&[0.3], leaves[1], true), Some(0.5));
    }

    #[test]
    fn gate_at_log_three_is_three_quarters() {
        let b = 0.2;
        let x = 0.3 + b * 3f64.ln();
        assert!((gate(x, 0.3, b, true) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn hard_mode_routes_by_indicator() {
        let t = depth1(0.5, 0.1);
        let leaves = t.leaves();
        assert_eq!(t.path_weight(&[0.2], leaves[0], false), Some(1.0));
        assert_eq!(t.path_weight(&[0.2], leaves[1], false), Some(0.0));
        assert_eq!(t.predict_row(&[0.9], false), 2.0);
    }

    #[test]
    fn tiny_bandwidth_matches_hard_tree() {
        let mut t = SoftTree::stump(0.0, 1e-9);
        t.grow(0, 0, 0.5);
        t.grow(2, 1, 0.25);
        t.set_leaf_values(&[1.0, -2.0, 3.0]);
        let x = ColMatrix::from_columns(vec![
            vec![0.1, 0.7, 0.9, 0.6],
            vec![0.9, 0.1, 0.3, 0.2],
        ]);
        assert_eq!(t.predict(&x, true), t.predict(&x, false));
        assert_eq!(t.predict(&x, false), vec![1.0, -2.0, 3.0, -2.0]);
    }

    #[test]
    fn weights_sum_to_one() {
        let mut t = SoftTree::stump(0.0, 0.3);
        t.grow(0, 0, 0.5);
        t.grow(1, 1, 0.2);
        t.grow(2, 0, 0.8);
        let x = ColMatrix::from_columns(vec![vec![0.0, 0.45, 1.0], vec![0.3, 0.2, 0.9]]);
        let phi = t.leaf_weights(&x, true);
        assert_eq!(phi.len(), 4);
        for i in 0..3 {
            let s: f64 = phi.iter().map(|c| c[i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prune_compacts_arena() {
        let mut t = SoftTree::stump(0.0, 0.1);
        t.grow(0, 0, 0.5);
        t.grow(1, 0, 0.2);
        assert_eq!(t.n_leaves(), 3);
        assert_eq!(t.prunable(), vec![1]);
        t.prune(1);
        assert_eq!(t.nodes.len(), 3);
        assert_eq!(t.n_leaves(), 2);
        t.prune(0);
        assert_eq!(t.nodes.len(), 1);
    }
}
