//! Bayesian backfitting: Metropolis–Hastings structure moves and conjugate
//! leaf draws, one tree at a time against the partial residual.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};

use super::tree::{gate, NodeKind, SoftTree};
use super::{split_probability, ColMatrix, Forest};
use crate::dist::{std_normal, ChainRng};
use crate::error::Result;

const P_GROW: f64 = 0.4;
const P_PRUNE: f64 = 0.4;
/// Random-walk step on log-bandwidth.
const BANDWIDTH_STEP: f64 = 0.5;

/// Training-time state of a forest: unit-scaled covariates, per-tree leaf
/// weight matrices and fitted values.
#[derive(Debug, Clone)]
pub struct TrainingCache {
    pub unit: ColMatrix,
    phi: Vec<Vec<Vec<f64>>>,
    tree_fits: Vec<Vec<f64>>,
    total: Vec<f64>,
}

impl TrainingCache {
    pub fn new(forest: &Forest, x_raw: &ColMatrix) -> Result<Self> {
        let unit = forest.scaler.transform(x_raw)?;
        let n = unit.n_rows();
        let mut phi = Vec::with_capacity(forest.trees.len());
        let mut tree_fits = Vec::with_capacity(forest.trees.len());
        let mut total = vec![0.0; n];
        for t in &forest.trees {
            let p = t.leaf_weights(&unit, forest.config.soft);
            let fit = combine(&p, &t.leaf_values(), n);
            for (a, f) in total.iter_mut().zip(&fit) {
                *a += f;
            }
            phi.push(p);
            tree_fits.push(fit);
        }
        Ok(Self {
            unit,
            phi,
            tree_fits,
            total,
        })
    }

    /// Current sum-of-trees fit at the training rows.
    pub fn fit(&self) -> &[f64] {
        &self.total
    }

    pub fn tree_fit(&self, t: usize) -> &[f64] {
        &self.tree_fits[t]
    }
}

fn combine(phi: &[Vec<f64>], values: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (col, v) in phi.iter().zip(values) {
        for (o, p) in out.iter_mut().zip(col) {
            *o += p * v;
        }
    }
    out
}

/// Conjugate posterior of a tree's leaf values given its weight matrix.
#[derive(Debug, Clone)]
pub struct LeafPosterior {
    /// Ω = Φᵀ W Φ / σ² + I / s².
    pub precision: DMatrix<f64>,
    /// Φᵀ W r / σ².
    pub shift: DVector<f64>,
    /// Log marginal likelihood of r up to terms shared by all trees.
    pub log_ml: f64,
    chol_l: DMatrix<f64>,
}

impl LeafPosterior {
    pub fn new(
        phi: &[Vec<f64>],
        r: &[f64],
        row_weight: Option<&[f64]>,
        sigma2: f64,
        leaf_sd: f64,
    ) -> Self {
        let l = phi.len();
        let mut gram = DMatrix::<f64>::zeros(l, l);
        let mut shift = DVector::<f64>::zeros(l);
        let mut weighted = vec![0.0; r.len()];
        for a in 0..l {
            let pa = &phi[a];
            match row_weight {
                Some(w) => {
                    for i in 0..r.len() {
                        weighted[i] = pa[i] * w[i];
                    }
                }
                None => weighted.copy_from_slice(pa),
            }
            shift[a] = dot(&weighted, r) / sigma2;
            for b in a..l {
                let g = dot(&weighted, &phi[b]) / sigma2;
                gram[(a, b)] = g;
                gram[(b, a)] = g;
            }
        }
        let prior_prec = 1.0 / (leaf_sd * leaf_sd);
        for a in 0..l {
            gram[(a, a)] += prior_prec;
        }
        let chol = gram
            .clone()
            .cholesky()
            .expect("leaf precision is positive definite");
        let chol_l = chol.l();
        let half_logdet: f64 = (0..l).map(|a| chol_l[(a, a)].ln()).sum();
        let solved = chol.solve(&shift);
        let log_ml = -half_logdet - l as f64 * leaf_sd.ln() + 0.5 * shift.dot(&solved);
        Self {
            precision: gram,
            shift,
            log_ml,
            chol_l,
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        let y = self
            .chol_l
            .solve_lower_triangular(&self.shift)
            .expect("triangular solve");
        self.chol_l
            .transpose()
            .solve_upper_triangular(&y)
            .expect("triangular solve")
    }

    pub fn draw(&self, rng: &mut ChainRng) -> Vec<f64> {
        let l = self.shift.len();
        let z = DVector::from_fn(l, |_, _| std_normal(rng));
        let noise = self
            .chol_l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("triangular solve");
        (self.mean() + noise).iter().copied().collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log marginal likelihood of residual `r` under `tree` with leaves
/// integrated out.
pub fn log_marginal_likelihood(
    tree: &SoftTree,
    unit: &ColMatrix,
    r: &[f64],
    row_weight: Option<&[f64]>,
    sigma2: f64,
    leaf_sd: f64,
    soft: bool,
) -> f64 {
    let phi = tree.leaf_weights(unit, soft);
    LeafPosterior::new(&phi, r, row_weight, sigma2, leaf_sd).log_ml
}

/// Acceptance counters for one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MoveStats {
    pub grow: (u64, u64),
    pub prune: (u64, u64),
    pub change: (u64, u64),
    pub bandwidth: (u64, u64),
}

impl MoveStats {
    /// Add another sweep's (proposed, accepted) counts.
    pub fn merge(&mut self, o: &MoveStats) {
        for (a, b) in [
            (&mut self.grow, o.grow),
            (&mut self.prune, o.prune),
            (&mut self.change, o.change),
            (&mut self.bandwidth, o.bandwidth),
        ] {
            a.0 += b.0;
            a.1 += b.1;
        }
    }
}

fn draw_rule(forest: &Forest, rng: &mut ChainRng) -> (usize, f64) {
    let p = forest.split_probs.len();
    let var = if forest.config.sparse_splits {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = p - 1;
        for (j, &s) in forest.split_probs.iter().enumerate() {
            acc += s;
            if u < acc {
                chosen = j;
                break;
            }
        }
        chosen
    } else {
        rng.random_range(0..p)
    };
    let grid = &forest.grid[var];
    (var, grid[rng.random_range(0..grid.len())])
}

/// Log prior ratio P(T with leaf at `depth` split) / P(T).
fn log_grow_prior_ratio(forest: &Forest, depth: u32) -> f64 {
    let cfg = &forest.config;
    let p = split_probability(depth, cfg);
    let pc = split_probability(depth + 1, cfg);
    p.ln() + 2.0 * (1.0 - pc).ln() - (1.0 - p).ln()
}

fn grow_prob(tree: &SoftTree) -> f64 {
    if tree.nodes.len() == 1 {
        1.0
    } else {
        P_GROW
    }
}

fn prune_prob(tree: &SoftTree) -> f64 {
    if tree.nodes.len() == 1 {
        0.0
    } else {
        P_PRUNE
    }
}

struct Proposal {
    tree: SoftTree,
    phi: Vec<Vec<f64>>,
    log_ratio: f64,
    kind: usize,
}

fn propose(
    forest: &Forest,
    tree: &SoftTree,
    phi: &[Vec<f64>],
    unit: &ColMatrix,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    if forest.split_probs.is_empty() {
        return None;
    }
    let soft = forest.config.soft;
    let u: f64 = rng.random();
    let pg = grow_prob(tree);
    if u < pg {
        let leaves = tree.leaves();
        let k = rng.random_range(0..leaves.len());
        let leaf = leaves[k];
        let (var, cut) = draw_rule(forest, rng);
        let depth = tree.nodes[leaf].depth;
        let mut new = tree.clone();
        new.grow(leaf, var, cut);
        let col = &phi[k];
        let xc = unit.col(var);
        let mut left = Vec::with_capacity(col.len());
        let mut right = Vec::with_capacity(col.len());
        for (w, &x) in col.iter().zip(xc) {
            let g = gate(x, cut, tree.bandwidth, soft);
            left.push(w * (1.0 - g));
            right.push(w * g);
        }
        let mut new_phi = Vec::with_capacity(phi.len() + 1);
        new_phi.extend_from_slice(&phi[..k]);
        new_phi.push(left);
        new_phi.push(right);
        new_phi.extend_from_slice(&phi[k + 1..]);
        let nog_new = new.prunable().len() as f64;
        let log_ratio = log_grow_prior_ratio(forest, depth) + prune_prob(&new).ln()
            - nog_new.ln()
            - pg.ln()
            + (leaves.len() as f64).ln();
        Some(Proposal {
            tree: new,
            phi: new_phi,
            log_ratio,
            kind: 0,
        })
    } else if u < pg + prune_prob(tree) {
        let nog = tree.prunable();
        let node = nog[rng.random_range(0..nog.len())];
        let NodeKind::Split { left, .. } = tree.nodes[node].kind else {
            unreachable!()
        };
        let leaves = tree.leaves();
        let k = leaves.iter().position(|&l| l == left).expect("left leaf");
        let depth = tree.nodes[node].depth;
        let mut new = tree.clone();
        new.prune(node);
        let merged: Vec<f64> = phi[k].iter().zip(&phi[k + 1]).map(|(a, b)| a + b).collect();
        let mut new_phi = Vec::with_capacity(phi.len() - 1);
        new_phi.extend_from_slice(&phi[..k]);
        new_phi.push(merged);
        new_phi.extend_from_slice(&phi[k + 2..]);
        let log_ratio = -log_grow_prior_ratio(forest, depth) + grow_prob(&new).ln()
            - (new.n_leaves() as f64).ln()
            - prune_prob(tree).ln()
            + (nog.len() as f64).ln();
        Some(Proposal {
            tree: new,
            phi: new_phi,
            log_ratio,
            kind: 1,
        })
    } else {
        let internal = tree.internal();
        let node = internal[rng.random_range(0..internal.len())];
        let (var, cut) = draw_rule(forest, rng);
        let mut new = tree.clone();
        new.set_rule(node, var, cut);
        let new_phi = new.leaf_weights(unit, soft);
        Some(Proposal {
            tree: new,
            phi: new_phi,
            log_ratio: 0.0,
            kind: 2,
        })
    }
}

/// One full backfitting pass over every tree in `forest`.
///
/// `target` is the residual the whole ensemble is fit to; rows carry
/// precision `row_weight[i] / sigma2` (unit weights when `None`).
pub fn backfit_sweep(
    forest: &mut Forest,
    cache: &mut TrainingCache,
    target: &[f64],
    row_weight: Option<&[f64]>,
    sigma2: f64,
    rng: &mut ChainRng,
) -> MoveStats {
    let n = target.len();
    assert_eq!(n, cache.unit.n_rows(), "residual length must match rows");
    let mut stats = MoveStats::default();
    let leaf_sd = forest.config.leaf_sd();
    let soft = forest.config.soft;
    let b_mean = forest.config.bandwidth_prior_mean;
    let b_prior = Exp::new(1.0 / b_mean).expect("positive bandwidth mean");
    let mut partial = vec![0.0; n];

    for t in 0..forest.trees.len() {
        let old_fit = &cache.tree_fits[t];
        for i in 0..n {
            partial[i] = target[i] - (cache.total[i] - old_fit[i]);
        }

        let mut tree = forest.trees[t].clone();
        let mut phi = std::mem::take(&mut cache.phi[t]);
        let mut post = LeafPosterior::new(&phi, &partial, row_weight, sigma2, leaf_sd);

        if let Some(prop) = propose(forest, &tree, &phi, &cache.unit, rng) {
            let prop_post = LeafPosterior::new(&prop.phi, &partial, row_weight, sigma2, leaf_sd);
            let log_a = prop_post.log_ml - post.log_ml + prop.log_ratio;
            let accepted = log_a >= 0.0 || rng.random::<f64>().ln() < log_a;
            let slot = match prop.kind {
                0 => &mut stats.grow,
                1 => &mut stats.prune,
                _ => &mut stats.change,
            };
            slot.0 += 1;
            if accepted {
                slot.1 += 1;
                tree = prop.tree;
                phi = prop.phi;
                post = prop_post;
            }
        }

        if soft {
            if tree.nodes.len() == 1 {
                tree.bandwidth = b_prior.sample(rng);
            } else {
                let b = tree.bandwidth;
                let b_new = b * (BANDWIDTH_STEP * std_normal(rng)).exp();
                let mut cand = tree.clone();
                cand.bandwidth = b_new;
                let cand_phi = cand.leaf_weights(&cache.unit, true);
                let cand_post = LeafPosterior::new(&cand_phi, &partial, row_weight, sigma2, leaf_sd);
                let log_a = cand_post.log_ml - post.log_ml - (b_new - b) / b_mean + (b_new / b).ln();
                stats.bandwidth.0 += 1;
                if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
                    stats.bandwidth.1 += 1;
                    tree = cand;
                    phi = cand_phi;
                    post = cand_post;
                }
            }
        }

        let values = post.draw(rng);
        tree.set_leaf_values(&values);
        let new_fit = combine(&phi, &values, n);
        for i in 0..n {
            cache.total[i] += new_fit[i] - cache.tree_fits[t][i];
        }
        cache.tree_fits[t] = new_fit;
        cache.phi[t] = phi;
        forest.trees[t] = tree;
    }

    if forest.config.sparse_splits && !forest.split_probs.is_empty() {
        update_split_probs(forest, rng);
    }
    stats
}

/// Dirichlet(1/p + counts) draw for the split-variable proportions.
fn update_split_probs(forest: &mut Forest, rng: &mut ChainRng) {
    let p = forest.split_probs.len();
    let mut counts = vec![0.0; p];
    for t in &forest.trees {
        for v in t.split_vars() {
            counts[v] += 1.0;
        }
    }
    let draws: Vec<f64> = counts
        .iter()
        .map(|c| {
            let g: f64 = Gamma::new(1.0 / p as f64 + c, 1.0)
                .expect("positive shape")
                .sample(rng);
            g.max(1e-300)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    forest.split_probs = draws.iter().map(|g| g / total).collect();
}
