//! Soft Bayesian additive regression tree ensembles.
//!
//! A [`Forest`] owns its trees together with everything needed to evaluate
//! them on new raw covariates: the per-column unit scaler and the cutpoint
//! grid. Training-time caches live in [`TrainingCache`].

mod backfit;
mod sigma;
mod tree;

pub use backfit::{backfit_sweep, log_marginal_likelihood, LeafPosterior, MoveStats, TrainingCache};
pub use sigma::{least_squares_sigma2, update_sigma2, SigmaState};
pub use tree::{gate, logistic, Node, NodeKind, SoftTree};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::quantile_sorted;
use crate::error::{Error, Result};

/// Column-major covariate matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColMatrix {
    cols: Vec<Vec<f64>>,
    n: usize,
}

impl ColMatrix {
    pub fn from_columns(cols: Vec<Vec<f64>>) -> Self {
        let n = cols.first().map_or(0, Vec::len);
        assert!(cols.iter().all(|c| c.len() == n), "ragged columns");
        Self { cols, n }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let cols = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Self {
            cols,
            n: rows.len(),
        }
    }

    /// Matrix with `n` rows and no columns.
    pub fn empty(n: usize) -> Self {
        Self { cols: vec![], n }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }

    pub fn push_col(&mut self, col: Vec<f64>) {
        if self.cols.is_empty() && self.n == 0 {
            self.n = col.len();
        }
        assert_eq!(col.len(), self.n, "column length mismatch");
        self.cols.push(col);
    }
}

/// Hyperparameters of one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    /// Number of trees; zero disables the ensemble.
    pub n_trees: usize,
    pub eta: f64,
    pub beta: f64,
    pub k_leaf: f64,
    pub soft: bool,
    /// Prior mean of the per-tree bandwidth as a fraction of covariate range.
    pub bandwidth_prior_mean: f64,
    pub n_cutpoints: usize,
    /// Dirichlet prior on split-variable proportions.
    pub sparse_splits: bool,
}

impl ForestConfig {
    /// Prognostic ensemble defaults: 200 trees, η = 0.95, β = 2.
    pub fn prognostic() -> Self {
        Self {
            n_trees: 200,
            eta: 0.95,
            beta: 2.0,
            k_leaf: 2.0,
            soft: true,
            bandwidth_prior_mean: 0.1,
            n_cutpoints: 100,
            sparse_splits: false,
        }
    }

    /// Treatment ensemble defaults: 50 trees, η = 0.25, β = 3.
    pub fn treatment() -> Self {
        Self {
            n_trees: 50,
            eta: 0.25,
            beta: 3.0,
            ..Self::prognostic()
        }
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.n_trees = n_trees;
        self
    }

    pub fn disabled() -> Self {
        Self::prognostic().with_trees(0)
    }

    /// Standard deviation of the N(0, s²) leaf prior on the standardized
    /// outcome scale: 0.5 / (k √m).
    pub fn leaf_sd(&self) -> f64 {
        0.5 / (self.k_leaf * (self.n_trees.max(1) as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta must be in (0,1), got {}", self.eta)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.k_leaf > 0.0) || !(self.bandwidth_prior_mean > 0.0) || self.n_cutpoints == 0 {
            return Err(Error::Config(
                "k_leaf, bandwidth_prior_mean and n_cutpoints must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Prior probability that a node at `depth` splits: η (1 + depth)^(−β).
pub fn split_probability(depth: u32, cfg: &ForestConfig) -> f64 {
    cfg.eta * (1.0 + depth as f64).powf(-cfg.beta)
}

/// Affine map of each raw covariate column onto [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &ColMatrix) -> Self {
        let mut min = Vec::with_capacity(x.n_cols());
        let mut range = Vec::with_capacity(x.n_cols());
        for j in 0..x.n_cols() {
            let lo = x.col(j).iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.col(j).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, r) = if lo.is_finite() && hi > lo {
                (lo, hi - lo)
            } else if lo.is_finite() {
                (lo, 1.0)
            } else {
                (0.0, 1.0)
            };
            min.push(lo);
            range.push(r);
        }
        Self { min, range }
    }

    pub fn transform(&self, x: &ColMatrix) -> Result<ColMatrix> {
        if x.n_cols() != self.min.len() {
            return Err(Error::Dimension {
                expected: self.min.len(),
                got: x.n_cols(),
            });
        }
        let cols = (0..x.n_cols())
            .map(|j| {
                x.col(j)
                    .iter()
                    .map(|v| (v - self.min[j]) / self.range[j])
                    .collect()
            })
            .collect();
        Ok(ColMatrix { cols, n: x.n })
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.min.len() {
            return Err(Error::Dimension {
                expected: self.min.len(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.min[j]) / self.range[j])
            .collect())
    }
}

/// Cutpoint grid: for every column, `n_cutpoints` empirical quantiles of the
/// unit-scaled training column at probabilities k / (n + 1).
pub fn quantile_grid(x: &ColMatrix, n_cutpoints: usize) -> Vec<Vec<f64>> {
    (0..x.n_cols())
        .map(|j| {
            let mut sorted = x.col(j).to_vec();
            sorted.sort_by(f64::total_cmp);
            if sorted.is_empty() {
                return (1..=n_cutpoints)
                    .map(|k| k as f64 / (n_cutpoints + 1) as f64)
                    .collect();
            }
            (1..=n_cutpoints)
                .map(|k| quantile_sorted(&sorted, k as f64 / (n_cutpoints + 1) as f64))
                .collect()
        })
        .collect()
}

/// A sum-of-soft-trees ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub config: ForestConfig,
    pub scaler: Scaler,
    pub grid: Vec<Vec<f64>>,
    /// Split-variable selection probabilities.
    pub split_probs: Vec<f64>,
    pub trees: Vec<SoftTree>,
}

impl Forest {
    /// Ensemble of zero-valued stumps trained on raw covariates `x`.
    pub fn new(config: ForestConfig, x: &ColMatrix) -> Result<Self> {
        config.validate()?;
        let scaler = Scaler::fit(x);
        let unit = scaler.transform(x)?;
        let grid = quantile_grid(&unit, config.n_cutpoints);
        let p = x.n_cols();
        let b0 = config.bandwidth_prior_mean;
        Ok(Self {
            trees: (0..config.n_trees).map(|_| SoftTree::stump(0.0, b0)).collect(),
            split_probs: vec![1.0 / p.max(1) as f64; p],
            grid,
            scaler,
            config,
        })
    }

    pub fn n_covariates(&self) -> usize {
        self.scaler.min.len()
    }

    /// Sum-of-trees prediction on raw covariates.
    pub fn predict(&self, x: &ColMatrix) -> Result<Vec<f64>> {
        let unit = self.scaler.transform(x)?;
        Ok(self.predict_unit(&unit))
    }

    /// Prediction on covariates already mapped through [`Self::scaler`].
    pub fn predict_unit(&self, unit: &ColMatrix) -> Vec<f64> {
        let mut out = vec![0.0; unit.n_rows()];
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.predict(unit, self.config.soft)) {
                *o += v;
            }
        }
        out
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        let unit = self.scaler.transform_row(row)?;
        Ok(self
            .trees
            .iter()
            .map(|t| t.predict_row(&unit, self.config.soft))
            .sum())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Convenience: ensemble prediction over raw covariate rows.
pub fn predict_ensemble(forest: &Forest, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != forest.n_covariates()) {
        return Err(Error::Dimension {
            expected: forest.n_covariates(),
            got: r.len(),
        });
    }
    forest.predict(&ColMatrix::from_rows(rows))
}
