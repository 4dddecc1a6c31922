//! Longitudinal Bayesian causal forests.
//!
//! The outcome model is
//!
//! ```text
//! y_ij = μ(K_ij, π_i) + τ(W_i, t_ij) z_i + (1, t_ij) α_i + ε_ij,   ε_ij ~ N(0, σ²)
//! ```
//!
//! with soft-tree ensembles for μ and τ and per-subject random intercepts
//! and slopes α_i under either a Gaussian / inverse-Wishart prior or a
//! horseshoe prior. [`sampler::run_gibbs`] fits the model; [`estimands`]
//! turns posterior draws into causal summaries.

pub mod dist;
pub mod error;
pub mod estimands;
pub mod eval;
pub mod forest;
pub mod panel;
pub mod random_effects;
pub mod sampler;
pub mod simgen;

pub use error::{Error, Result};
