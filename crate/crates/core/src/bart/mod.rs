//! Bayesian additive regression trees: configuration, cutpoint grids, the
//! backfitting sampler, and the prior Monte Carlo marginal likelihood under
//! the `N(0, σ²/γ)` terminal-node prior.
//!
//! With that prior, terminal values and `σ²` integrate out in closed form
//! for a fixed forest: `y | T ~ t_ν(0, λU)` with
//! `U = I + (m/γ) R` and `R` the shared-leaf fraction matrix. The marginal
//! likelihood then averages this density over forests from the tree prior.

mod config;
mod grid;
mod marginal;
mod mcmc;
mod tree;

pub use config::{
    default_bart_config, default_tau, GammaRule, lambda_for, modified_gamma, sigma_hat2, BartConfig, NodePrior, DEFAULT_K,
    DEFAULT_NU, DEFAULT_TREES,
};
pub use grid::CutGrid;
pub use marginal::{marginal_log_likelihood_prior_mc, prior_mc_log_densities, sample_prior_trees, shared_node_correlation};
pub use mcmc::{fit_mcmc, predict, BartSampler, Move, MoveStats, TreeEnsembleDraw};
pub use tree::{Node, Tree};
