//! Population average treatment effect estimation for a primary data source
//! that borrows strength from supplemental sources through multisource
//! exchangeability models.
//!
//! Each exchangeability pattern pools the primary source with a subset of the
//! supplemental sources. Patterns are weighted by their marginal likelihood
//! under one of two outcome models ([`blm`], a conjugate linear model, or
//! [`bart`], a tree ensemble whose node prior admits a closed-form marginal)
//! and a model prior. The effect posterior ([`pate`]) mixes per-pattern fits
//! with Bayesian-bootstrap weighting of the primary covariates.
//!
//! Randomness flows from a single seed through [`seed::derive_seed`]; the
//! data-parallel loops in [`exec`] give identical results sequentially and on
//! any number of threads.

pub mod bart;
pub mod blm;
pub mod cli;
pub mod data;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod mem;
pub mod model;
pub mod pate;
pub mod seed;
pub mod sim;

pub use data::{Dataset, Formula, Row, Schema};
pub use error::{Error, Result};
pub use exec::Execution;
pub use mem::{ExchPattern, MemSpace, ModelPrior, PriorKind};
pub use model::{ModelKind, ModelSpec};
pub use pate::{pate_posterior, EstimandSpec, PatePosterior, PateSummary};
