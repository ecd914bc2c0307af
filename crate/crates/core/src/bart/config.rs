use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg::{dependent_columns, least_squares};

/// Terminal-node prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodePrior {
    /// `μ ~ N(0, τ²)`. Fitting only; no closed-form marginal likelihood.
    Default { tau: f64 },
    /// `μ ~ N(0, σ²/γ)`.
    Modified { gamma: f64 },
}

impl NodePrior {
    /// Prior variance of a terminal value given `σ²`.
    pub fn variance(&self, sigma2: f64) -> f64 {
        match *self {
            NodePrior::Default { tau } => tau * tau,
            NodePrior::Modified { gamma } => sigma2 / gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BartConfig {
    pub m: usize,
    pub node_prior: NodePrior,
    pub nu: f64,
    pub lambda: f64,
    /// Split probability `α (1 + depth)^(-β_depth)`.
    pub alpha: f64,
    pub beta_depth: f64,
    pub grid_size: usize,
    pub n_burn: usize,
    pub n_keep: usize,
    /// Adds change-of-rule proposals to the grow/prune mix.
    pub change_moves: bool,
}

pub const DEFAULT_TREES: usize = 200;
pub const DEFAULT_NU: f64 = 3.0;
pub const DEFAULT_K: f64 = 2.0;
pub const DEFAULT_SIGMA_QUANTILE: f64 = 0.9;

impl BartConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("bart config: {what}")));
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        match self.node_prior {
            NodePrior::Default { tau } if !(tau > 0.0 && tau.is_finite()) => return bad("tau must be positive"),
            NodePrior::Modified { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                return bad("gamma must be positive")
            }
            _ => {}
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        // α = 0 is accepted: it forces stumps
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1)");
        }
        if !(self.beta_depth >= 0.0 && self.beta_depth.is_finite()) {
            return bad("beta_depth must be non-negative");
        }
        if self.grid_size == 0 {
            return bad("grid size must be positive");
        }
        Ok(())
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.node_prior {
            NodePrior::Modified { gamma } => Some(gamma),
            NodePrior::Default { .. } => None,
        }
    }
}

/// Residual variance of the least-squares fit of `y` on `[1, X]`, dropping
/// collinear predictors. Falls back to the sample variance when there are too
/// few rows.
pub fn sigma_hat2(x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let n = y.len();
    if n < 2 {
        return Err(Error::invalid("at least two rows are needed"));
    }
    let mut full = DMatrix::from_element(n, x.ncols() + 1, 1.0);
    full.columns_mut(1, x.ncols()).copy_from(x);
    let dep = dependent_columns(&full);
    let keep: Vec<usize> = (0..full.ncols()).filter(|j| !dep.contains(j)).collect();
    let d = full.select_columns(&keep);
    let yv = DVector::from_column_slice(y);
    let s2 = if n > d.ncols() {
        let names: Vec<String> = keep.iter().map(|j| format!("#{j}")).collect();
        least_squares(&d, &yv, &names)?.sigma2
    } else {
        let mean = yv.mean();
        yv.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    };
    if !(s2 > 1e-24) {
        return Err(Error::DegenerateFit);
    }
    Ok(s2)
}

/// Defaults for a standardised outcome: `m = 200`, `ν = 3`, λ at the 90%
/// point, `α = 0.95`, `β_depth = 2`, and the modified node prior with `γ`
/// from [`GammaRule::Matched`].
pub fn default_bart_config(x: &DMatrix<f64>, y: &[f64]) -> Result<BartConfig> {
    let s2 = sigma_hat2(x, y)?;
    let m = DEFAULT_TREES;
    Ok(BartConfig {
        m,
        node_prior: NodePrior::Modified { gamma: modified_gamma(m, s2) },
        nu: DEFAULT_NU,
        lambda: lambda_for(s2, DEFAULT_NU, DEFAULT_SIGMA_QUANTILE)?,
        alpha: 0.95,
        beta_depth: 2.0,
        grid_size: 100,
        n_burn: 100,
        n_keep: 100,
        change_moves: false,
    })
}

/// How the modified-prior `γ` is derived from `m` and `σ̂²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaRule {
    /// `γ = 16 m σ̂²`: at `σ² = σ̂²` the node variance `σ²/γ` is the default
    /// `1/(16m)` of a unit-range outcome.
    #[default]
    Matched,
    /// `γ = 1 / (16 m σ̂²)`, giving node variance `16 m σ̂² σ²`.
    Reciprocal,
}

impl GammaRule {
    pub fn gamma(self, m: usize, sigma_hat2: f64) -> f64 {
        let v = 16.0 * m as f64 * sigma_hat2;
        match self {
            GammaRule::Matched => v,
            GammaRule::Reciprocal => 1.0 / v,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GammaRule::Matched => "matched",
            GammaRule::Reciprocal => "reciprocal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "matched" => Ok(GammaRule::Matched),
            "reciprocal" => Ok(GammaRule::Reciprocal),
            _ => Err(Error::invalid(format!("unknown gamma rule `{s}` (expected matched or reciprocal)"))),
        }
    }
}

/// `γ` under the default [`GammaRule`].
pub fn modified_gamma(m: usize, sigma_hat2: f64) -> f64 {
    GammaRule::default().gamma(m, sigma_hat2)
}

/// `τ = 0.5 / (k √m)` for an outcome of unit range.
pub fn default_tau(m: usize, k: f64) -> f64 {
    0.5 / (k * (m as f64).sqrt())
}

/// λ such that `Pr(σ² < σ̂²) = q` under `σ² ~ νλ / χ²_ν`.
pub fn lambda_for(sigma_hat2: f64, nu: f64, q: f64) -> Result<f64> {
    let chi = ChiSquared::new(nu).map_err(|e| Error::invalid(format!("chi-square({nu}): {e}")))?;
    Ok(sigma_hat2 * chi.inverse_cdf(1.0 - q) / nu)
}
