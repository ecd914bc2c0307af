//! The two outcome models behind one interface: block marginal likelihoods
//! for exchangeability weighting, and posterior fits for effect estimation.

use rand::Rng;

use crate::bart::{self, BartConfig, GammaRule, NodePrior, TreeEnsembleDraw};
use crate::blm::{self, CoefficientDraw, NigHyperparams};
use crate::data::{standardize_outcome, Dataset, DesignBuilder, DesignMatrix, Formula, OutcomeTransform};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Blm,
    Bart,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Blm => "blm",
            ModelKind::Bart => "bart",
        }
    }
}

/// Which data the empirical-Bayes BLM hyperparameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HyperSource {
    /// Recomputed from each block being modelled.
    #[default]
    PerBlock,
    /// Computed once from the primary source and reused for every block.
    Primary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodePriorKind {
    #[default]
    Modified,
    Default,
}

/// User-facing overrides of the data-driven tree-ensemble defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct BartOptions {
    pub trees: usize,
    pub burn: usize,
    pub prior_draws: usize,
    pub alpha: f64,
    pub beta_depth: f64,
    pub nu: f64,
    pub k: f64,
    pub node_prior: NodePriorKind,
    pub grid: usize,
    pub change_moves: bool,
    /// Fixed `γ`; `None` applies `gamma_rule` to each block's `σ̂²`.
    pub gamma: Option<f64>,
    pub gamma_rule: GammaRule,
}

impl Default for BartOptions {
    fn default() -> Self {
        BartOptions {
            trees: bart::DEFAULT_TREES,
            burn: 100,
            prior_draws: 100,
            alpha: 0.95,
            beta_depth: 2.0,
            nu: bart::DEFAULT_NU,
            k: bart::DEFAULT_K,
            node_prior: NodePriorKind::Modified,
            grid: 100,
            change_moves: false,
            gamma: None,
            gamma_rule: GammaRule::Matched,
        }
    }
}

impl BartOptions {
    /// Configuration for a block with predictors `x` and standardised `z`.
    pub fn config(&self, x: &nalgebra::DMatrix<f64>, z: &[f64], n_keep: usize) -> Result<BartConfig> {
        let s2 = bart::sigma_hat2(x, z)?;
        let node_prior = match self.node_prior {
            NodePriorKind::Modified => NodePrior::Modified {
                gamma: self.gamma.unwrap_or_else(|| self.gamma_rule.gamma(self.trees, s2)),
            },
            NodePriorKind::Default => NodePrior::Default { tau: bart::default_tau(self.trees, self.k) },
        };
        let cfg = BartConfig {
            m: self.trees,
            node_prior,
            nu: self.nu,
            lambda: bart::lambda_for(s2, self.nu, 0.9)?,
            alpha: self.alpha,
            beta_depth: self.beta_depth,
            grid_size: self.grid,
            n_burn: self.burn,
            n_keep,
            change_moves: self.change_moves,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Outcome model and its options.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Linear-model formula. The tree ensemble uses its predictors only.
    pub formula: Formula,
    pub hyper: HyperSource,
    pub bart: BartOptions,
}

impl ModelSpec {
    pub fn blm(formula: Formula) -> Self {
        ModelSpec {
            kind: ModelKind::Blm,
            formula,
            hyper: HyperSource::PerBlock,
            bart: BartOptions::default(),
        }
    }

    pub fn bart(formula: Formula) -> Self {
        ModelSpec {
            kind: ModelKind::Bart,
            formula,
            hyper: HyperSource::PerBlock,
            bart: BartOptions::default(),
        }
    }

    /// Formula actually used by this model.
    pub fn effective_formula(&self) -> Formula {
        match self.kind {
            ModelKind::Blm => self.formula.clone(),
            ModelKind::Bart => self.formula.predictors_only(),
        }
    }

    pub fn builder(&self, data: &Dataset) -> Result<DesignBuilder> {
        DesignBuilder::new(data, &self.effective_formula())
    }

    /// Predictor count `r` for the exchangeability priors: design columns
    /// including the intercept for the linear model, predictor variables for
    /// the tree ensemble.
    pub fn predictor_count(&self, data: &Dataset) -> Result<usize> {
        Ok(self.builder(data)?.ncols())
    }
}

/// Log marginal likelihood of the outcomes in `rows` under `spec`, in outcome
/// units. `seed` drives the prior Monte Carlo of the tree ensemble.
pub fn block_log_marginal(data: &Dataset, rows: &[usize], spec: &ModelSpec, seed: u64, exec: Execution) -> Result<f64> {
    let builder = spec.builder(data)?;
    let design = builder.build(data, rows);
    let y = data.outcomes(rows);
    match spec.kind {
        ModelKind::Blm => {
            let prior = blm_prior(data, &builder, &design, &y, spec.hyper)?;
            blm::marginal_log_likelihood(&design, &y, &prior)
        }
        ModelKind::Bart => {
            let (z, t) = standardize_outcome(&y)?;
            let cfg = spec.bart.config(&design.values, &z, 1)?;
            let mut rng = crate::seed::rng_from_seed(seed);
            let ml = bart::marginal_log_likelihood_prior_mc(&design, &z, &cfg, spec.bart.prior_draws, &mut rng, exec)?;
            // density of y = scale · z + shift
            Ok(ml - y.len() as f64 * t.scale.ln())
        }
    }
}

fn blm_prior(
    data: &Dataset,
    builder: &DesignBuilder,
    design: &DesignMatrix,
    y: &[f64],
    hyper: HyperSource,
) -> Result<NigHyperparams> {
    match hyper {
        HyperSource::PerBlock => blm::default_hyperparams(design, y),
        HyperSource::Primary => {
            let rows = data.rows_of(&[0]);
            blm::default_hyperparams(&builder.build(data, &rows), &data.outcomes(&rows))
        }
    }
}

/// Posterior draws of a model fitted to one block.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Blm { draws: Vec<CoefficientDraw> },
    Bart { draws: Vec<TreeEnsembleDraw>, transform: OutcomeTransform },
}

/// A single posterior draw of the conditional mean function.
#[derive(Debug, Clone, Copy)]
pub enum ModelDraw<'a> {
    Blm(&'a CoefficientDraw),
    Bart(&'a TreeEnsembleDraw, &'a OutcomeTransform),
}

impl FittedModel {
    pub fn len(&self) -> usize {
        match self {
            FittedModel::Blm { draws } => draws.len(),
            FittedModel::Bart { draws, .. } => draws.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn draw(&self, b: usize) -> ModelDraw<'_> {
        match self {
            FittedModel::Blm { draws } => ModelDraw::Blm(&draws[b]),
            FittedModel::Bart { draws, transform } => ModelDraw::Bart(&draws[b], transform),
        }
    }
}

impl ModelDraw<'_> {
    /// Conditional mean at each row, in outcome units.
    pub fn conditional_mean(&self, rows: &DesignMatrix) -> Result<Vec<f64>> {
        match *self {
            ModelDraw::Blm(d) => {
                if rows.ncols() != d.beta.len() {
                    return Err(Error::ColumnMismatch { expected: d.beta.len(), found: rows.ncols() });
                }
                Ok((&rows.values * &d.beta).iter().cloned().collect())
            }
            ModelDraw::Bart(d, t) => bart::predict(d, rows, t),
        }
    }
}

/// Fits `spec` to the outcomes in `rows` and returns `count` posterior draws.
pub fn fit_block<R: Rng + ?Sized>(
    data: &Dataset,
    rows: &[usize],
    spec: &ModelSpec,
    count: usize,
    rng: &mut R,
) -> Result<FittedModel> {
    let builder = spec.builder(data)?;
    let design = builder.build(data, rows);
    let y = data.outcomes(rows);
    match spec.kind {
        ModelKind::Blm => {
            let prior = blm_prior(data, &builder, &design, &y, spec.hyper)?;
            let post = blm::posterior(&design, &y, &prior)?;
            Ok(FittedModel::Blm { draws: blm::sample_coefficients(&post, count, rng)? })
        }
        ModelKind::Bart => {
            let (z, transform) = standardize_outcome(&y)?;
            let cfg = spec.bart.config(&design.values, &z, count)?;
            Ok(FittedModel::Bart { draws: bart::fit_mcmc(&design, &z, &cfg, rng)?, transform })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Row;
    use crate::seed::rng_from_seed;

    fn data() -> Dataset {
        let rows = (0..40)
            .map(|i| {
                let x = (i as f64 * 0.37).sin();
                let a = i % 2 == 0;
                Row {
                    y: 1.0 + f64::from(u8::from(a)) + x + 0.3 * (i as f64 * 1.7).cos(),
                    treated: a,
                    compliant: None,
                    source: usize::from(i >= 20),
                    x: vec![x],
                }
            })
            .collect();
        Dataset::new(rows, vec!["P".into(), "S".into()], vec!["x".into()]).unwrap()
    }

    #[test]
    fn predictor_counts() {
        let d = data();
        let f = Formula::main_effects(d.covariate_names());
        assert_eq!(ModelSpec::blm(f.clone()).predictor_count(&d).unwrap(), 3);
        assert_eq!(ModelSpec::bart(f).predictor_count(&d).unwrap(), 2);
    }

    #[test]
    fn frozen_hyperparameters_change_the_block_marginal() {
        let d = data();
        let mut spec = ModelSpec::blm(Formula::main_effects(d.covariate_names()));
        let rows = d.rows_of(&[1]);
        let own = block_log_marginal(&d, &rows, &spec, 0, Execution::Sequential).unwrap();
        spec.hyper = HyperSource::Primary;
        let frozen = block_log_marginal(&d, &rows, &spec, 0, Execution::Sequential).unwrap();
        assert!(own.is_finite() && frozen.is_finite());
        assert_ne!(own, frozen);
        // the primary block is unaffected by the switch
        let p = d.rows_of(&[0]);
        let a = block_log_marginal(&d, &p, &spec, 0, Execution::Sequential).unwrap();
        spec.hyper = HyperSource::PerBlock;
        let b = block_log_marginal(&d, &p, &spec, 0, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bart_block_marginal_accounts_for_scale() {
        let d = data();
        let mut spec = ModelSpec::bart(Formula::main_effects(d.covariate_names()));
        spec.bart.trees = 10;
        spec.bart.prior_draws = 10;
        spec.bart.gamma = Some(0.5);
        let rows = d.rows_of(&[0]);
        let base = block_log_marginal(&d, &rows, &spec, 3, Execution::Sequential).unwrap();
        let scaled = d.with_outcomes(d.rows().iter().map(|r| r.y * 10.0));
        let moved = block_log_marginal(&scaled, &rows, &spec, 3, Execution::Sequential).unwrap();
        assert!((moved - (base - 20.0 * 10f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn fits_return_requested_draws() {
        let d = data();
        let spec = ModelSpec::blm(Formula::main_effects(d.covariate_names()));
        let fit = fit_block(&d, &d.rows_of(&[0, 1]), &spec, 7, &mut rng_from_seed(1)).unwrap();
        assert_eq!(fit.len(), 7);
        let mut bspec = ModelSpec::bart(Formula::main_effects(d.covariate_names()));
        bspec.bart.trees = 5;
        bspec.bart.burn = 5;
        let fit = fit_block(&d, &d.rows_of(&[0]), &bspec, 3, &mut rng_from_seed(1)).unwrap();
        assert_eq!(fit.len(), 3);
    }
}
