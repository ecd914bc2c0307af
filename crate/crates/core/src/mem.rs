//! Multisource exchangeability models: the `2^H` patterns of which
//! supplemental sources share parameters with the primary source, their
//! prior probabilities, marginal likelihoods and posterior weights.

use std::collections::BTreeMap;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{block_log_marginal, ModelSpec};
use crate::seed::derive_seed;

pub const MAX_SUPPLEMENTAL: usize = 20;

/// `z[h]` is true when supplemental source `h + 1` is exchangeable with the
/// primary source.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExchPattern {
    pub z: Vec<bool>,
}

impl ExchPattern {
    pub fn h(&self) -> usize {
        self.z.len()
    }

    pub fn n_exchangeable(&self) -> usize {
        self.z.iter().filter(|&&b| b).count()
    }

    /// Fraction of supplemental sources borrowed; 0 when there are none.
    pub fn borrowed_fraction(&self) -> f64 {
        if self.z.is_empty() {
            0.0
        } else {
            self.n_exchangeable() as f64 / self.h() as f64
        }
    }
}

/// All `2^H` patterns. Pattern `q` (0-based) has `z_h = 1 − bit (h−1) of q`,
/// so the first pattern borrows everything, the last borrows nothing, and
/// source 1 alternates fastest.
pub fn enumerate_patterns(h: usize) -> Result<Vec<ExchPattern>> {
    if h > MAX_SUPPLEMENTAL {
        return Err(Error::invalid(format!(
            "{h} supplemental sources give 2^{h} exchangeability patterns; at most {MAX_SUPPLEMENTAL} are supported"
        )));
    }
    Ok((0..1usize << h)
        .map(|q| ExchPattern {
            z: (0..h).map(|b| (q >> b) & 1 == 0).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    /// `Pr(Z_h = 1) = 1/2`.
    FlatHalf,
    /// `(1/2)^r`.
    PowerR,
    /// `1/r`.
    InverseR,
    /// `(1/2)^(r/2)`.
    PowerHalfR,
}

impl PriorKind {
    pub fn label(self) -> &'static str {
        match self {
            PriorKind::FlatHalf => "half",
            PriorKind::PowerR => "power-r",
            PriorKind::InverseR => "inverse-r",
            PriorKind::PowerHalfR => "power-half-r",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "half" | "flat-half" => Ok(PriorKind::FlatHalf),
            "power-r" => Ok(PriorKind::PowerR),
            "inverse-r" => Ok(PriorKind::InverseR),
            "power-half-r" => Ok(PriorKind::PowerHalfR),
            _ => Err(Error::invalid(format!(
                "unknown prior `{s}` (expected half, power-r, inverse-r or power-half-r)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelPrior {
    pub kind: PriorKind,
    pub r: usize,
}

impl ModelPrior {
    pub fn new(kind: PriorKind, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::invalid("the predictor count r must be at least 1"));
        }
        Ok(ModelPrior { kind, r })
    }

    /// `Pr(Z_h = 1)`.
    pub fn p_exchangeable(&self) -> f64 {
        let r = self.r as f64;
        match self.kind {
            PriorKind::FlatHalf => 0.5,
            PriorKind::PowerR => 0.5f64.powf(r),
            PriorKind::InverseR => 1.0 / r,
            PriorKind::PowerHalfR => 0.5f64.powf(r / 2.0),
        }
    }

    /// `ln Pr(Z_h = 1)`, finite even where the probability underflows.
    pub fn ln_p(&self) -> f64 {
        let r = self.r as f64;
        let ln_half = -std::f64::consts::LN_2;
        match self.kind {
            PriorKind::FlatHalf => ln_half,
            PriorKind::PowerR => r * ln_half,
            PriorKind::InverseR => -r.ln(),
            PriorKind::PowerHalfR => 0.5 * r * ln_half,
        }
    }

    /// `ln Pr(Z_h = 0)`.
    pub fn ln_q(&self) -> f64 {
        (-self.p_exchangeable()).ln_1p()
    }
}

/// `ln p(Ω)`: independent sources, `Π_h p^z_h (1 − p)^(1 − z_h)`.
pub fn log_model_prior(pattern: &ExchPattern, prior: &ModelPrior) -> f64 {
    let (lp, lq) = (prior.ln_p(), prior.ln_q());
    pattern.z.iter().map(|&z| if z { lp } else { lq }).sum()
}

pub fn model_prior(pattern: &ExchPattern, prior: &ModelPrior) -> f64 {
    log_model_prior(pattern, prior).exp()
}

/// Source indices (0 = primary) making up each block of a pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blocks {
    /// Primary plus every exchangeable source.
    pub pooled: Vec<usize>,
    /// One block per non-exchangeable source.
    pub singletons: Vec<usize>,
}

impl Blocks {
    pub fn all(&self) -> Vec<Vec<usize>> {
        std::iter::once(self.pooled.clone())
            .chain(self.singletons.iter().map(|&s| vec![s]))
            .collect()
    }
}

pub fn pool(data: &Dataset, pattern: &ExchPattern) -> Result<Blocks> {
    if pattern.h() != data.n_supplemental() {
        return Err(Error::invalid(format!(
            "pattern has {} entries but the dataset has {} supplemental sources",
            pattern.h(),
            data.n_supplemental()
        )));
    }
    let mut pooled = vec![0];
    let mut singletons = Vec::new();
    for (h, &z) in pattern.z.iter().enumerate() {
        if z {
            pooled.push(h + 1);
        } else {
            singletons.push(h + 1);
        }
    }
    Ok(Blocks { pooled, singletons })
}

fn mask_of(sources: &[usize]) -> u64 {
    sources.iter().fold(0, |m, &s| m | 1 << s)
}

fn pattern_label(pattern: &ExchPattern) -> String {
    if pattern.z.is_empty() {
        return "()".into();
    }
    let bits: Vec<&str> = pattern.z.iter().map(|&z| if z { "1" } else { "0" }).collect();
    format!("({})", bits.join(","))
}

fn block_label(data: &Dataset, sources: &[usize]) -> String {
    sources.iter().map(|&s| data.sources()[s].as_str()).collect::<Vec<_>>().join("+")
}

/// Sum of block log marginal likelihoods for one pattern. Block `B` uses the
/// seed `derive_seed(seed, [mask(B)])`.
pub fn pattern_log_marginal(
    data: &Dataset,
    pattern: &ExchPattern,
    spec: &ModelSpec,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    let blocks = pool(data, pattern)?;
    blocks
        .all()
        .iter()
        .map(|b| annotated_block(data, pattern, b, spec, seed, exec))
        .sum()
}

fn annotated_block(
    data: &Dataset,
    pattern: &ExchPattern,
    sources: &[usize],
    spec: &ModelSpec,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    let mask = mask_of(sources);
    block_log_marginal(data, &data.rows_of(sources), spec, derive_seed(seed, &[mask]), exec).map_err(|e| {
        Error::Block {
            module: "mem",
            pattern: pattern_label(pattern),
            block: block_label(data, sources),
            source: Box::new(e),
        }
    })
}

/// `ω_q ∝ exp(log_marginal_q + log_prior_q)`, normalised in log space.
pub fn posterior_weights(log_marginals: &[f64], log_priors: &[f64]) -> Result<Vec<f64>> {
    if log_marginals.len() != log_priors.len() || log_marginals.is_empty() {
        return Err(Error::invalid("log marginals and priors must be non-empty and of equal length"));
    }
    if log_marginals.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numerical("non-finite log marginal likelihood".into()));
    }
    let joint: Vec<f64> = log_marginals.iter().zip(log_priors).map(|(m, p)| m + p).collect();
    let max = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("every pattern has zero posterior mass".into()));
    }
    let unnorm: Vec<f64> = joint.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|v| v / total).collect())
}

/// Patterns with priors, marginals and posterior weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MemSpace {
    pub patterns: Vec<ExchPattern>,
    pub prior: ModelPrior,
    pub log_priors: Vec<f64>,
    pub prior_probs: Vec<f64>,
    pub log_marginals: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MemSpace {
    /// Assembles a space from per-pattern log marginals.
    pub fn from_log_marginals(patterns: Vec<ExchPattern>, prior: ModelPrior, log_marginals: Vec<f64>) -> Result<Self> {
        let log_priors: Vec<f64> = patterns.iter().map(|p| log_model_prior(p, &prior)).collect();
        let weights = posterior_weights(&log_marginals, &log_priors)?;
        Ok(MemSpace {
            prior_probs: log_priors.iter().map(|v| v.exp()).collect(),
            patterns,
            prior,
            log_priors,
            log_marginals,
            weights,
        })
    }

    /// Evaluates every pattern. Each distinct block is computed once and
    /// shared by all patterns containing it; blocks run under `exec`.
    pub fn compute<R: Rng + ?Sized>(
        data: &Dataset,
        spec: &ModelSpec,
        prior: ModelPrior,
        rng: &mut R,
        exec: Execution,
    ) -> Result<Self> {
        let seed = rng.next_u64();
        let patterns = enumerate_patterns(data.n_supplemental())?;
        let mut blocks: BTreeMap<u64, (usize, Vec<usize>)> = BTreeMap::new();
        for (q, p) in patterns.iter().enumerate() {
            for b in pool(data, p)?.all() {
                blocks.entry(mask_of(&b)).or_insert((q, b));
            }
        }
        let todo: Vec<(u64, usize, Vec<usize>)> = blocks.into_iter().map(|(m, (q, b))| (m, q, b)).collect();
        let values = exec.map_slice(&todo, |(_, q, b)| annotated_block(data, &patterns[*q], b, spec, seed, exec));
        let mut cache = BTreeMap::new();
        for ((mask, _, _), v) in todo.iter().zip(values) {
            cache.insert(*mask, v?);
        }
        let log_marginals = patterns
            .iter()
            .map(|p| Ok(pool(data, p)?.all().iter().map(|b| cache[&mask_of(b)]).sum()))
            .collect::<Result<Vec<f64>>>()?;
        MemSpace::from_log_marginals(patterns, prior, log_marginals)
    }

    /// Expected fraction of supplemental sources borrowed, `Σ_q ω_q · |z_q| / H`.
    /// For one supplemental source this is the weight of the borrowing pattern.
    pub fn borrow_weight(&self) -> f64 {
        self.patterns
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * p.borrowed_fraction())
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}
