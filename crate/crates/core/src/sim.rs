//! Simulation scenarios with one supplemental source, the treatment-effect
//! shift for existing datasets, and a seeded Monte Carlo harness.

use std::io::Write;

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{Dataset, Row};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mem::{MemSpace, ModelPrior, PriorKind};
use crate::model::ModelSpec;
use crate::pate::{pate_posterior, EstimandSpec};
use crate::seed::{derive_seed, rng_from_seed, SimRng};

/// Fixed-width scientific notation with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// `X ~ N(0, 1)`, logistic treatment, `f(x) = x`.
    Parallel,
    /// As `Parallel`, but the supplemental `X ~ N(3, 1)`.
    ShiftedConfounder,
    /// `A ~ Ber(1/2)`, `X | A` with variance 4/3 (control) or 2/3 (treated),
    /// `f(x) = eˣ`.
    Nonlinear,
}

impl Scenario {
    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Scenario::Parallel),
            2 => Ok(Scenario::ShiftedConfounder),
            3 => Ok(Scenario::Nonlinear),
            _ => Err(Error::invalid(format!("unknown scenario {id} (expected 1, 2 or 3)"))),
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Scenario::Parallel => 1,
            Scenario::ShiftedConfounder => 2,
            Scenario::Nonlinear => 3,
        }
    }

    fn f(self, x: f64) -> f64 {
        match self {
            Scenario::Nonlinear => x.exp(),
            _ => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n_primary: usize,
    pub n_supplemental: usize,
    /// Supplemental treatment effect is `1 + delta`.
    pub delta: f64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, delta: f64) -> Self {
        ScenarioConfig {
            scenario,
            n_primary: 100,
            n_supplemental: 100,
            delta,
        }
    }
}

pub const PRIMARY_LABEL: &str = "primary";
pub const SUPPLEMENTAL_LABEL: &str = "supplemental";

/// `(a, x)` for one row.
fn draw_unit<R: Rng + ?Sized>(scenario: Scenario, supplemental: bool, rng: &mut R) -> (bool, f64) {
    let z: f64 = StandardNormal.sample(rng);
    match scenario {
        Scenario::Nonlinear => {
            let a = rng.random_bool(0.5);
            let var: f64 = if a { 2.0 / 3.0 } else { 4.0 / 3.0 };
            (a, z * var.sqrt())
        }
        _ => {
            let x = if supplemental && scenario == Scenario::ShiftedConfounder { z + 3.0 } else { z };
            let a = rng.random::<f64>() < 1.0 / (1.0 + (-x).exp());
            (a, x)
        }
    }
}

fn draw_source<R: Rng + ?Sized>(cfg: &ScenarioConfig, source: usize, rng: &mut R) -> Vec<Row> {
    let (n, effect) = if source == 0 { (cfg.n_primary, 1.0) } else { (cfg.n_supplemental, 1.0 + cfg.delta) };
    loop {
        let rows: Vec<Row> = (0..n)
            .map(|_| {
                let (a, x) = draw_unit(cfg.scenario, source == 1, rng);
                let eps: f64 = StandardNormal.sample(rng);
                Row {
                    y: effect * f64::from(u8::from(a)) + cfg.scenario.f(x) + eps,
                    treated: a,
                    compliant: None,
                    source,
                    x: vec![x],
                }
            })
            .collect();
        // redraw the source until both arms are present
        if rows.iter().any(|r| r.treated) && rows.iter().any(|r| !r.treated) {
            return rows;
        }
    }
}

/// One primary and one supplemental source with a single covariate `x`. The
/// primary PATE is 1 in every scenario.
pub fn gen_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Dataset> {
    if cfg.n_primary < 2 || cfg.n_supplemental < 2 {
        return Err(Error::invalid("each source needs at least two rows"));
    }
    let mut rows = draw_source(cfg, 0, rng);
    rows.extend(draw_source(cfg, 1, rng));
    Dataset::new(rows, vec![PRIMARY_LABEL.into(), SUPPLEMENTAL_LABEL.into()], vec!["x".into()])
}

/// Part 1: −2.5 to 2.5 by 0.5. Part 2: −1.5 to 1.5 by 0.75.
pub fn delta_grid(part: u32) -> Result<Vec<f64>> {
    match part {
        1 => Ok((-5..=5).map(|k| 0.5 * k as f64).collect()),
        2 => Ok((-2..=2).map(|k| 0.75 * k as f64).collect()),
        _ => Err(Error::invalid(format!("unknown simulation part {part} (expected 1 or 2)"))),
    }
}

/// Sample standard deviation of the outcomes of one source.
pub fn source_outcome_sd(data: &Dataset, source: &str) -> Result<f64> {
    let s = data.source_index(source).ok_or_else(|| Error::UnknownSource(source.into()))?;
    let y = data.outcomes(&data.rows_of(&[s]));
    if y.len() < 2 {
        return Err(Error::invalid(format!("source `{source}` has fewer than two rows")));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    Ok((y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64).sqrt())
}

/// Adds `delta · sd` to the outcomes of treated rows in `source`.
pub fn shift_treatment_effect_by(data: &Dataset, source: &str, delta: f64, sd: f64) -> Result<Dataset> {
    let s = data.source_index(source).ok_or_else(|| Error::UnknownSource(source.into()))?;
    let shift = delta * sd;
    Ok(data.with_outcomes(
        data.rows()
            .iter()
            .map(|r| if r.source == s && r.treated { r.y + shift } else { r.y }),
    ))
}

/// Adds `delta · sd(Y)` to treated outcomes of `source`, with `sd(Y)` taken
/// over that source before the shift.
pub fn shift_treatment_effect(data: &Dataset, source: &str, delta: f64) -> Result<Dataset> {
    if delta == 0.0 {
        data.source_index(source).ok_or_else(|| Error::UnknownSource(source.into()))?;
        return Ok(data.clone());
    }
    let sd = source_outcome_sd(data, source)?;
    shift_treatment_effect_by(data, source, delta, sd)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub pate: f64,
    pub borrow_weight: f64,
}

/// A PATE estimator compared in Monte Carlo studies.
pub trait Estimator: Send + Sync {
    fn name(&self) -> String;
    fn prior_label(&self) -> String;
    fn estimate(&self, data: &Dataset, rng: &mut SimRng, exec: Execution) -> Result<Estimate>;
}

/// Posterior-mean PATE from exchangeability-weighted borrowing, or from the
/// primary source alone when `borrow` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct MemEstimator {
    pub spec: ModelSpec,
    pub prior: PriorKind,
    /// Overrides the predictor count `r` used by the model prior.
    pub r: Option<usize>,
    pub borrow: bool,
    pub draws: usize,
    pub estimand: EstimandSpec,
}

impl MemEstimator {
    pub fn new(spec: ModelSpec, prior: PriorKind, borrow: bool, draws: usize) -> Self {
        MemEstimator {
            spec,
            prior,
            r: None,
            borrow,
            draws,
            estimand: EstimandSpec::default(),
        }
    }
}

impl Estimator for MemEstimator {
    fn name(&self) -> String {
        let m = self.spec.kind.label();
        if self.borrow {
            m.to_string()
        } else {
            format!("nb-{m}")
        }
    }

    fn prior_label(&self) -> String {
        if self.borrow {
            self.prior.label().to_string()
        } else {
            "none".to_string()
        }
    }

    fn estimate(&self, data: &Dataset, rng: &mut SimRng, exec: Execution) -> Result<Estimate> {
        let own;
        let data = if self.borrow {
            data
        } else {
            own = data.primary_only();
            &own
        };
        let r = match self.r {
            Some(r) => r,
            None => self.spec.predictor_count(data)?,
        };
        let mem = MemSpace::compute(data, &self.spec, ModelPrior::new(self.prior, r)?, rng, exec)?;
        let post = pate_posterior(data, &self.spec, &mem, self.estimand, self.draws, rng, exec)?;
        Ok(Estimate {
            pate: post.draws.iter().sum::<f64>() / post.draws.len() as f64,
            borrow_weight: mem.borrow_weight(),
        })
    }
}

/// Where each replication's data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum StudyData {
    /// Fresh draws from a scenario with `delta` set per grid point.
    Scenario { scenario: Scenario, n_primary: usize, n_supplemental: usize },
    /// A fixed dataset whose `source` is shifted by `delta · sd(Y)`; `truth`
    /// is the primary PATE.
    Template { data: Dataset, source: String, truth: f64 },
}

impl StudyData {
    fn label(&self) -> String {
        match self {
            StudyData::Scenario { scenario, .. } => scenario.id().to_string(),
            StudyData::Template { .. } => "template".into(),
        }
    }

    fn truth(&self) -> f64 {
        match self {
            StudyData::Scenario { .. } => 1.0,
            StudyData::Template { truth, .. } => *truth,
        }
    }

    fn generate(&self, delta: f64, rng: &mut SimRng) -> Result<Dataset> {
        match self {
            StudyData::Scenario { scenario, n_primary, n_supplemental } => gen_scenario(
                &ScenarioConfig {
                    scenario: *scenario,
                    n_primary: *n_primary,
                    n_supplemental: *n_supplemental,
                    delta,
                },
                rng,
            ),
            StudyData::Template { data, source, .. } => shift_treatment_effect(data, source, delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub data: StudyData,
    pub deltas: Vec<f64>,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McRecord {
    pub scenario: String,
    pub delta: f64,
    pub estimator: String,
    pub prior_kind: String,
    /// Successful replications.
    pub reps: usize,
    pub bias: f64,
    pub root_mse: f64,
    pub mean_borrow_weight: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub records: Vec<McRecord>,
    pub master_seed: u64,
}

impl McResult {
    pub fn record(&self, estimator: &str, delta: f64) -> Option<&McRecord> {
        self.records.iter().find(|r| r.estimator == estimator && r.delta == delta)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "scenario",
            "delta",
            "estimator",
            "prior_kind",
            "reps",
            "bias",
            "root_mse",
            "mean_borrow_weight",
            "failures",
        ])?;
        for r in &self.records {
            out.write_record([
                r.scenario.clone(),
                format_real(r.delta),
                r.estimator.clone(),
                r.prior_kind.clone(),
                r.reps.to_string(),
                format_real(r.bias),
                format_real(r.root_mse),
                format_real(r.mean_borrow_weight),
                r.failures.to_string(),
            ])?;
        }
        out.flush().map_err(|source| Error::Io { path: "<csv>".into(), source })?;
        Ok(())
    }
}

/// Runs every estimator on `study.reps` datasets per grid point. The data for
/// replication `k` at grid index `i` use seed `derive(master, [i, k, 0])`,
/// estimator `e` uses `derive(master, [i, k, e + 1])`, and replications run
/// under `exec`, so the result depends only on the inputs and `master`.
pub fn run_monte_carlo(
    study: &Study,
    estimators: &[Box<dyn Estimator>],
    master: u64,
    exec: Execution,
) -> Result<McResult> {
    if study.reps == 0 {
        return Err(Error::invalid("at least one replication is required"));
    }
    if estimators.is_empty() {
        return Err(Error::invalid("no estimators given"));
    }
    let truth = study.data.truth();
    let mut records = Vec::new();
    for (di, &delta) in study.deltas.iter().enumerate() {
        let runs: Vec<Result<Vec<Result<Estimate>>>> = exec.map_range(study.reps, |k| {
            let mut rng = rng_from_seed(derive_seed(master, &[di as u64, k as u64, 0]));
            let data = study.data.generate(delta, &mut rng)?;
            Ok(estimators
                .iter()
                .enumerate()
                .map(|(e, est)| {
                    let mut r = rng_from_seed(derive_seed(master, &[di as u64, k as u64, e as u64 + 1]));
                    est.estimate(&data, &mut r, Execution::Sequential)
                })
                .collect())
        });
        let runs: Vec<Vec<Result<Estimate>>> = runs.into_iter().collect::<Result<_>>()?;
        for (e, est) in estimators.iter().enumerate() {
            let mut ok = Vec::new();
            let mut failures = 0;
            for (k, run) in runs.iter().enumerate() {
                match &run[e] {
                    Ok(v) if v.pate.is_finite() => ok.push(*v),
                    Ok(_) => failures += 1,
                    Err(err) => {
                        log::warn!("{} failed at delta = {delta}, rep {k}: {err}", est.name());
                        failures += 1;
                    }
                }
            }
            if failures * 20 > study.reps || ok.is_empty() {
                return Err(Error::TooManyFailures {
                    estimator: est.name(),
                    delta,
                    failures,
                    reps: study.reps,
                });
            }
            let n = ok.len() as f64;
            let bias = ok.iter().map(|v| v.pate - truth).sum::<f64>() / n;
            let mse = ok.iter().map(|v| (v.pate - truth).powi(2)).sum::<f64>() / n;
            records.push(McRecord {
                scenario: study.data.label(),
                delta,
                estimator: est.name(),
                prior_kind: est.prior_label(),
                reps: ok.len(),
                bias,
                // guard the decomposition against rounding
                root_mse: mse.sqrt().max(bias.abs()),
                mean_borrow_weight: ok.iter().map(|v| v.borrow_weight).sum::<f64>() / n,
                failures,
            });
        }
        log::info!("delta = {delta}: {} replications done", study.reps);
    }
    Ok(McResult { records, master_seed: master })
}

/// Normal draws with the given mean and standard deviation; used by the
/// moment checks.
pub fn normal_sample<R: Rng + ?Sized>(mean: f64, sd: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let d = Normal::new(mean, sd).expect("finite normal parameters");
    (0..n).map(|_| d.sample(rng)).collect()
}
