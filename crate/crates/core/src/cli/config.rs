use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::str::FromStr;

use super::kv::KeyValues;
use crate::bart::GammaRule;
use crate::data::{Formula, MissingPolicy, Schema};
use crate::error::{Error, Result};
use crate::mem::PriorKind;
use crate::model::{BartOptions, HyperSource, ModelKind, ModelSpec, NodePriorKind};
use crate::pate::EstimandSpec;
use crate::sim::{delta_grid, format_real, MemEstimator, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Simulate,
}

impl Command {
    pub fn label(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub path: PathBuf,
    pub schema: Schema,
}

/// One estimator of a simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorChoice {
    pub model: ModelKind,
    pub borrow: bool,
    /// `None` uses the run-wide prior.
    pub prior: Option<PriorKind>,
}

impl EstimatorChoice {
    fn parse(tok: &str) -> Result<Self> {
        let (name, prior) = match tok.split_once(':') {
            Some((n, p)) => (n.trim(), Some(PriorKind::parse(p.trim())?)),
            None => (tok.trim(), None),
        };
        let (borrow, model) = match name.strip_prefix("nb-") {
            Some(m) => (false, m),
            None => (true, name),
        };
        if !borrow && prior.is_some() {
            return Err(Error::Config(format!("estimator `{tok}` does not borrow, so takes no prior")));
        }
        Ok(EstimatorChoice { model: parse_model(model)?, borrow, prior })
    }

    fn render(&self) -> String {
        match (self.borrow, self.prior) {
            (false, _) => format!("nb-{}", self.model.label()),
            (true, Some(p)) => format!("{}:{}", self.model.label(), p.label()),
            (true, None) => self.model.label().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub deltas: Vec<f64>,
    pub reps: usize,
    pub n_primary: usize,
    pub n_supplemental: usize,
    pub estimators: Vec<EstimatorChoice>,
    /// Shift this source of `data` instead of drawing scenario data.
    pub template_source: Option<String>,
    /// Primary PATE of the template dataset.
    pub truth: f64,
}

/// Fully resolved options of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    /// Whether the seed was generated rather than given.
    pub seed_generated: bool,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub data: Option<DataConfig>,
    pub model: ModelKind,
    /// Comma-separated formula terms; `None` uses every covariate.
    pub formula: Option<String>,
    pub intercept: bool,
    pub hyper: HyperSource,
    pub bart: BartOptions,
    pub prior: PriorKind,
    pub r: Option<usize>,
    pub borrow: bool,
    pub estimand: EstimandSpec,
    pub draws: usize,
    pub mass: f64,
    pub sim: SimConfig,
}

fn parse_model(s: &str) -> Result<ModelKind> {
    match s {
        "blm" => Ok(ModelKind::Blm),
        "bart" => Ok(ModelKind::Bart),
        _ => Err(Error::Config(format!("unknown model `{s}` (expected blm or bart)"))),
    }
}

fn list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
}

/// Typed lookups that remember which keys were used.
struct Reader<'a> {
    kv: &'a KeyValues,
    used: RefCell<BTreeSet<String>>,
}

impl<'a> Reader<'a> {
    fn raw(&self, key: &str) -> Option<&'a str> {
        self.used.borrow_mut().insert(key.to_string());
        self.kv.get(key)
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    fn unknown(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.kv
            .keys()
            .filter(|k| !used.contains(*k) && !k.starts_with("manifest."))
            .map(String::from)
            .collect()
    }
}

impl RunConfig {
    /// Resolves a key-value map. `generated_seed` is used when `seed` is
    /// absent. Unknown keys are rejected.
    pub fn from_kv(command: Command, kv: &KeyValues, generated_seed: u64) -> Result<Self> {
        let r = Reader { kv, used: RefCell::new(BTreeSet::new()) };
        let d = BartOptions::default();
        let bart = BartOptions {
            trees: r.or("bart.trees", d.trees)?,
            burn: r.or("bart.burn", d.burn)?,
            prior_draws: r.or("bart.prior_draws", d.prior_draws)?,
            alpha: r.or("bart.alpha", d.alpha)?,
            beta_depth: r.or("bart.beta", d.beta_depth)?,
            nu: r.or("bart.nu", d.nu)?,
            k: r.or("bart.k", d.k)?,
            node_prior: match r.raw("bart.node_prior").unwrap_or("modified") {
                "modified" => NodePriorKind::Modified,
                "default" => NodePriorKind::Default,
                v => return Err(Error::Config(format!("`bart.node_prior`: expected modified or default, got `{v}`"))),
            },
            grid: r.or("bart.grid", d.grid)?,
            change_moves: r.or("bart.change_moves", d.change_moves)?,
            gamma: r.opt("bart.gamma")?,
            gamma_rule: GammaRule::parse(r.raw("bart.gamma_rule").unwrap_or("matched")).map_err(|e| Error::Config(e.to_string()))?,
        };

        let data = match r.raw("data.path") {
            Some(path) => {
                let mut schema = Schema::new(
                    r.string("data.outcome", "y"),
                    r.string("data.treatment", "a"),
                    r.string("data.source", "source"),
                    r.string("data.primary", "primary"),
                    list(r.raw("data.covariates").unwrap_or("")),
                );
                schema.compliance = r.raw("data.compliance").map(String::from);
                schema.supplemental_order = list(r.raw("data.supplemental_order").unwrap_or(""));
                let delim = r.string("data.delimiter", ",");
                schema.delimiter = match delim.as_str() {
                    "tab" | "\\t" => b'\t',
                    s if s.len() == 1 => s.as_bytes()[0],
                    s => return Err(Error::Config(format!("`data.delimiter` must be one byte, got `{s}`"))),
                };
                schema.missing = match r.raw("data.missing").unwrap_or("strict") {
                    "strict" => MissingPolicy::Strict,
                    "lenient" => MissingPolicy::Lenient,
                    v => return Err(Error::Config(format!("`data.missing`: expected strict or lenient, got `{v}`"))),
                };
                Some(DataConfig { path: PathBuf::from(path), schema })
            }
            None => None,
        };

        let scenario_id: u32 = r.or("sim.scenario", 1)?;
        let deltas = match r.raw("sim.deltas") {
            Some(v) => list(v)
                .iter()
                .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("`sim.deltas`: cannot parse `{t}`"))))
                .collect::<Result<Vec<_>>>()?,
            None => delta_grid(r.or("sim.part", 1)?).map_err(|e| Error::Config(e.to_string()))?,
        };
        let sim = SimConfig {
            scenario: Scenario::from_id(scenario_id).map_err(|e| Error::Config(e.to_string()))?,
            deltas,
            reps: r.or("sim.reps", 100)?,
            n_primary: r.or("sim.n_primary", 100)?,
            n_supplemental: r.or("sim.n_supplemental", 100)?,
            estimators: list(r.raw("sim.estimators").unwrap_or("blm, nb-blm"))
                .iter()
                .map(|t| EstimatorChoice::parse(t))
                .collect::<Result<_>>()?,
            template_source: r.raw("sim.template_source").map(String::from),
            truth: r.or("sim.truth", 0.0)?,
        };

        let seed: Option<u64> = r.opt("seed")?;
        let threads: Option<usize> = r.opt("threads")?;
        let cfg = RunConfig {
            command,
            seed: seed.unwrap_or(generated_seed),
            seed_generated: seed.is_none(),
            threads: threads.filter(|&t| t > 0),
            out: PathBuf::from(r.string("out", ".")),
            data,
            model: parse_model(r.raw("model").unwrap_or("blm"))?,
            formula: r.raw("model.formula").map(String::from),
            intercept: r.or("model.intercept", true)?,
            hyper: match r.raw("model.hyper").unwrap_or("per-block") {
                "per-block" => HyperSource::PerBlock,
                "primary" => HyperSource::Primary,
                v => return Err(Error::Config(format!("`model.hyper`: expected per-block or primary, got `{v}`"))),
            },
            bart,
            prior: PriorKind::parse(r.raw("prior").unwrap_or("half")).map_err(|e| Error::Config(e.to_string()))?,
            r: r.opt("prior.r")?,
            borrow: r.or("borrow", true)?,
            estimand: EstimandSpec { fix_compliant: r.or("estimand.fix_compliant", false)? },
            draws: r.or("draws", 1000)?,
            mass: r.or("interval.mass", 0.95)?,
            sim,
        };
        let unknown = r.unknown();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("`draws` must be at least 1".into()));
        }
        if !(self.mass > 0.0 && self.mass < 1.0) {
            return Err(Error::Config("`interval.mass` must lie in (0, 1)".into()));
        }
        if self.r == Some(0) {
            return Err(Error::Config("`prior.r` must be positive".into()));
        }
        match self.command {
            Command::Fit => {
                let d = self.data.as_ref().ok_or_else(|| Error::Config("`fit` needs `data.path`".into()))?;
                if !d.path.is_file() {
                    return Err(Error::Config(format!("data file `{}` does not exist", d.path.display())));
                }
            }
            Command::Simulate => {
                if self.sim.reps == 0 {
                    return Err(Error::Config("`sim.reps` must be at least 1".into()));
                }
                if self.sim.estimators.is_empty() {
                    return Err(Error::Config("`sim.estimators` is empty".into()));
                }
                if self.sim.deltas.is_empty() || self.sim.deltas.iter().any(|d| !d.is_finite()) {
                    return Err(Error::Config("`sim.deltas` must be a non-empty list of finite numbers".into()));
                }
                if self.sim.template_source.is_some() && self.data.is_none() {
                    return Err(Error::Config("`sim.template_source` needs `data.path`".into()));
                }
            }
        }
        Ok(())
    }

    /// Formula over `covariates`.
    pub fn formula_for(&self, covariates: &[String]) -> Result<Formula> {
        match &self.formula {
            Some(f) => Formula::parse(f, self.intercept),
            None => {
                let mut f = Formula::main_effects(covariates);
                f.intercept = self.intercept;
                Ok(f)
            }
        }
    }

    pub fn model_spec(&self, kind: ModelKind, covariates: &[String]) -> Result<ModelSpec> {
        let formula = self.formula_for(covariates)?;
        let mut spec = match kind {
            ModelKind::Blm => ModelSpec::blm(formula),
            ModelKind::Bart => ModelSpec::bart(formula),
        };
        spec.hyper = self.hyper;
        spec.bart = self.bart.clone();
        Ok(spec)
    }

    /// Simulation estimators; with `borrow = false` only the primary-only
    /// variants remain.
    pub fn estimators(&self, covariates: &[String]) -> Result<Vec<MemEstimator>> {
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for c in &self.sim.estimators {
            let c = EstimatorChoice { borrow: c.borrow && self.borrow, prior: if c.borrow && self.borrow { c.prior } else { None }, ..*c };
            if seen.contains(&c) {
                continue;
            }
            seen.push(c);
            let mut e = MemEstimator::new(self.model_spec(c.model, covariates)?, c.prior.unwrap_or(self.prior), c.borrow, self.draws);
            e.r = self.r;
            e.estimand = self.estimand;
            out.push(e);
        }
        Ok(out)
    }

    /// Every option with its resolved value, in config syntax.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed.to_string());
        if let Some(t) = self.threads {
            kv.set("threads", t.to_string());
        }
        kv.set("out", self.out.display().to_string());
        kv.set("model", self.model.label());
        if let Some(f) = &self.formula {
            kv.set("model.formula", f.clone());
        }
        kv.set("model.intercept", self.intercept.to_string());
        kv.set("model.hyper", match self.hyper {
            HyperSource::PerBlock => "per-block",
            HyperSource::Primary => "primary",
        });
        let b = &self.bart;
        kv.set("bart.trees", b.trees.to_string());
        kv.set("bart.burn", b.burn.to_string());
        kv.set("bart.prior_draws", b.prior_draws.to_string());
        kv.set("bart.alpha", format_real(b.alpha));
        kv.set("bart.beta", format_real(b.beta_depth));
        kv.set("bart.nu", format_real(b.nu));
        kv.set("bart.k", format_real(b.k));
        kv.set("bart.node_prior", match b.node_prior {
            NodePriorKind::Modified => "modified",
            NodePriorKind::Default => "default",
        });
        kv.set("bart.grid", b.grid.to_string());
        kv.set("bart.change_moves", b.change_moves.to_string());
        kv.set("bart.gamma_rule", b.gamma_rule.label());
        if let Some(g) = b.gamma {
            kv.set("bart.gamma", format_real(g));
        }
        kv.set("prior", self.prior.label());
        if let Some(r) = self.r {
            kv.set("prior.r", r.to_string());
        }
        kv.set("borrow", self.borrow.to_string());
        kv.set("estimand.fix_compliant", self.estimand.fix_compliant.to_string());
        kv.set("draws", self.draws.to_string());
        kv.set("interval.mass", format_real(self.mass));
        if let Some(d) = &self.data {
            let s = &d.schema;
            kv.set("data.path", d.path.display().to_string());
            kv.set("data.outcome", s.outcome.clone());
            kv.set("data.treatment", s.treatment.clone());
            kv.set("data.source", s.source.clone());
            kv.set("data.primary", s.primary_label.clone());
            kv.set("data.covariates", s.covariates.join(", "));
            if let Some(c) = &s.compliance {
                kv.set("data.compliance", c.clone());
            }
            if !s.supplemental_order.is_empty() {
                kv.set("data.supplemental_order", s.supplemental_order.join(", "));
            }
            kv.set("data.delimiter", if s.delimiter == b'\t' { "tab".to_string() } else { (s.delimiter as char).to_string() });
            kv.set("data.missing", match s.missing {
                MissingPolicy::Strict => "strict",
                MissingPolicy::Lenient => "lenient",
            });
        }
        if self.command == Command::Simulate {
            let s = &self.sim;
            kv.set("sim.scenario", s.scenario.id().to_string());
            kv.set("sim.deltas", s.deltas.iter().map(|d| format_real(*d)).collect::<Vec<_>>().join(", "));
            kv.set("sim.reps", s.reps.to_string());
            kv.set("sim.n_primary", s.n_primary.to_string());
            kv.set("sim.n_supplemental", s.n_supplemental.to_string());
            kv.set("sim.estimators", s.estimators.iter().map(EstimatorChoice::render).collect::<Vec<_>>().join(", "));
            if let Some(t) = &s.template_source {
                kv.set("sim.template_source", t.clone());
                kv.set("sim.truth", format_real(s.truth));
            }
        }
        kv
    }
}
