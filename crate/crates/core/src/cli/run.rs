use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{Command, RunConfig};
use super::kv::KeyValues;
use crate::data::{load_dataset, Dataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mem::{MemSpace, ModelPrior};
use crate::pate::{pate_posterior, summarize, PatePosterior, PateSummary};
use crate::seed::{derive_seed, substream};
use crate::sim::{format_real, run_monte_carlo, Estimator, McResult, Study, StudyData};

pub const MEM_WEIGHTS: &str = "mem_weights.csv";
pub const PATE_SUMMARY: &str = "pate_summary.csv";
pub const PATE_DRAWS: &str = "pate_draws.csv";
pub const MC_RESULTS: &str = "mc_results.csv";
pub const MANIFEST: &str = "manifest.txt";

/// A seed for runs that did not specify one.
pub fn fresh_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    derive_seed(nanos, &[u64::from(std::process::id())])
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path.to_path_buf())
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io {
        path: "<csv buffer>".into(),
        source: e.into_error(),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|source| Error::Io {
        path: cfg.out.display().to_string(),
        source,
    })
}

/// Resolved config plus provenance; can be passed back as `--config`.
pub fn manifest(cfg: &RunConfig, outputs: &[PathBuf], extra: &[(&str, String)]) -> KeyValues {
    let mut kv = cfg.to_kv();
    let hash = sha256_hex(kv.render().as_bytes());
    kv.set("manifest.command", cfg.command.label());
    kv.set("manifest.version", env!("CARGO_PKG_VERSION"));
    kv.set("manifest.rng", "chacha8");
    kv.set("manifest.config_sha256", hash);
    kv.set("manifest.seed_generated", cfg.seed_generated.to_string());
    kv.set(
        "manifest.outputs",
        outputs
            .iter()
            .filter_map(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join(", "),
    );
    for (k, v) in extra {
        kv.set(format!("manifest.{k}"), v.clone());
    }
    kv
}

/// In-memory result of `fit`.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub data: Dataset,
    pub mem: MemSpace,
    pub posterior: PatePosterior,
    pub summary: PateSummary,
    pub dropped: usize,
}

pub fn fit(cfg: &RunConfig) -> Result<FitResult> {
    let d = cfg.data.as_ref().ok_or_else(|| Error::Config("`fit` needs `data.path`".into()))?;
    if cfg.draws < 2 {
        return Err(Error::Config("`fit` needs at least two draws for the summary".into()));
    }
    let loaded = load_dataset(&d.path, &d.schema)?;
    let data = if cfg.borrow { loaded.dataset } else { loaded.dataset.primary_only() };
    let spec = cfg.model_spec(cfg.model, data.covariate_names())?;
    let r = match cfg.r {
        Some(r) => r,
        None => spec.predictor_count(&data)?,
    };
    let prior = ModelPrior::new(cfg.prior, r)?;
    let (mem, posterior) = Execution::with_threads(cfg.threads, |exec| -> Result<_> {
        let mut rng = substream(cfg.seed, &[0]);
        let mem = MemSpace::compute(&data, &spec, prior, &mut rng, exec)?;
        let post = pate_posterior(&data, &spec, &mem, cfg.estimand, cfg.draws, &mut rng, exec)?;
        Ok((mem, post))
    })?;
    let summary = summarize(&posterior, cfg.mass)?;
    Ok(FitResult { data, mem, posterior, summary, dropped: loaded.dropped })
}

/// Fits the configured model and writes weights, summary, draws and the
/// manifest to `cfg.out`. Returns the files written.
pub fn run_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if cfg.command != Command::Fit {
        return Err(Error::Config("run_fit called with a non-fit config".into()));
    }
    let res = fit(cfg)?;
    prepare_out(cfg)?;

    let sources = &res.data.sources()[1..];
    let mut header = vec!["mem".to_string()];
    header.extend(sources.iter().cloned());
    header.extend(["prior", "log_marginal", "omega"].map(String::from));
    let m = &res.mem;
    let weights = csv_bytes(
        &header,
        m.patterns.iter().enumerate().map(|(q, p)| {
            let mut row = vec![(q + 1).to_string()];
            row.extend(p.z.iter().map(|&z| if z { "Yes" } else { "No" }.to_string()));
            row.push(format_real(m.prior_probs[q]));
            row.push(format_real(m.log_marginals[q]));
            row.push(format_real(m.weights[q]));
            row
        }),
    )?;

    let s = &res.summary;
    let summary = csv_bytes(
        &["mean", "sd", "lower", "upper", "mass", "draws", "borrow_weight"].map(String::from),
        [vec![
            format_real(s.mean),
            format_real(s.sd),
            format_real(s.lower),
            format_real(s.upper),
            format_real(s.mass),
            res.posterior.draws.len().to_string(),
            format_real(m.borrow_weight()),
        ]],
    )?;

    let owner = res
        .posterior
        .allocation
        .iter()
        .enumerate()
        .flat_map(|(q, &n)| std::iter::repeat_n(q + 1, n));
    let draws = csv_bytes(
        &["draw", "mem", "pate"].map(String::from),
        res.posterior
            .draws
            .iter()
            .zip(owner)
            .enumerate()
            .map(|(i, (v, q))| vec![(i + 1).to_string(), q.to_string(), format_real(*v)]),
    )?;

    let mut written = vec![
        write_file(&cfg.out.join(MEM_WEIGHTS), &weights)?,
        write_file(&cfg.out.join(PATE_SUMMARY), &summary)?,
        write_file(&cfg.out.join(PATE_DRAWS), &draws)?,
    ];
    let man = manifest(cfg, &written, &[("rows_dropped", res.dropped.to_string())]);
    written.push(write_file(&cfg.out.join(MANIFEST), man.render().as_bytes())?);
    Ok(written)
}

pub fn simulate(cfg: &RunConfig) -> Result<McResult> {
    let data = match &cfg.sim.template_source {
        Some(source) => {
            let d = cfg.data.as_ref().ok_or_else(|| Error::Config("`sim.template_source` needs `data.path`".into()))?;
            StudyData::Template {
                data: load_dataset(&d.path, &d.schema)?.dataset,
                source: source.clone(),
                truth: cfg.sim.truth,
            }
        }
        None => StudyData::Scenario {
            scenario: cfg.sim.scenario,
            n_primary: cfg.sim.n_primary,
            n_supplemental: cfg.sim.n_supplemental,
        },
    };
    let covariates = match &data {
        StudyData::Template { data, .. } => data.covariate_names().to_vec(),
        StudyData::Scenario { .. } => vec!["x".to_string()],
    };
    let estimators: Vec<Box<dyn Estimator>> = cfg
        .estimators(&covariates)?
        .into_iter()
        .map(|e| Box::new(e) as Box<dyn Estimator>)
        .collect();
    let study = Study { data, deltas: cfg.sim.deltas.clone(), reps: cfg.sim.reps };
    Execution::with_threads(cfg.threads, |exec| run_monte_carlo(&study, &estimators, cfg.seed, exec))
}

/// Runs the Monte Carlo study and writes its table and manifest.
pub fn run_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if cfg.command != Command::Simulate {
        return Err(Error::Config("run_simulate called with a non-simulate config".into()));
    }
    let res = simulate(cfg)?;
    prepare_out(cfg)?;
    let mut buf = Vec::new();
    res.write_csv(&mut buf)?;
    let mut written = vec![write_file(&cfg.out.join(MC_RESULTS), &buf)?];
    let man = manifest(cfg, &written, &[]);
    written.push(write_file(&cfg.out.join(MANIFEST), man.render().as_bytes())?);
    Ok(written)
}
