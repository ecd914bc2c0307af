use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::{Command, RunConfig};
use super::kv::KeyValues;
use super::run::{fresh_seed, run_fit, run_simulate};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "memborrow", version, about = "Treatment-effect estimation that borrows from supplemental sources")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Estimate the primary-source PATE from a CSV dataset.
    Fit(FitArgs),
    /// Run a Monte Carlo study.
    Simulate(SimArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["blm", "bart"])]
    pub model: Option<String>,
    #[arg(long, value_parser = ["half", "flat-half", "power-r", "inverse-r", "power-half-r"])]
    pub prior: Option<String>,
    /// Use the primary source only.
    #[arg(long)]
    pub no_borrow: bool,
    /// Posterior draws per fit.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Any config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scenario id (1, 2 or 3).
    #[arg(long)]
    pub scenario: Option<u32>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Delta grid (1 or 2).
    #[arg(long)]
    pub part: Option<u32>,
}

fn overlay(c: &Common) -> Result<KeyValues> {
    let mut kv = match &c.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::new(),
    };
    for s in &c.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(v) = c.seed {
        kv.set("seed", v.to_string());
    }
    if let Some(v) = c.threads {
        kv.set("threads", v.to_string());
    }
    if let Some(v) = &c.out {
        kv.set("out", v.display().to_string());
    }
    if let Some(v) = &c.model {
        kv.set("model", v.clone());
    }
    if let Some(v) = &c.prior {
        kv.set("prior", v.clone());
    }
    if c.no_borrow {
        kv.set("borrow", "false");
    }
    if let Some(v) = c.draws {
        kv.set("draws", v.to_string());
    }
    Ok(kv)
}

/// Resolves flags over the config file (flags win).
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    match &cli.command {
        Sub::Fit(a) => {
            let mut kv = overlay(&a.common)?;
            if let Some(d) = &a.data {
                kv.set("data.path", d.display().to_string());
            }
            RunConfig::from_kv(Command::Fit, &kv, fresh_seed())
        }
        Sub::Simulate(a) => {
            let mut kv = overlay(&a.common)?;
            if let Some(v) = a.scenario {
                kv.set("sim.scenario", v.to_string());
            }
            if let Some(v) = a.reps {
                kv.set("sim.reps", v.to_string());
            }
            if let Some(v) = a.part {
                kv.remove("sim.deltas");
                kv.set("sim.part", v.to_string());
            }
            RunConfig::from_kv(Command::Simulate, &kv, fresh_seed())
        }
    }
}

/// Runs the command and returns the files written.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = resolve(cli)?;
    if cfg.seed_generated {
        log::info!("no seed given; using {}", cfg.seed);
    }
    match cfg.command {
        Command::Fit => run_fit(&cfg),
        Command::Simulate => run_simulate(&cfg),
    }
}
