//! Command-line front end: `fit` and `simulate`, driven by a key-value
//! config file whose options can all be overridden by flags.

mod args;
mod config;
mod kv;
mod run;

pub use args::{execute, resolve, Cli, Common, FitArgs, SimArgs, Sub};
pub use config::{Command, DataConfig, EstimatorChoice, RunConfig, SimConfig};
pub use kv::KeyValues;
pub use run::{
    fit, fresh_seed, manifest, run_fit, run_simulate, simulate, FitResult, MANIFEST, MC_RESULTS, MEM_WEIGHTS,
    PATE_DRAWS, PATE_SUMMARY,
};
