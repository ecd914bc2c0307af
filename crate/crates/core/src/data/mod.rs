//! Observed data: rows, validated datasets, CSV ingestion, design matrices and
//! the outcome standardisation used by the tree ensemble.

mod design;
mod load;
mod transform;

pub use design::{build_design, ColumnRole, DesignBuilder, DesignMatrix, Formula, Term};
pub use load::{load_dataset, read_dataset, write_dataset, Loaded, MissingPolicy, Schema};
pub use transform::{standardize_outcome, OutcomeTransform};

use crate::error::{Error, Result};

/// One participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub y: f64,
    pub treated: bool,
    pub compliant: Option<bool>,
    /// Index into [`Dataset::sources`]; 0 is the primary source.
    pub source: usize,
    pub x: Vec<f64>,
}

/// A validated multi-source dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Row>,
    sources: Vec<String>,
    covariate_names: Vec<String>,
    has_compliance: bool,
}

impl Dataset {
    /// Validates and assembles a dataset. `sources[0]` is the primary label,
    /// the remaining labels are the supplemental sources in bit order.
    pub fn new(rows: Vec<Row>, sources: Vec<String>, covariate_names: Vec<String>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("a dataset needs a primary source"));
        }
        for (i, s) in sources.iter().enumerate() {
            if sources[..i].contains(s) {
                return Err(Error::invalid(format!("duplicate source label `{s}`")));
            }
        }
        let p = covariate_names.len();
        let has_compliance = rows.first().map(|r| r.compliant.is_some()).unwrap_or(false);
        let mut treated = vec![0usize; sources.len()];
        let mut control = vec![0usize; sources.len()];
        for (i, r) in rows.iter().enumerate() {
            if r.source >= sources.len() {
                return Err(Error::invalid(format!("row {} has undeclared source index {}", i + 1, r.source)));
            }
            if r.x.len() != p {
                return Err(Error::invalid(format!(
                    "row {} has {} covariates, expected {p}",
                    i + 1,
                    r.x.len()
                )));
            }
            if r.compliant.is_some() != has_compliance {
                return Err(Error::invalid(format!("row {} disagrees on compliance presence", i + 1)));
            }
            if !r.y.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {} contains a missing or non-finite value", i + 1)));
            }
            if r.treated {
                treated[r.source] += 1;
            } else {
                control[r.source] += 1;
            }
        }
        if treated[0] + control[0] == 0 {
            return Err(Error::PrimaryAbsent(sources[0].clone()));
        }
        for (s, label) in sources.iter().enumerate() {
            if treated[s] == 0 || control[s] == 0 {
                return Err(Error::Positivity {
                    label: label.clone(),
                    treated: treated[s],
                    control: control[s],
                });
            }
        }
        Ok(Dataset {
            rows,
            sources,
            covariate_names,
            has_compliance,
        })
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// All source labels; index 0 is primary.
    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn primary_label(&self) -> &str {
        &self.sources[0]
    }

    /// Number of supplemental sources, `H`.
    pub fn n_supplemental(&self) -> usize {
        self.sources.len() - 1
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn has_compliance(&self) -> bool {
        self.has_compliance
    }

    pub fn source_index(&self, label: &str) -> Option<usize> {
        self.sources.iter().position(|s| s == label)
    }

    /// Row indices belonging to any of `sources`, in file order.
    pub fn rows_of(&self, sources: &[usize]) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| sources.contains(&r.source))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn source_size(&self, source: usize) -> usize {
        self.rows.iter().filter(|r| r.source == source).count()
    }

    pub fn outcomes(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.rows[i].y).collect()
    }

    /// The primary source alone (`H = 0`).
    pub fn primary_only(&self) -> Dataset {
        Dataset {
            rows: self.rows.iter().filter(|r| r.source == 0).cloned().collect(),
            sources: vec![self.sources[0].clone()],
            covariate_names: self.covariate_names.clone(),
            has_compliance: self.has_compliance,
        }
    }

    /// Same rows with outcomes replaced; used by perturbation studies.
    pub(crate) fn with_outcomes(&self, y: impl IntoIterator<Item = f64>) -> Dataset {
        let mut out = self.clone();
        for (r, v) in out.rows.iter_mut().zip(y) {
            r.y = v;
        }
        out
    }
}
