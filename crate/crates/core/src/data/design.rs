use nalgebra::DMatrix;

use super::Dataset;
use crate::error::{Error, Result};

/// A model term beyond the always-present treatment indicator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Covariate(String),
    /// Treatment × covariate product.
    TreatmentBy(String),
    /// Compliance × covariate product.
    ComplianceBy(String),
}

/// Column layout: `[intercept?] treatment [compliance?] terms...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    pub intercept: bool,
    pub include_compliance: bool,
    pub terms: Vec<Term>,
}

impl Formula {
    /// Intercept, treatment and every covariate as a main effect.
    pub fn main_effects(covariates: &[String]) -> Self {
        Formula {
            intercept: true,
            include_compliance: false,
            terms: covariates.iter().cloned().map(Term::Covariate).collect(),
        }
    }

    /// Parses a comma-separated term list. `A` names the treatment (always
    /// included), `C` the compliance indicator, and `A:x` / `C:x` the
    /// interaction products. Anything else is a covariate name.
    pub fn parse(spec: &str, intercept: bool) -> Result<Self> {
        let mut f = Formula {
            intercept,
            include_compliance: false,
            terms: Vec::new(),
        };
        for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let parts: Vec<&str> = tok.split([':', '*', '×']).map(str::trim).collect();
            match parts.as_slice() {
                ["A"] => {}
                ["C"] => f.include_compliance = true,
                [name] => f.terms.push(Term::Covariate(name.to_string())),
                ["A", name] | [name, "A"] => f.terms.push(Term::TreatmentBy(name.to_string())),
                ["C", name] | [name, "C"] => f.terms.push(Term::ComplianceBy(name.to_string())),
                _ => return Err(Error::invalid(format!("cannot parse formula term `{tok}`"))),
            }
        }
        Ok(f)
    }

    /// Predictor columns for the tree ensemble: no intercept, no products.
    pub fn predictors_only(&self) -> Formula {
        Formula {
            intercept: false,
            include_compliance: self.include_compliance,
            terms: self
                .terms
                .iter()
                .filter(|t| matches!(t, Term::Covariate(_)))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Intercept,
    Treatment,
    Compliance,
    Covariate(usize),
    TreatmentBy(usize),
    ComplianceBy(usize),
}

/// Numeric realisation of a [`Formula`] on a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub column_roles: Vec<ColumnRole>,
    pub names: Vec<String>,
    pub treatment_col: usize,
    pub compliance_col: Option<usize>,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Resolved column layout; builds aligned matrices for any row subset and for
/// counterfactual treatment/compliance settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBuilder {
    roles: Vec<ColumnRole>,
    names: Vec<String>,
}

impl DesignBuilder {
    pub fn new(data: &Dataset, formula: &Formula) -> Result<Self> {
        let lookup = |name: &str| {
            data.covariate_names()
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
        };
        let uses_compliance = formula.include_compliance
            || formula.terms.iter().any(|t| matches!(t, Term::ComplianceBy(_)));
        if uses_compliance && !data.has_compliance() {
            return Err(Error::NoCompliance);
        }
        let mut roles = Vec::new();
        let mut names = Vec::new();
        if formula.intercept {
            roles.push(ColumnRole::Intercept);
            names.push("(Intercept)".to_string());
        }
        roles.push(ColumnRole::Treatment);
        names.push("A".to_string());
        if formula.include_compliance {
            roles.push(ColumnRole::Compliance);
            names.push("C".to_string());
        }
        for t in &formula.terms {
            let (role, name) = match t {
                Term::Covariate(c) => (ColumnRole::Covariate(lookup(c)?), c.clone()),
                Term::TreatmentBy(c) => (ColumnRole::TreatmentBy(lookup(c)?), format!("A:{c}")),
                Term::ComplianceBy(c) => (ColumnRole::ComplianceBy(lookup(c)?), format!("C:{c}")),
            };
            roles.push(role);
            names.push(name);
        }
        Ok(DesignBuilder { roles, names })
    }

    pub fn ncols(&self) -> usize {
        self.roles.len()
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn assemble(
        &self,
        data: &Dataset,
        rows: &[usize],
        arm: impl Fn(usize) -> (f64, f64),
    ) -> DesignMatrix {
        let values = DMatrix::from_fn(rows.len(), self.roles.len(), |i, j| {
            let r = &data.rows()[rows[i]];
            let (a, c) = arm(rows[i]);
            match self.roles[j] {
                ColumnRole::Intercept => 1.0,
                ColumnRole::Treatment => a,
                ColumnRole::Compliance => c,
                ColumnRole::Covariate(k) => r.x[k],
                ColumnRole::TreatmentBy(k) => a * r.x[k],
                ColumnRole::ComplianceBy(k) => c * r.x[k],
            }
        });
        DesignMatrix {
            values,
            column_roles: self.roles.clone(),
            names: self.names.clone(),
            treatment_col: self
                .roles
                .iter()
                .position(|r| *r == ColumnRole::Treatment)
                .expect("treatment column is always present"),
            compliance_col: self.roles.iter().position(|r| *r == ColumnRole::Compliance),
        }
    }

    fn observed_c(data: &Dataset, i: usize) -> f64 {
        match data.rows()[i].compliant {
            Some(true) => 1.0,
            _ => 0.0,
        }
    }

    /// Observed design rows.
    pub fn build(&self, data: &Dataset, rows: &[usize]) -> DesignMatrix {
        self.assemble(data, rows, |i| {
            (f64::from(u8::from(data.rows()[i].treated)), Self::observed_c(data, i))
        })
    }

    /// Rows with treatment set to `treated`; interaction columns are
    /// recomputed. With `fix_compliant` the compliance indicator is 1.
    pub fn counterfactual(&self, data: &Dataset, rows: &[usize], treated: bool, fix_compliant: bool) -> DesignMatrix {
        let a = f64::from(u8::from(treated));
        self.assemble(data, rows, |i| {
            (a, if fix_compliant { 1.0 } else { Self::observed_c(data, i) })
        })
    }
}

/// Per-source design matrices (in source order) and the builder that aligns
/// them, which also serves pooled blocks.
pub fn build_design(data: &Dataset, formula: &Formula) -> Result<(Vec<DesignMatrix>, DesignBuilder)> {
    let builder = DesignBuilder::new(data, formula)?;
    let per_source = (0..data.sources().len())
        .map(|s| builder.build(data, &data.rows_of(&[s])))
        .collect();
    Ok((per_source, builder))
}
