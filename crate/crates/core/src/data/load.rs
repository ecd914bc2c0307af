use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, Row};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Any missing or unparseable field rejects the file.
    #[default]
    Strict,
    /// Offending rows are dropped and counted.
    Lenient,
}

/// Column bindings for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub outcome: String,
    pub treatment: String,
    pub source: String,
    pub primary_label: String,
    pub compliance: Option<String>,
    pub covariates: Vec<String>,
    /// Supplemental labels in bit order. Empty means order of first appearance.
    pub supplemental_order: Vec<String>,
    pub delimiter: u8,
    pub missing: MissingPolicy,
}

impl Schema {
    pub fn new(
        outcome: impl Into<String>,
        treatment: impl Into<String>,
        source: impl Into<String>,
        primary_label: impl Into<String>,
        covariates: Vec<String>,
    ) -> Self {
        Schema {
            outcome: outcome.into(),
            treatment: treatment.into(),
            source: source.into(),
            primary_label: primary_label.into(),
            compliance: None,
            covariates,
            supplemental_order: Vec::new(),
            delimiter: b',',
            missing: MissingPolicy::Strict,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    /// Rows dropped under [`MissingPolicy::Lenient`].
    pub dropped: usize,
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Loaded> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(file, schema)
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

fn parse_real(field: &str) -> std::result::Result<f64, String> {
    if is_missing(field) {
        return Err("missing value".into());
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{field}` is not a finite real number")),
    }
}

fn parse_binary(field: &str) -> std::result::Result<bool, String> {
    if is_missing(field) {
        return Err("missing value".into());
    }
    match field {
        "0" | "0.0" => Ok(false),
        "1" | "1.0" => Ok(true),
        _ => Err(format!("`{field}` is not binary (expected 0 or 1)")),
    }
}

struct Columns {
    outcome: usize,
    treatment: usize,
    source: usize,
    compliance: Option<usize>,
    covariates: Vec<usize>,
}

fn locate(headers: &csv::StringRecord, schema: &Schema) -> Result<Columns> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    Ok(Columns {
        outcome: find(&schema.outcome)?,
        treatment: find(&schema.treatment)?,
        source: find(&schema.source)?,
        compliance: schema.compliance.as_deref().map(find).transpose()?,
        covariates: schema.covariates.iter().map(|c| find(c)).collect::<Result<_>>()?,
    })
}

/// Parses CSV text under `schema` into a validated [`Dataset`].
pub fn read_dataset(reader: impl Read, schema: &Schema) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let cols = locate(rdr.headers()?, schema)?;

    let mut sources = vec![schema.primary_label.clone()];
    sources.extend(schema.supplemental_order.iter().cloned());
    let declared = !schema.supplemental_order.is_empty();

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let field = |c: usize| record.get(c).unwrap_or("");
        let parsed = (|| -> std::result::Result<Row, (String, String)> {
            let y = parse_real(field(cols.outcome)).map_err(|m| (schema.outcome.clone(), m))?;
            let treated = parse_binary(field(cols.treatment)).map_err(|m| (schema.treatment.clone(), m))?;
            let compliant = match (cols.compliance, &schema.compliance) {
                (Some(c), Some(name)) => Some(parse_binary(field(c)).map_err(|m| (name.clone(), m))?),
                _ => None,
            };
            let mut x = Vec::with_capacity(cols.covariates.len());
            for (&c, name) in cols.covariates.iter().zip(&schema.covariates) {
                x.push(parse_real(field(c)).map_err(|m| (name.clone(), m))?);
            }
            let label = field(cols.source);
            if is_missing(label) {
                return Err((schema.source.clone(), "missing value".into()));
            }
            let source = match sources.iter().position(|s| s == label) {
                Some(s) => s,
                None if !declared => {
                    sources.push(label.to_string());
                    sources.len() - 1
                }
                None => return Err((schema.source.clone(), format!("undeclared source `{label}`"))),
            };
            Ok(Row {
                y,
                treated,
                compliant,
                source,
                x,
            })
        })();
        match parsed {
            Ok(r) => rows.push(r),
            Err((column, message)) => match schema.missing {
                MissingPolicy::Strict => {
                    return Err(Error::Parse {
                        row: row_no,
                        column,
                        message,
                    })
                }
                MissingPolicy::Lenient => dropped += 1,
            },
        }
    }
    if !rows.iter().any(|r| r.source == 0) {
        return Err(Error::PrimaryAbsent(schema.primary_label.clone()));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing or unparseable fields");
    }
    let dataset = Dataset::new(rows, sources, schema.covariates.clone())?;
    Ok(Loaded { dataset, dropped })
}

/// Writes `data` as CSV with the column names bound in `schema`.
pub fn write_dataset(data: &Dataset, schema: &Schema, writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(schema.delimiter).from_writer(writer);
    let mut header = vec![schema.source.clone(), schema.outcome.clone(), schema.treatment.clone()];
    if let Some(c) = &schema.compliance {
        header.push(c.clone());
    }
    header.extend(schema.covariates.iter().cloned());
    w.write_record(&header)?;
    for r in data.rows() {
        let mut rec = vec![
            data.sources()[r.source].clone(),
            r.y.to_string(),
            u8::from(r.treated).to_string(),
        ];
        if schema.compliance.is_some() {
            rec.push(u8::from(r.compliant.unwrap_or(true)).to_string());
        }
        rec.extend(r.x.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new("y", "a", "s", "P", vec!["x1".into()])
    }

    #[test]
    fn source_lacking_an_arm_is_rejected() {
        let csv = "s,y,a,x1\nP,1,1,0\nP,2,0,1\nS1,3,1,2\n";
        let err = read_dataset(csv.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Positivity { ref label, .. } if label == "S1"), "{err}");
    }

    #[test]
    fn non_binary_treatment_names_row_and_column() {
        let csv = "s,y,a,x1\nP,1,1,0\nP,2,2,1\n";
        match read_dataset(csv.as_bytes(), &schema()).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "s,y,a\nP,1,1\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &schema()),
            Err(Error::MissingColumn(c)) if c == "x1"
        ));
    }

    #[test]
    fn primary_must_appear() {
        let csv = "s,y,a,x1\nQ,1,1,0\nQ,2,0,1\n";
        assert!(matches!(read_dataset(csv.as_bytes(), &schema()), Err(Error::PrimaryAbsent(_))));
    }

    #[test]
    fn lenient_mode_drops_and_counts() {
        let csv = "s,y,a,x1\nP,1,1,0\nP,NA,0,1\nP,2,0,1\n";
        assert!(read_dataset(csv.as_bytes(), &schema()).is_err());
        let mut s = schema();
        s.missing = MissingPolicy::Lenient;
        let loaded = read_dataset(csv.as_bytes(), &s).unwrap();
        assert_eq!(loaded.dropped, 1);
        assert_eq!(loaded.dataset.len(), 2);
    }

    #[test]
    fn declared_order_fixes_bit_positions() {
        let csv = "s,y,a,x1\nB,1,1,0\nB,1,0,0\nA,1,1,0\nA,1,0,0\nP,1,1,0\nP,2,0,1\n";
        let mut s = schema();
        let d = read_dataset(csv.as_bytes(), &s).unwrap().dataset;
        assert_eq!(d.sources(), &["P", "B", "A"]);
        s.supplemental_order = vec!["A".into(), "B".into()];
        let d = read_dataset(csv.as_bytes(), &s).unwrap().dataset;
        assert_eq!(d.sources(), &["P", "A", "B"]);
        s.supplemental_order = vec!["A".into()];
        assert!(read_dataset(csv.as_bytes(), &s).is_err());
    }

    #[test]
    fn semicolon_delimiter() {
        let csv = "s;y;a;x1\nP;1;1;0\nP;2;0;1\n";
        let mut s = schema();
        s.delimiter = b';';
        assert_eq!(read_dataset(csv.as_bytes(), &s).unwrap().dataset.len(), 2);
    }
}
