use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihoods::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Categorical,
    Numeric,
    TargetClass,
    TargetReal,
    TargetCount,
    Timestamp,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// z-score this numeric column (statistics from the initial split).
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Class labels in index order for a class target; inferred (sorted) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

fn default_true() -> bool {
    true
}

fn default_missing() -> String {
    "__missing__".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    /// Replaces empty or `?` categorical cells.
    #[serde(default = "default_missing")]
    pub missing_token: String,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let s = Self {
            columns,
            missing_token: default_missing(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let targets = self.columns.iter().filter(|c| c.is_target()).count();
        if targets != 1 {
            return Err(Error::config("columns", format!("expected exactly one target column, found {targets}")));
        }
        if self.columns.iter().filter(|c| c.kind == ColumnKind::Timestamp).count() > 1 {
            return Err(Error::config("columns", "at most one timestamp column"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config("columns", format!("duplicate column `{}`", c.name)));
            }
            if c.classes.is_some() && c.kind != ColumnKind::TargetClass {
                return Err(Error::config("columns", format!("`classes` given for non-class column `{}`", c.name)));
            }
        }
        Ok(())
    }

    pub fn categorical_columns(&self) -> Vec<String> {
        self.names_of(ColumnKind::Categorical)
    }

    pub fn numeric_columns(&self) -> Vec<String> {
        self.names_of(ColumnKind::Numeric)
    }

    fn names_of(&self, kind: ColumnKind) -> Vec<String> {
        self.columns.iter().filter(|c| c.kind == kind).map(|c| c.name.clone()).collect()
    }

    pub fn target(&self) -> &ColumnSpec {
        self.columns.iter().find(|c| c.is_target()).expect("validated schema has a target")
    }

    pub fn categorical_index(&self, name: &str) -> Option<usize> {
        self.categorical_columns().iter().position(|c| c == name)
    }
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            normalize: true,
            classes: None,
        }
    }

    fn is_target(&self) -> bool {
        matches!(
            self.kind,
            ColumnKind::TargetClass | ColumnKind::TargetReal | ColumnKind::TargetCount
        )
    }
}

/// One observation: categorical values in schema order, numeric values in
/// schema order, the target and an optional timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub categorical: Vec<String>,
    pub numeric: Vec<f64>,
    pub target: Target,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    /// Labels of the class target in index order (empty for other targets).
    pub class_labels: Vec<String>,
    pub records: Vec<StreamRecord>,
}

impl Dataset {
    /// Distinct values of a categorical column, sorted.
    pub fn vocabulary(&self, column: usize) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.categorical[column].as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Sum of per-column vocabulary sizes over all categorical columns.
    pub fn total_vocabulary(&self) -> usize {
        (0..self.schema.categorical_columns().len()).map(|c| self.vocabulary(c).len()).sum()
    }

    /// Stable sort by timestamp; records without one keep their place relative to each other.
    pub fn sort_by_timestamp(&mut self) {
        self.records.sort_by_key(|r| r.timestamp.unwrap_or(i64::MIN));
    }
}

/// Reads a headed CSV file according to `schema`. Numeric columns are left
/// unnormalised; see [`Normalizer`].
pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("column `{name}` missing from the CSV header")))
    };
    let cols: Vec<(usize, &ColumnSpec)> = schema
        .columns
        .iter()
        .map(|c| Ok((position(&c.name)?, c)))
        .collect::<Result<_>>()?;
    let target = schema.target();
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let target_pos = position(&target.name)?;
    let class_labels: Vec<String> = match (&target.kind, &target.classes) {
        (ColumnKind::TargetClass, Some(labels)) => labels.clone(),
        (ColumnKind::TargetClass, None) => {
            let set: BTreeSet<&str> = rows.iter().map(|r| &r[target_pos]).collect();
            set.into_iter().map(str::to_string).collect()
        }
        _ => Vec::new(),
    };
    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        let mut rec = StreamRecord {
            categorical: Vec::new(),
            numeric: Vec::new(),
            target: Target::Real(0.0),
            timestamp: None,
        };
        for &(pos, spec) in &cols {
            let cell = &row[pos];
            let bad = |what: &str| Error::data(format!("line {line}, column `{}`: {what} `{cell}`", spec.name));
            match spec.kind {
                ColumnKind::Categorical => rec.categorical.push(if cell.is_empty() || cell == "?" {
                    schema.missing_token.clone()
                } else {
                    cell.to_string()
                }),
                ColumnKind::Numeric => rec.numeric.push(
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad("unparseable number"))?,
                ),
                ColumnKind::TargetClass => {
                    let idx = class_labels.iter().position(|l| l == cell).ok_or_else(|| bad("unknown class"))?;
                    rec.target = Target::Class(idx);
                }
                ColumnKind::TargetReal => {
                    rec.target = Target::Real(
                        cell.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| bad("unparseable target"))?,
                    )
                }
                ColumnKind::TargetCount => {
                    rec.target = Target::Count(cell.parse::<u64>().map_err(|_| bad("invalid count target"))?)
                }
                ColumnKind::Timestamp => {
                    rec.timestamp = Some(cell.parse::<i64>().map_err(|_| bad("invalid timestamp"))?)
                }
                ColumnKind::Ignore => {}
            }
        }
        records.push(rec);
    }
    Ok(Dataset {
        schema: schema.clone(),
        class_labels,
        records,
    })
}

/// Per-column z-score statistics for numeric features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fits on `fit_on`; columns with `normalize == false` keep mean 0, sd 1.
    /// Constant columns get sd 1.
    pub fn fit<'a>(schema: &Schema, fit_on: impl IntoIterator<Item = &'a StreamRecord>) -> Self {
        let flags: Vec<bool> = schema
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numeric)
            .map(|c| c.normalize)
            .collect();
        let n_cols = flags.len();
        let mut sum = vec![0.0; n_cols];
        let mut sq = vec![0.0; n_cols];
        let mut n = 0usize;
        for r in fit_on {
            n += 1;
            for (j, v) in r.numeric.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        let mut mean = vec![0.0; n_cols];
        let mut std = vec![1.0; n_cols];
        if n > 0 {
            for j in 0..n_cols {
                if flags[j] {
                    let m = sum[j] / n as f64;
                    let var = (sq[j] / n as f64 - m * m).max(0.0);
                    mean[j] = m;
                    std[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
                }
            }
        }
        Self { mean, std }
    }

    pub fn apply(&self, records: &mut [StreamRecord]) {
        for r in records {
            for (j, v) in r.numeric.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
    }
}
