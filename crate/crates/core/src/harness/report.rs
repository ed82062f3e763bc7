//! Report tables, checks and their on-disk form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};

use super::config::{ExperimentConfig, ExperimentId};
use super::HarnessError;

/// One table cell. Floats are written to CSV with 17 significant digits.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    F(f64),
    I(i64),
    S(String),
    B(bool),
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::F(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::I(v as i64)
    }
}

impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::I(v as i64)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::B(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::S(v.into())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::S(v)
    }
}

impl Value {
    pub fn csv_text(&self) -> String {
        match self {
            Value::F(v) if v.is_finite() => format!("{v:.16e}"),
            Value::F(v) if v.is_nan() => "nan".into(),
            Value::F(v) if *v > 0.0 => "inf".into(),
            Value::F(_) => "-inf".into(),
            Value::I(v) => v.to_string(),
            Value::S(s) => s.clone(),
            Value::B(b) => b.to_string(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::F(v) => Some(v),
            Value::I(v) => Some(v as f64),
            _ => None,
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::F(v) if v.is_finite() => s.serialize_f64(*v),
            Value::F(_) => s.serialize_str(&self.csv_text()),
            Value::I(v) => s.serialize_i64(*v),
            Value::S(v) => s.serialize_str(v),
            Value::B(v) => s.serialize_bool(*v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Value::csv_text))?;
        }
        w.into_inner()
            .map_err(|e| HarnessError::Report(e.to_string()))
    }
}

/// A declared pass criterion and its outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentId,
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    /// Fitted constants, keyed by what they bound.
    pub constants: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    /// How balls, radii and measures enter the constants.
    pub conventions: BTreeMap<String, String>,
    pub pass: bool,
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn new(experiment: ExperimentId, config: &ExperimentConfig) -> Self {
        ExperimentReport {
            experiment,
            config: config.clone(),
            tables: Vec::new(),
            constants: BTreeMap::new(),
            checks: Vec::new(),
            conventions: BTreeMap::new(),
            pass: false,
            runtime_seconds: 0.0,
        }
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn convention(&mut self, key: &str, value: &str) {
        self.conventions.insert(key.into(), value.into());
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn find_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Sets `pass` from the checks; a report without checks fails.
    pub fn finish(&mut self) {
        self.pass = !self.checks.is_empty() && self.checks.iter().all(|c| c.pass);
    }

    pub fn csv_path(dir: &Path, experiment: ExperimentId, table: &str) -> PathBuf {
        dir.join(format!("{}_{table}.csv", experiment.name()))
    }

    pub fn json_path(dir: &Path, experiment: ExperimentId) -> PathBuf {
        dir.join(format!("{}.json", experiment.name()))
    }

    /// Writes `<experiment>.json` and one `<experiment>_<table>.csv` per table.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for t in &self.tables {
            let path = Self::csv_path(dir, self.experiment, &t.name);
            std::fs::write(&path, t.to_csv()?)?;
            written.push(path);
        }
        let path = Self::json_path(dir, self.experiment);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        written.push(path);
        Ok(written)
    }
}
