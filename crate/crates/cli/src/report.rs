//! Report assembly: named checks, computed scalars, and CSV side files.

use serde::Serialize;
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<="` or `"in"`.
    pub relation: &'static str,
    pub bound: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub started_unix_seconds: f64,
    pub elapsed_seconds: f64,
}

/// Everything except `timing` is a deterministic function of the scenario.
#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub tolerance_scale: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub results: Map<String, Value>,
    pub files: Vec<String>,
    pub timing: Timing,
}

pub struct ReportBuilder {
    out: PathBuf,
    scale: f64,
    checks: Vec<Check>,
    results: Map<String, Value>,
    files: Vec<String>,
}

impl ReportBuilder {
    pub fn new(out: &Path, tolerance_scale: f64) -> ReportBuilder {
        ReportBuilder { out: out.to_path_buf(), scale: tolerance_scale, checks: Vec::new(), results: Map::new(), files: Vec::new() }
    }

    pub fn tolerance_scale(&self) -> f64 {
        self.scale
    }

    /// `value ≤ limit · tolerance_scale`.
    pub fn at_most(&mut self, name: &str, value: f64, limit: f64) -> bool {
        let bound = limit * self.scale;
        self.push(name, value, "<=", vec![bound], value <= bound)
    }

    pub fn within(&mut self, name: &str, value: f64, lo: f64, hi: f64) -> bool {
        self.push(name, value, "in", vec![lo, hi], value >= lo && value <= hi)
    }

    fn push(&mut self, name: &str, value: f64, relation: &'static str, bound: Vec<f64>, passed: bool) -> bool {
        let passed = passed && value.is_finite();
        self.checks.push(Check { name: name.to_string(), value, relation, bound, passed });
        passed
    }

    pub fn set(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    /// Writes a comma-separated file with a header row into the output directory.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), String> {
        let path = self.out.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        w.write_record(header).map_err(|e| e.to_string())?;
        for r in rows {
            w.write_record(&r).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(self, command: &str, seed: u64, timing: Timing) -> Report {
        let passed = self.checks.iter().all(|c| c.passed);
        Report { command: command.to_string(), seed, tolerance_scale: self.scale, passed, checks: self.checks, results: self.results, files: self.files, timing }
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}
