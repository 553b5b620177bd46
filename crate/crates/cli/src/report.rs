//! Reports, tables and their files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliResult;

/// One named pass/fail judgement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// Numeric table written as CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Seventeen significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Machine-readable outcome of one command. Contains no timing so that
/// identical inputs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub results: serde_json::Value,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
}

impl Report {
    pub fn new(command: &str, config: &ExperimentConfig, results: serde_json::Value, verdicts: Vec<Verdict>) -> Self {
        let passed = verdicts.iter().all(|v| v.passed);
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            results,
            verdicts,
            passed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kp {} {}", self.command, self.version);
        for v in &self.verdicts {
            let _ = writeln!(s, "  [{}] {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
        }
        let _ = writeln!(s, "overall: {}", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}

/// Writes `<stem>.json`, `<stem>.txt`, one CSV per table and
/// `<stem>.timing.json`. Returns the written paths.
pub fn write_outputs(dir: &Path, stem: &str, report: &Report, tables: &[Table], elapsed: Duration) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> CliResult<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put(format!("{stem}.json"), report.to_json())?;
    put(format!("{stem}.txt"), report.summary())?;
    for t in tables {
        put(format!("{stem}.{}.csv", t.name), t.to_csv())?;
    }
    let timing = serde_json::json!({ "command": report.command, "elapsed_seconds": elapsed.as_secs_f64() });
    put(format!("{stem}.timing.json"), serde_json::to_string_pretty(&timing).expect("timing serialises"))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_doubles() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![0.1, 1.0 / 3.0]);
        let csv = t.to_csv();
        let line = csv.lines().nth(1).unwrap();
        let back: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(back, vec![0.1, 1.0 / 3.0]);
        assert!(csv.starts_with("a,b\n"));
    }
}
