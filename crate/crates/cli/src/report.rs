//! Experiment reports: named metrics, tolerances, and pass/fail checks,
//! serialized as human-diffable JSON with a companion CSV table.
//!
//! Reports are deterministic given the experiment seed — map fields are
//! ordered, floats serialize as shortest round-trip strings — with one
//! carve-out: the `timings` section holds wall-clock measurements, which are
//! machine-dependent by nature and therefore kept out of every determinism
//! comparison and populated only where timing is the point (benchmarks).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tenfact_core::Result;

/// How a check's observed value must relate to its threshold to pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
    Equal,
}

impl Relation {
    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::AtMost => value <= threshold,
            Relation::AtLeast => value >= threshold,
            Relation::Equal => value == threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Equal => "==",
        }
    }
}

/// One embedded acceptance check: an observed value against a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl CheckResult {
    /// One status line, e.g. `CHECK rel_err: PASS (3.1e-12 <= 1e-10)`.
    pub fn line(&self) -> String {
        format!(
            "CHECK {}: {} ({} {} {})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.value,
            self.relation.symbol(),
            self.threshold
        )
    }
}

/// Outcome of one experiment run: what was configured, what was measured,
/// and whether every embedded check passed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Experiment identifier (the kind name, e.g. `"flat"`).
    pub experiment: String,
    /// SHA-256 of the configuration JSON the run was launched with.
    pub config_hash: String,
    pub seed: u64,
    /// Every tolerance a check used, by check name.
    pub tolerances: BTreeMap<String, f64>,
    /// Scalar measurements (losses, accuracies, angles, counts).
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<CheckResult>,
    /// True iff every check passed.
    pub passed: bool,
    /// Wall-clock seconds; machine-dependent, excluded from determinism
    /// guarantees, empty outside benchmark runs.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config_hash: String, seed: u64) -> Self {
        ExperimentReport {
            experiment: experiment.into(),
            config_hash,
            seed,
            tolerances: BTreeMap::new(),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            passed: true,
            timings: BTreeMap::new(),
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn timing(&mut self, name: &str, seconds: f64) {
        self.timings.insert(name.into(), seconds);
    }

    /// Records a check, its tolerance, and its value; returns whether it
    /// passed and folds the outcome into `self.passed`.
    pub fn check(&mut self, name: &str, value: f64, relation: Relation, threshold: f64) -> bool {
        let passed = relation.holds(value, threshold);
        self.tolerances.insert(name.into(), threshold);
        self.metrics.insert(name.into(), value);
        self.checks.push(CheckResult {
            name: name.into(),
            value,
            threshold,
            relation,
            passed,
        });
        self.passed &= passed;
        passed
    }

    pub fn check_at_most(&mut self, name: &str, value: f64, threshold: f64) -> bool {
        self.check(name, value, Relation::AtMost, threshold)
    }

    pub fn check_at_least(&mut self, name: &str, value: f64, threshold: f64) -> bool {
        self.check(name, value, Relation::AtLeast, threshold)
    }

    pub fn check_equal(&mut self, name: &str, value: f64, expected: f64) -> bool {
        self.check(name, value, Relation::Equal, expected)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Tabular companion: one row per tolerance, metric, check, and timing.
    /// Floats print as shortest round-trip decimal strings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,name,value,threshold,relation,passed\n");
        for (name, v) in &self.tolerances {
            let _ = writeln!(out, "tolerance,{name},{v},,,");
        }
        for (name, v) in &self.metrics {
            let _ = writeln!(out, "metric,{name},{v},,,");
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "check,{},{},{},{},{}",
                c.name,
                c.value,
                c.threshold,
                c.relation.symbol(),
                c.passed
            );
        }
        for (name, v) in &self.timings {
            let _ = writeln!(out, "timing,{name},{v},,,");
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` under `dir`, creating it if
    /// needed; returns both paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let json_path = dir.join(format!("{stem}.json"));
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&json_path, self.to_json()?)?;
        std::fs::write(&csv_path, self.to_csv())?;
        Ok((json_path, csv_path))
    }

    /// One `CHECK ...` line per check plus a final verdict line.
    pub fn render_checks(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&c.line());
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "RESULT {}: {} ({}/{} checks passed)",
            self.experiment,
            if self.passed { "PASS" } else { "FAIL" },
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        );
        out
    }
}

/// SHA-256 hex digest of a configuration string.
pub fn config_hash(config_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}
