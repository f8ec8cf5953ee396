//! Machine-readable check reports and the tolerance ladder.

use serde::{Deserialize, Serialize};

/// Three-level tolerance ladder: exact-arithmetic identities, identities with
/// one finite-difference level, and identities comparing two independently
/// differentiated quantities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Tolerances {
    pub exact: f64,
    pub fd1: f64,
    pub fd2: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            exact: 1e-12,
            fd1: 1e-7,
            fd2: 1e-5,
        }
    }
}

/// One check row: name, measured defect, tolerance applied, verdict.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Max-abs defect; absent when the check could not run.
    pub defect: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckResult {
    pub fn measured(name: &str, defect: f64, tolerance: f64) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            defect: Some(defect),
            tolerance,
            pass: defect.is_finite() && defect < tolerance,
            error: None,
        }
    }

    pub fn failed(name: &str, tolerance: f64, error: String) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            defect: None,
            tolerance,
            pass: false,
            error: Some(error),
        }
    }
}

/// The full report for one scenario run. Byte-stable for a fixed scenario,
/// seed and tool version.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub version: String,
    pub scenario: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub spinor_derivative_convention: String,
    pub checks: Vec<CheckResult>,
    pub overall_pass: bool,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One pass/fail line per check plus a summary line.
    pub fn to_pretty(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "scenario {} (digest {}, seed {})\n",
            self.scenario, self.scenario_digest, self.seed
        ));
        for c in &self.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            match (&c.defect, &c.error) {
                (Some(d), _) => out.push_str(&format!(
                    "{verdict}  {:<26} defect {:>12.4e}  tolerance {:>9.1e}\n",
                    c.name, d, c.tolerance
                )),
                (None, Some(e)) => {
                    out.push_str(&format!("{verdict}  {:<26} error: {e}\n", c.name))
                }
                (None, None) => out.push_str(&format!("{verdict}  {:<26}\n", c.name)),
            }
        }
        out.push_str(&format!(
            "overall: {}\n",
            if self.overall_pass { "PASS" } else { "FAIL" }
        ));
        out
    }
}
