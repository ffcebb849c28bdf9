//! Machine-readable run reports: JSON records and flat CSV rows.
//!
//! Report content is a pure function of (config, seed, version): wall-clock
//! timings are kept out of the serialized artifacts so repeated runs are
//! byte-identical.

use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub scenario: String,
    pub identity: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub statistic: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub pass: bool,
    /// Informational rows carry no tolerance and never gate the suite.
    pub adjudicated: bool,
    #[serde(skip)]
    pub runtime_ms: u64,
}

impl CheckRecord {
    pub fn info(
        scenario: &str,
        identity: &str,
        level: Option<u32>,
        dt: Option<f64>,
        statistic: &str,
        value: f64,
    ) -> Self {
        CheckRecord {
            scenario: scenario.into(),
            identity: identity.into(),
            level,
            dt,
            statistic: statistic.into(),
            value,
            tolerance: None,
            pass: true,
            adjudicated: false,
            runtime_ms: 0,
        }
    }

    pub fn gated(
        scenario: &str,
        identity: &str,
        level: Option<u32>,
        dt: Option<f64>,
        statistic: &str,
        value: f64,
        tolerance: f64,
        pass: bool,
    ) -> Self {
        CheckRecord {
            scenario: scenario.into(),
            identity: identity.into(),
            level,
            dt,
            statistic: statistic.into(),
            value,
            tolerance: Some(tolerance),
            pass,
            adjudicated: true,
            runtime_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub total: usize,
    pub adjudicated: usize,
    pub passed: usize,
    pub failed: usize,
    pub suite_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: String,
    pub config: RunConfig,
    pub records: Vec<CheckRecord>,
    pub summary: Summary,
}

impl RunReport {
    pub fn new(config: RunConfig, records: Vec<CheckRecord>) -> Self {
        let adjudicated = records.iter().filter(|r| r.adjudicated).count();
        let failed = records.iter().filter(|r| r.adjudicated && !r.pass).count();
        let summary = Summary {
            total: records.len(),
            adjudicated,
            passed: adjudicated - failed,
            failed,
            suite_pass: failed == 0,
        };
        RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            records,
            summary,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Flat rows; columns in order: scenario, identity, level, dt,
    /// statistic_name, value, tolerance, pass.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,identity,level,dt,statistic_name,value,tolerance,pass\n");
        for r in &self.records {
            let level = r.level.map(|l| l.to_string()).unwrap_or_default();
            let dt = r.dt.map(|d| d.to_string()).unwrap_or_default();
            let tol = r.tolerance.map(|t| t.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.scenario, r.identity, level, dt, r.statistic, r.value, tol, r.pass
            ));
        }
        out
    }
}
