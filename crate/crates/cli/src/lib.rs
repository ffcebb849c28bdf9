//! Batch runner for the verification suite: select scenarios, identities,
//! grid levels, replicate counts and seeds; execute the checks; emit
//! machine-readable reports and plots.

pub mod config;
pub mod plots;
pub mod report;
pub mod runner;

use std::fs;
use std::path::Path;

use config::RunConfig;
use report::RunReport;

/// Execute a configuration and write report.json, checks.csv and the
/// residual-curve SVGs into the output directory.
pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<RunReport, RunError> {
    let resolved = config.resolve().map_err(RunError::Usage)?;
    let (records, curves) = runner::run_checks(&resolved).map_err(RunError::Check)?;
    let report = RunReport::new(config.clone(), records);
    fs::create_dir_all(out_dir).map_err(|e| RunError::Io(format!("{}: {e}", out_dir.display())))?;
    let json_path = out_dir.join("report.json");
    fs::write(&json_path, report.to_json())
        .map_err(|e| RunError::Io(format!("{}: {e}", json_path.display())))?;
    let csv_path = out_dir.join("checks.csv");
    fs::write(&csv_path, report.to_csv())
        .map_err(|e| RunError::Io(format!("{}: {e}", csv_path.display())))?;
    for artifact in &curves {
        let name = format!("{}_{}_residual.svg", artifact.scenario, artifact.identity);
        let path = out_dir.join(name);
        fs::write(&path, plots::residual_curve_svg(artifact))
            .map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(report)
}

#[derive(Debug)]
pub enum RunError {
    /// Bad configuration or arguments.
    Usage(iwlab_core::Error),
    /// Filesystem failure while writing outputs.
    Io(String),
    /// A check failed to execute (not a failed assertion — an error).
    Check(iwlab_core::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Usage(e) => write!(f, "usage: {e}"),
            RunError::Io(e) => write!(f, "io: {e}"),
            RunError::Check(e) => write!(f, "check execution: {e}"),
        }
    }
}
