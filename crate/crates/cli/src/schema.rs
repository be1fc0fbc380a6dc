//! JSON schema for `report.json`.

use std::path::Path;

use reconboost_core::Error;
use serde_json::Value;

/// The shipped report schema.
pub const REPORT_SCHEMA: &str = include_str!("../../../docs/report.schema.json");

/// Validates a parsed report, returning one message per violation.
pub fn validate_report(report: &Value) -> Result<(), Vec<String>> {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).map_err(|e| vec![format!("schema: {e}")])?;
    let validator = jsonschema::validator_for(&schema).map_err(|e| vec![format!("schema: {e}")])?;
    let errors: Vec<String> = validator
        .iter_errors(report)
        .map(|e| format!("{}: {e}", e.instance_path()))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

pub fn validate_report_file(path: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
    validate_report(&value).map_err(|errs| format(format!("schema violations: {}", errs.join("; "))))
}
