//! Scenario files: the JSON documents the command-line tool runs.
//!
//! A scenario has three top-level sections — `cluster`, `traffic`, and an
//! optional `output` — mirroring [`Scenario`]. Unknown keys are rejected
//! with the line and column of the offending token.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::sim::Scenario;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {source}", line = .source.line(), column = .source.column())]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Parses a scenario document. Spec and traffic validation happen later,
/// when the scenario runs.
pub fn parse_scenario(json: &str) -> Result<Scenario, serde_json::Error> {
    serde_json::from_str(json)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
        .map_err(|source| ScenarioError::Parse { path: path.display().to_string(), source })
}

pub fn scenario_to_json(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(scenario).expect("scenarios always serialize")
}
