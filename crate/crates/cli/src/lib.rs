//! Batch harness behind the `sim` binary: experiment configs, run and
//! ensemble records, reports and SVG plots.

pub mod commands;
pub mod config;
pub mod plot;
pub mod records;

use std::path::Path;

use resvec_core::analysis::AnalysisError;
use resvec_core::engine::{EngineError, EnsembleError};
use resvec_core::privacy::PrivacyError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("engine error: {0}")]
    Engine(String),
    /// The implementation broke one of its own guarantees.
    #[error("defect: {0}")]
    Defect(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Input(_) => 2,
            CliError::Engine(_) | CliError::Defect(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Input(_) => "input",
            CliError::Engine(_) => "engine",
            CliError::Defect(_) => "defect",
            CliError::Check(_) => "check",
        }
    }

    /// Single-line JSON description for machine consumption.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct ErrorRecord<'a> {
            status: &'static str,
            kind: &'static str,
            exit_code: i32,
            #[serde(skip_serializing_if = "Option::is_none")]
            field: Option<&'a str>,
            message: String,
        }
        let field = match self {
            CliError::Config { field, .. } => Some(field.as_str()),
            _ => None,
        };
        let rec = ErrorRecord {
            status: "error",
            kind: self.kind(),
            exit_code: self.exit_code(),
            field,
            message: self.to_string(),
        };
        serde_json::to_string(&rec).expect("plain record serializes")
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config { field, msg } => CliError::config(format!("sim.{field}"), msg),
            other => CliError::Engine(other.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        CliError::Engine(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Input(format!("analysis: {e}"))
    }
}

impl From<PrivacyError> for CliError {
    fn from(e: PrivacyError) -> Self {
        CliError::config("privacy", e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
