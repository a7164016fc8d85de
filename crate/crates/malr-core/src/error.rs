//! Crate-wide error type shared by every module.
//!
//! A single enum keeps error handling uniform across the pipeline and lets
//! the CLI map any failure to its exit-code class: backend failures (a model
//! endpoint or oracle adapter misbehaving) versus data errors (bad input
//! files, unknown charges, broken invariants).

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("template `{template}`: no binding for slot `{slot}`")]
    MissingSlot { template: String, slot: String },

    #[error("template `{name}` is invalid: {reason}")]
    InvalidTemplate { name: String, reason: String },

    #[error("template `{name}` not found")]
    TemplateNotFound { name: String },

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("backend `{backend}` unreachable after {attempts} attempts: {message}")]
    BackendUnreachable {
        backend: String,
        attempts: u32,
        message: String,
    },

    #[error("backend `{backend}` returned a malformed response ({reason}); payload: {payload}")]
    MalformedResponse {
        backend: String,
        reason: String,
        payload: String,
    },

    #[error("unusable output from `{agent}`: {reason}; raw output: {raw}")]
    ModelOutput {
        agent: String,
        reason: String,
        raw: String,
    },

    #[error("oracle adapter `{adapter}` failed: {message}")]
    Oracle { adapter: String, message: String },

    #[error("console oracle reached end of input")]
    ConsoleEndOfInput,

    #[error("cannot embed empty text")]
    EmptyEmbeddingText,

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown charge `{0}`")]
    UnknownCharge(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("{path}:{line}: {message}")]
    DataFormat {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("trial budget exhausted for charge `{charge}` at L={max_trials}")]
    TrialBudget { charge: String, max_trials: u32 },

    #[error("judging `{charge}` aborted after {completed} sub-answers: {source}")]
    JudgmentAborted {
        charge: String,
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Helper for attaching a path to an I/O failure.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True when the failure originates in a model backend or oracle adapter
    /// rather than in the caller's data. The CLI maps these to exit code 2,
    /// everything else to exit code 3.
    pub fn is_backend_failure(&self) -> bool {
        match self {
            Error::Backend { .. }
            | Error::BackendUnreachable { .. }
            | Error::MalformedResponse { .. }
            | Error::ModelOutput { .. }
            | Error::Oracle { .. }
            | Error::ConsoleEndOfInput => true,
            Error::JudgmentAborted { source, .. } => source.is_backend_failure(),
            _ => false,
        }
    }
}
