//! Crate-wide error type.
//!
//! Every fallible operation returns [`enum@Error`]; variants carry enough
//! context (indices, names, bounds) to produce actionable CLI messages.

use thiserror::Error;

/// Errors raised by the analysis, engine, and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Adversarial margin g ≤ 0: the requested ε pushes the class centroids
    /// past each other, violating the closed-form hypotheses.
    #[error("non-positive adversarial margin g = {g}: epsilon too large for this task")]
    NonPositiveMargin { g: f64 },

    /// σ outside the domain of the closed forms.
    #[error("invalid sigma {sigma}: must be ≥ 1 (σ > 1 for the unequal-variance theory)")]
    InvalidSigma { sigma: f64 },

    /// An ordered pair of scan parameters was not strictly increasing.
    #[error("invalid order: {name} requires {low} < {high}")]
    InvalidOrder {
        name: &'static str,
        low: f64,
        high: f64,
    },

    /// Asymmetric-margin analysis requires 0 < ε₋ ≤ ε₊ < η.
    #[error("invalid margins: need 0 < eps_neg ({eps_neg}) ≤ eps_pos ({eps_pos}) < eta ({eta})")]
    InvalidMargins {
        eps_pos: f64,
        eps_neg: f64,
        eta: f64,
    },

    /// Fairness preset requires far_gap > near_gap > 0 and enough dimensions.
    #[error("invalid gaps: {reason}")]
    InvalidGaps { reason: String },

    /// A network needs at least one layer transition.
    #[error("empty architecture: need at least 2 layer sizes, got {got}")]
    EmptyArchitecture { got: usize },

    /// Shapes do not chain.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A class-probability matrix failed validation.
    #[error("invalid probability matrix, row {row}: {reason}")]
    InvalidMatrix { row: usize, reason: String },

    /// An embedding vector with zero norm cannot define cosine similarity.
    #[error("zero embedding for class {class}")]
    ZeroEmbedding { class: usize },

    /// A similarity row lost all its mass after flooring negatives.
    #[error("degenerate similarity row {row}: all entries floored to zero")]
    DegenerateRow { row: usize },

    /// A class contributed no examples where at least one was required.
    #[error("class {class} has no examples")]
    EmptyClass { class: usize },

    /// ρ is undefined when a baseline accuracy is zero.
    #[error("zero baseline accuracy ({which}): rho undefined")]
    ZeroBaseline { which: &'static str },

    /// Correlation input too short or with zero variance.
    #[error("degenerate correlation input: {reason}")]
    DegenerateInput { reason: String },

    /// Configuration-level violation (bad field values, inconsistent specs).
    #[error("configuration error: {0}")]
    Config(String),

    /// File-system failure while reading or writing artifacts.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file that should contain numeric CSV/JSON failed to parse.
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
}

impl Error {
    /// Convenience constructor for configuration violations.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wrap an I/O error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Convenience constructor for parse failures, keyed by path.
    pub fn parse(path: &std::path::Path, reason: String) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            reason,
        }
    }
}
