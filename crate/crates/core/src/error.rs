use std::path::PathBuf;

use crate::graph::RelationKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(
        "node space must have at least one user, item and bundle (got {users}, {items}, {bundles})"
    )]
    EmptyNodeSpace {
        users: usize,
        items: usize,
        bundles: usize,
    },

    #[error(
        "{relation} edge ({src}, {dst}) out of bounds: ids must be < ({src_limit}, {dst_limit})"
    )]
    EdgeOutOfBounds {
        relation: RelationKind,
        src: usize,
        dst: usize,
        src_limit: usize,
        dst_limit: usize,
    },

    #[error("invalid {relation} delta for pair ({src}, {dst}): {reason}")]
    DeltaConflict {
        relation: RelationKind,
        src: usize,
        dst: usize,
        reason: &'static str,
    },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error(
        "{relation} quota of {target} perturbations not reached after {batches} batches \
         ({adds} adds, {drops} drops)"
    )]
    QuotaUnreachable {
        relation: RelationKind,
        target: usize,
        adds: usize,
        drops: usize,
        batches: usize,
    },

    #[error("{relation} needs {needed} {category} but only {available} are available")]
    QuotaExceedsAvailable {
        relation: RelationKind,
        category: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("invalid config value for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("row {row} is not unit-normalized (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown {kind} id {id} (count {count})")]
    UnknownNode {
        kind: &'static str,
        id: usize,
        count: usize,
    },

    #[error("outside the theorem's domain: {0}")]
    OutOfDomain(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{stage} requires {required} stage output (missing {path})")]
    MissingArtifact {
        stage: &'static str,
        required: &'static str,
        path: PathBuf,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig { .. } | Error::OutOfDomain(_) => 2,
            Error::EmptyNodeSpace { .. }
            | Error::EdgeOutOfBounds { .. }
            | Error::DeltaConflict { .. }
            | Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::UnknownNode { .. }
            | Error::MissingArtifact { .. }
            | Error::QuotaUnreachable { .. }
            | Error::QuotaExceedsAvailable { .. } => 3,
            Error::NonFiniteLoss { .. }
            | Error::NotNormalized { .. }
            | Error::DimensionMismatch { .. } => 4,
            Error::Io { .. } => 1,
        }
    }
}
