//! Crate-wide error type.

/// Errors reported by any operation in this crate.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input: {context}")]
    NonFinite { context: String },

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("label {label} out of range 1..={num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("pair index {index} out of range for batch of {len}")]
    PairIndexOutOfRange { index: usize, len: usize },

    #[error("invalid probability distribution: {reason}")]
    InvalidDistribution { reason: String },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    #[error("class {label} has only {count} sample(s); at least {required} required")]
    ClassTooSmall {
        label: usize,
        count: usize,
        required: usize,
    },

    #[error("identity {label} has a single sample; closed-set trials need at least 2")]
    SingletonIdentity { label: usize },

    #[error("no class with at least 2 samples; cannot build similar pairs")]
    NoPairableClass,

    #[error("need at least {required} distinct identities, found {found}")]
    TooFewIdentities { required: usize, found: usize },

    #[error("empty input: {context}")]
    EmptyInput { context: String },

    #[error("sample {index} produced a zero embedding; cannot l2-normalize")]
    ZeroEmbedding { index: usize },

    #[error("non-finite gradient in {context}; training aborted")]
    NonFiniteGradient { context: String },

    #[error("probe identity {label} absent from gallery; use the open-set protocol for unknown identities")]
    ProbeIdentityNotInGallery { label: usize },

    #[error("{path}:{line}: {reason}")]
    FileFormat {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("checkpoint error: {reason}")]
    Checkpoint { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
