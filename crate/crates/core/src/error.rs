use std::path::PathBuf;

use thiserror::Error;

use crate::organism::NeuronId;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("plant capacity exceeded: {0}")]
    CapacityExceeded(String),

    #[error("neuron {0} assigned more than once")]
    DuplicateCell(NeuronId),

    #[error("fact for entity `{entity}` planted at layer {fact_layer}, not above its cell layer {cell_layer}")]
    FactBelowCell {
        entity: String,
        fact_layer: usize,
        cell_layer: usize,
    },

    #[error("invalid plant spec: {0}")]
    InvalidPlant(String),

    #[error("token id {id} out of vocabulary (size {vocab})")]
    OutOfVocabulary { id: u32, vocab: usize },

    #[error("invalid hook: {0}")]
    InvalidHook(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),

    #[error("truncated tensor blob: expected {expected} bytes, found {found}")]
    TruncatedBlob { expected: usize, found: usize },

    #[error("unknown word `{0}` for this vocabulary")]
    UnknownWord(String),

    #[error("no entity span found in prompt")]
    NoSpanFound,

    #[error("alias not present in question")]
    AliasAbsent,

    #[error("entity `{entity}` has no {kind} variants")]
    NoVariants { entity: String, kind: String },

    #[error("template `{0}` lacks an <entity> slot")]
    TemplateMissingSlot(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("malformed inventory record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(String),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate amnesia anchor: entity-present logprob {present} <= unknown logprob {unknown}")]
    DegenerateAnchor { present: f64, unknown: f64 },

    #[error("k = {k} exceeds vocabulary size {vocab}")]
    KTooLarge { k: usize, vocab: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("activation dump: {0}")]
    Dump(String),

    #[error("steering diverged at step {step}")]
    Diverged {
        step: usize,
        partial: Box<crate::steering::SteeringResult>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by input data rather than configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::CorruptManifest(_)
                | Error::TruncatedBlob { .. }
                | Error::DimensionMismatch(_)
                | Error::MalformedRecord { .. }
                | Error::DuplicateEntity(_)
                | Error::UnknownEntity(_)
                | Error::UnknownWord(_)
                | Error::NoSpanFound
                | Error::AliasAbsent
                | Error::NoVariants { .. }
                | Error::Dump(_)
                | Error::Io { .. }
                | Error::Json(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Diverged { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
