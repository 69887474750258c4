use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // subtitle io
    #[error("malformed timestamp at line {line}: {reason}")]
    MalformedTimestamp { line: usize, reason: String },
    #[error("missing block index at line {line}")]
    MissingIndex { line: usize },
    #[error("block {index} at line {line} has no text")]
    EmptyBlock { index: u32, line: usize },
    #[error("invalid pair: {0}")]
    InvalidPair(String),
    #[error("malformed tsv at line {line}: {reason}")]
    MalformedTsv { line: usize, reason: String },

    // embeddings
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("malformed embedding row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("embedding table is empty")]
    EmptyVocabulary,
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no in-vocabulary tokens on the {side} side")]
    EmptyAfterOov { side: &'static str },

    // scorers
    #[error("similarity matrix is empty")]
    EmptyMatrix,
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
    #[error("score out of range [0, 1]: {0}")]
    OutOfRangeScore(f64),

    // synth
    #[error("caption lexicon is empty")]
    EmptyLexicon,
    #[error("invalid caption {0:?}: captions must be bracketed and non-blank")]
    InvalidCaption(String),
    #[error("sequence too short: need at least {needed} tokens, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("corpus too small: need at least {needed} pairs, got {got}")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("no neighbouring block within window {window} of block {block}")]
    NoNeighborInWindow { block: usize, window: usize },
    #[error("no trigram in the sentence has a known leading bigram")]
    NoEligibleTrigram,

    // forest
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("invalid forest parameters: {0}")]
    InvalidForestParams(String),

    // neural model
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),

    // eval
    #[error("no samples to evaluate")]
    Empty,
    #[error("no positive (good or loose) samples")]
    NoPositives,

    // plumbing
    #[error("config error: {0}")]
    Config(String),
    #[error("unsupported format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used in machine-parseable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedTimestamp { .. } => "malformed_timestamp",
            Error::MissingIndex { .. } => "missing_index",
            Error::EmptyBlock { .. } => "empty_block",
            Error::InvalidPair(_) => "invalid_pair",
            Error::MalformedTsv { .. } => "malformed_tsv",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::MalformedRow { .. } => "malformed_row",
            Error::EmptyVocabulary => "empty_vocabulary",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::EmptyAfterOov { .. } => "empty_after_oov",
            Error::EmptyMatrix => "empty_matrix",
            Error::InvalidThreshold(_) => "invalid_threshold",
            Error::OutOfRangeScore(_) => "out_of_range_score",
            Error::EmptyLexicon => "empty_lexicon",
            Error::InvalidCaption(_) => "invalid_caption",
            Error::TooShort { .. } => "too_short",
            Error::CorpusTooSmall { .. } => "corpus_too_small",
            Error::NoNeighborInWindow { .. } => "no_neighbor_in_window",
            Error::NoEligibleTrigram => "no_eligible_trigram",
            Error::SingleClassData => "single_class_data",
            Error::InvalidForestParams(_) => "invalid_forest_params",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::InvalidModelConfig(_) => "invalid_model_config",
            Error::Empty => "empty",
            Error::NoPositives => "no_positives",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
