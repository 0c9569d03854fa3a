use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("batch size must be at least 1")]
    ZeroBatch,

    #[error("insufficient tokens: {tokens} tokens for batch size {batch}")]
    InsufficientTokens { tokens: usize, batch: usize },

    #[error("tying size mismatch: embedding size {embedding} vs top hidden size {hidden}")]
    TyingSizeMismatch { embedding: usize, hidden: usize },

    #[error(
        "softmax inheritance size mismatch: previous top size {previous} vs new layer size {new}"
    )]
    SoftmaxInheritanceMismatch { previous: usize, new: usize },

    #[error("numeric overflow in layer {layer} at timestep {timestep}")]
    NumericOverflow { layer: usize, timestep: usize },

    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("clip policy is missing group {0}")]
    MissingClipGroup(String),

    #[error("clip policy names unknown group {0}")]
    UnknownClipGroup(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("empty stream")]
    EmptyStream,

    #[error("link {link}: {detail}")]
    ChainLink { link: usize, detail: String },

    #[error(
        "alphabet explosion: {symbols} distinct symbols exceed budget {budget}; use coarser bins"
    )]
    AlphabetExplosion { symbols: usize, budget: usize },

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("phase {phase}, epoch {epoch}, step {step}: {source}")]
    Training {
        phase: usize,
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
