use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("world too small: {width}x{height} (need at least 4x4)")]
    WorldTooSmall { width: usize, height: usize },
    #[error("object vocabulary is empty")]
    EmptyVocab,
    #[error("no path with at least {min} steps exists in world {world}")]
    UnreachableLength { world: u64, min: usize },
    #[error("invalid length range ({min}, {max})")]
    InvalidLengthRange { min: usize, max: usize },
    #[error("unknown viewpoint {0}")]
    UnknownViewpoint(usize),
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("history step {step} exceeds capacity {capacity}")]
    Capacity { step: usize, capacity: usize },
    #[error("layer {0} has no adapter")]
    NoAdapter(usize),
    #[error("sequence of {len} tokens exceeds context length {context}")]
    ContextOverflow { len: usize, context: usize },
    #[error("no supervised positions in sequence")]
    EmptyMask,
    #[error("degenerate feature: zero-norm pooled panorama at step {0}")]
    DegenerateFeature(usize),
    #[error("index {index} out of range {len}")]
    Index { index: usize, len: usize },
    #[error("stmt needs a previous viewpoint (prefix length {0})")]
    NoPreviousViewpoint(usize),
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite loss at step {step} (task {task}, grad norm {grad_norm})")]
    NonFinite {
        step: usize,
        task: String,
        grad_norm: f64,
    },
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint schema {found} cannot be loaded by schema {expected}; migration required")]
    Migration { found: u32, expected: u32 },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_)
            | Error::InvalidLengthRange { .. }
            | Error::WorldTooSmall { .. }
            | Error::EmptyVocab
            | Error::Capacity { .. }
            | Error::NoAdapter(_)
            | Error::ContextOverflow { .. } => 2,
            Error::NonFinite { .. } | Error::DegenerateFeature(_) | Error::Shape { .. } => 4,
            _ => 3,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
