use std::fmt;

use glyphtag::corpus::CorpusError;
use glyphtag::encoders::PretrainError;
use glyphtag::eval::EvalError;
use glyphtag::glyphdict::GlyphError;
use glyphtag::ndtensor::TensorError;
use glyphtag::optim::OptimError;
use glyphtag::tagger::{CheckpointError, CrfError, EmbeddingError, TagError};

/// Errors bucketed by exit code: 1 generic, 2 configuration,
/// 3 numeric failure, 4 I/O.
#[derive(Debug)]
pub enum CliError {
    Generic(String),
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Generic(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Generic(m) | CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<GlyphError> for CliError {
    fn from(e: GlyphError) -> Self {
        match e {
            GlyphError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Generic(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => CliError::Io(e.to_string()),
            CorpusError::BadScheme(_) => CliError::Config(e.to_string()),
            other => CliError::Generic(other.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Generic(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Generic(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Generic(e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::InvalidConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<PretrainError> for CliError {
    fn from(e: PretrainError) -> Self {
        match e {
            PretrainError::Diverged(_) => CliError::Numeric(e.to_string()),
            PretrainError::Optim(inner) => inner.into(),
            PretrainError::EmptyDictionary => CliError::Generic(e.to_string()),
            PretrainError::Tensor(inner) => inner.into(),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::Generic(other.to_string()),
        }
    }
}

impl From<CrfError> for CliError {
    fn from(e: CrfError) -> Self {
        CliError::Generic(e.to_string())
    }
}

impl From<TagError> for CliError {
    fn from(e: TagError) -> Self {
        match e {
            TagError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TagError::Optim(inner) => inner.into(),
            TagError::Tensor(inner) => inner.into(),
            TagError::Embedding(inner) => inner.into(),
            other => CliError::Generic(other.to_string()),
        }
    }
}
