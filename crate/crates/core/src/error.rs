use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },

    #[error("invalid noise: {0}")]
    InvalidNoise(String),

    #[error("no active region: signal is silent")]
    NoActiveRegion,

    #[error("mask domain mismatch: expected {expected}, got {actual}")]
    Domain {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("forward cache does not belong to the current parameters")]
    StaleCache,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("unsupported audio: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    ) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }
}

/// Fails with [`Error::Shape`] unless both dims agree.
pub(crate) fn ensure_shape(
    context: &'static str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::shape(context, expected, actual))
    }
}
