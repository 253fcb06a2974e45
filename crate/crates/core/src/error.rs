use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NsfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NsfError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("silent input")]
    SilentInput,

    #[error("wav parse error at byte {offset}: {kind}")]
    Wav { offset: u64, kind: WavErrorKind },

    #[error("f0 parse error at line {line}: {message}")]
    F0Parse { line: usize, message: String },

    #[error("feature file parse error at line {line}: {message}")]
    FeatureParse { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config file error at line {line}: {message}")]
    ConfigFile { line: usize, message: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("backward called on a forward pass that was not taped")]
    DetachedGraph,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WavErrorKind {
    Truncated(&'static str),
    NotRiff,
    NotWave,
    MissingChunk(&'static str),
    UnsupportedFormat(u16),
    UnsupportedBitDepth(u16),
    UnsupportedChannels(u16),
    BadBlockAlign(u16),
    ZeroSampleRate,
    ChunkLengthMismatch {
        chunk: String,
        declared: u32,
        available: u64,
    },
}

impl std::fmt::Display for WavErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WavErrorKind::Truncated(what) => write!(f, "truncated {what}"),
            WavErrorKind::NotRiff => write!(f, "missing RIFF tag"),
            WavErrorKind::NotWave => write!(f, "missing WAVE tag"),
            WavErrorKind::MissingChunk(c) => write!(f, "missing '{c}' chunk"),
            WavErrorKind::UnsupportedFormat(t) => write!(f, "unsupported format tag {t} (PCM only)"),
            WavErrorKind::UnsupportedBitDepth(b) => write!(f, "unsupported bit depth {b} (16 only)"),
            WavErrorKind::UnsupportedChannels(c) => write!(f, "unsupported channel count {c} (mono only)"),
            WavErrorKind::BadBlockAlign(a) => write!(f, "block align {a} does not match mono PCM16"),
            WavErrorKind::ZeroSampleRate => write!(f, "sample rate is zero"),
            WavErrorKind::ChunkLengthMismatch {
                chunk,
                declared,
                available,
            } => write!(
                f,
                "'{chunk}' chunk declares {declared} bytes but {available} are available"
            ),
        }
    }
}

impl NsfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NsfError::Io {
            path: path.into(),
            source,
        }
    }
}
