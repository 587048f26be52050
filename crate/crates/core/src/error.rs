//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape disagreement between two operands; `context` names the site
    /// (e.g. the offending layer) so callers can report it directly.
    #[error("dimension mismatch at {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// The spectrogram has no energy; no spectral basis can be extracted.
    #[error("rank deficient: spectrogram carries no energy")]
    RankDeficient,

    /// Energy VAD found no frame above the absolute silence floor.
    #[error("no speech detected")]
    NoSpeechDetected,

    /// CTC: the frame sequence cannot carry the label sequence.
    #[error("sequence too short: {frames} frames cannot align {needed} required symbols")]
    SequenceTooShort { frames: usize, needed: usize },

    /// First-pass decoding: the utterance is shorter than every word's state chain.
    #[error("no feasible word: utterance of {frames} frames is shorter than every lexicon entry")]
    EmptyFeasibleSet { frames: usize },

    /// Training targets collapse to a single class where at least two are required.
    #[error("degenerate targets: {0}")]
    DegenerateTargets(String),

    /// Loss interpolation was asked to weight a component that was not supplied.
    #[error("missing loss component {head:?} with nonzero weight {weight}")]
    MissingComponent { head: String, weight: f64 },

    /// Rescoring weights reference a scorer absent from a hypothesis.
    #[error("hypothesis {word:?} has no score from scorer {scorer:?}")]
    MissingScore { scorer: String, word: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed artifact file (bad magic, version, or structure).
    #[error("format error in {context}: {detail}")]
    Format { context: String, detail: String },
}

impl Error {
    pub fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn format(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
