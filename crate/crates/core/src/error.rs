use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An environment configuration violates its invariants.
    InvalidConfig(String),
    /// A sequence length of zero was requested.
    EmptySequence,
    /// Fewer than seven tokens were given and the state cannot be recovered.
    InsufficientHistory {
        given: usize,
    },
    /// The token window is not a valid trajectory of the environment.
    InconsistentHistory,
    /// Peak detection needs at least three hidden states.
    TooFewStates {
        given: usize,
    },
    /// Mask and token sequence differ in length.
    LengthMismatch {
        expected: usize,
        found: usize,
    },
    EmptyReplayBuffer,
    /// A token never occurs in a hidden-state snapshot.
    MissingToken(char),
    /// The chunked protocol was asked to tag without a trained tagger.
    NoTagger,
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::EmptySequence => f.write_str("sequence length must be at least 1"),
            Error::InsufficientHistory { given } => {
                write!(f, "insufficient history: {given} tokens given, 7 required")
            }
            Error::InconsistentHistory => f.write_str("token window is not a valid trajectory"),
            Error::TooFewStates { given } => {
                write!(f, "peak detection needs at least 3 hidden states, got {given}")
            }
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::EmptyReplayBuffer => f.write_str("empty replay buffer"),
            Error::MissingToken(c) => write!(f, "token {c} never occurs in the snapshot"),
            Error::NoTagger => f.write_str("model has no trained context tagger"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
        }
    }
}

impl core::error::Error for Error {}
