use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("malformed MIDI header: {0}")]
    MalformedHeader(&'static str),
    #[error("truncated chunk at byte offset {offset}")]
    TruncatedChunk { offset: usize },
    #[error("unsupported MIDI file: {0}")]
    Unsupported(&'static str),
    #[error("invalid MIDI data at byte offset {offset}: {what}")]
    InvalidEvent { offset: usize, what: &'static str },
    #[error("note-on for pitch {pitch} at tick {tick} is never closed")]
    UnmatchedNoteOn { pitch: u8, tick: u64 },
    #[error("document contains no quantizable notes")]
    EmptyDocument,
    #[error("no source matrix has at least {needed} steps")]
    NoEligibleSource { needed: usize },
    #[error(
        "note state invariant violated at note {note}, step {step}: articulated but not played"
    )]
    InvariantViolation { note: usize, step: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: String },
    #[error("invalid primer: {0}")]
    InvalidPrimer(String),
}
