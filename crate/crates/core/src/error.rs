use thiserror::Error;

use crate::taskgen::Feature;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task config: {0}")]
    InvalidConfig(String),

    #[error("cannot fit {needed} distinct {bits}-bit watermark patterns")]
    BankCapacity { needed: u128, bits: usize },

    #[error("feature `{0}` is not present under this task config")]
    FeatureAbsent(Feature),

    #[error("feature `{0}` carries no label information under this task config")]
    FeatureUninformative(Feature),

    #[error("digit source holds {available} glyphs but {requested} were requested")]
    InsufficientGlyphs { available: usize, requested: usize },

    #[error("glyph is {got}x{got} but the task renders {expected}x{expected}")]
    GlyphSize { expected: usize, got: usize },

    #[error("IDX: {0}")]
    Idx(#[from] IdxError),

    #[error("digit source: {0}")]
    DigitSource(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("invalid block schedule: {0}")]
    Schedule(String),

    #[error("invalid train config: {0}")]
    TrainConfig(String),

    #[error("analytic model: {0}")]
    Analytic(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("malformed container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("magic mismatch: leading bytes {0:02x} {1:02x} are not zero")]
    Magic(u8, u8),

    #[error("unsupported dtype code 0x{0:02x}")]
    UnsupportedDtype(u8),

    #[error("truncated input: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("dimension product overflows")]
    Overflow,

    #[error("expected {expected} dimensions, found {found}")]
    Rank { expected: usize, found: usize },
}
