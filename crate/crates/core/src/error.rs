use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum SpicError {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: u8, n_classes: u8 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("dimensions {height}x{width} not divisible by factor {factor}")]
    NotDivisible {
        height: usize,
        width: usize,
        factor: usize,
    },

    #[error("quality {0} outside the supported range 1..=51")]
    InvalidQuality(u8),

    #[error("bad magic: expected \"SPIC\", got {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported bitstream version {0}")]
    BadVersion(u8),

    #[error("bitstream truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },

    #[error("declared payload length {declared} does not match remaining {actual} bytes")]
    LengthMismatch { declared: usize, actual: usize },

    #[error("payload too large: {0} bytes exceeds u32 range")]
    PayloadTooLarge(usize),

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("unknown codec id {0}")]
    UnknownCodec(u8),

    #[error("segmenter {name} failed: {reason}")]
    SegmenterFailure { name: String, reason: String },

    #[error("external tool {tool} unavailable or failed: {reason}")]
    ExternalTool { tool: String, reason: String },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("timestep {t} outside 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("metric input invalid: {0}")]
    InvalidMetricInput(String),

    #[error("no class has a non-empty union; mIoU undefined")]
    EmptyUnion,

    #[error("dataset error at {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Png(#[from] image::ImageError),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, SpicError>;
