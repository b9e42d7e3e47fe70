use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown tag id {0}")]
    UnknownTag(u32),
    #[error("unknown anchor id {0}")]
    UnknownAnchor(u32),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: alloc::vec::Vec<usize>,
        rhs: alloc::vec::Vec<usize>,
    },
    #[error("no anchors within {radius} m of the reference point")]
    NoAnchorsInRadius { radius: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("mode {0} requires IMU records")]
    MissingImu(&'static str),
    #[error("non-finite loss at training epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
