//! Error type shared by the whole crate.

use crate::unbiased::MeetingRecord;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A constructor or routine was handed an argument outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A weight vector with no usable mass (all zero, or containing NaN).
    #[error("degenerate weight vector")]
    DegenerateWeights,

    /// Same as [`Error::DegenerateWeights`], raised inside a kernel sweep
    /// where the failing time index is known.
    #[error("degenerate weight vector at time {t}")]
    DegenerateWeightsAt { t: usize },

    /// Two weight vectors that should describe the same support differ in
    /// length.
    #[error("weight vectors have mismatched lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    /// The rejection loop of the generic maximal coupling ran too long.
    #[error("maximal coupling rejection loop exceeded {cap} iterations")]
    RejectionCapExceeded { cap: u64 },

    /// Coupled chains failed to meet within the iteration cap. The partial
    /// record describes what was observed before giving up.
    #[error("coupled chains did not meet within {cap} iterations")]
    MeetingCapExceeded {
        cap: u64,
        record: Box<MeetingRecord>,
    },

    /// A gradient evaluation produced NaN or infinity.
    #[error("non-finite gradient component at index {index}")]
    NonFiniteGradient { index: usize },
}
