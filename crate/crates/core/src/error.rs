use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{op}: invalid geometry: {reason}")]
    Geometry { op: &'static str, reason: String },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("computation is not deterministic: two identical forward runs gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("training aborted at sample {sample}, step {step}: {reason}")]
    Training {
        sample: String,
        step: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid_shape(op: &'static str, shape: &[usize], reason: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: reason.into(),
        }
    }

    pub(crate) fn geometry(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Geometry {
            op,
            reason: reason.into(),
        }
    }
}
