use thiserror::Error;

/// A transition `(state, action, next_state)` whose one-step target fell
/// outside the categorical support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeViolation {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub target: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("target has mass at grid index {index} where the model has none")]
    AbsoluteContinuity { index: usize },

    #[error("range condition violated for {} triplet(s), first (x={}, a={}, x'={}) with target {}",
        .0.len(), .0[0].state, .0[0].action, .0[0].next_state, .0[0].target)]
    RangeCondition(Vec<RangeViolation>),

    #[error("atom cap exceeded: {count} atoms > cap {cap}")]
    AtomCapExceeded { count: usize, cap: usize },

    #[error("fixed point check failed: distance {distance} after {iterations} iterations (tol {tol})")]
    FixedPointMismatch {
        distance: f64,
        iterations: usize,
        tol: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
