use thiserror::Error;

/// Errors raised by pattern parsing, the chain model, the closed forms and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("pattern is empty")]
    EmptyPattern,

    #[error("invalid character {found:?} at position {position}; expected A or B")]
    InvalidCharacter { position: usize, found: char },

    #[error("pattern must pull both arms at least once")]
    SingleArmPattern,

    #[error("pattern length {len} exceeds the configured maximum {max}")]
    PatternTooLong { len: usize, max: usize },

    #[error("malformed run-length form: {0}")]
    MalformedRunLength(String),

    #[error("{name} = {value} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },

    #[error("invalid machine parameters: {0}")]
    InvalidMachine(String),

    #[error("stationary system is singular")]
    SingularSystem,

    #[error("{what}: routes disagree by {discrepancy:e}")]
    InternalMismatch { what: &'static str, discrepancy: f64 },

    #[error("adjacent swap needs at least two run pairs (h = {h})")]
    SwapUndefined { h: usize },

    #[error("run-pair index {k} is outside 1..={h}")]
    InvalidSwapIndex { k: usize, h: usize },

    #[error("profile has {delta} negative points; at least two are required")]
    NoNegativePoints { delta: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
