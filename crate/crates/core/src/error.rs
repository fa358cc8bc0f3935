use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("antenna count {0} must be a power of two >= 2")]
    BadAntennaCount(usize),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("spatial angle {0} outside [-1, 1]")]
    AngleOutOfRange(f64),
    #[error("{what} index {got} outside 1..={max}")]
    IndexOutOfRange {
        what: &'static str,
        got: usize,
        max: usize,
    },
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("polar grid mismatch: index ({n}, {s}) not on a {n_max}x{s_max} grid")]
    GridMismatch {
        n: usize,
        s: usize,
        n_max: usize,
        s_max: usize,
    },
    #[error("unknown engine '{0}'")]
    UnknownEngine(String),
    #[error("engine list is empty")]
    NoEngines,
    #[error("unknown last-layer rule '{0}' (expected 'window' or 'strict')")]
    UnknownRule(String),
    #[error("invalid {name}: {why}")]
    InvalidParam { name: &'static str, why: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
