use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the algorithmic core.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, episode state, ranges).
    ContractViolation(String),
    /// A configuration value is outside its valid domain.
    Config(String),
    /// The planner could not reach the goal under the requested action set.
    Planning(String),
    /// Expert generation exhausted its retry budget.
    Generation { seed: u64, index: usize, attempts: usize },
    /// A loss or gradient became NaN or infinite.
    NonFinite { stage: &'static str },
    /// The requested combination is not supported (e.g. BC on state-only data).
    Unsupported(String),
    /// A training iteration aborted in `stage`.
    Training { iteration: usize, stage: &'static str, source: Box<Error> },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ContractViolation(msg) => write!(f, "contract violation: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Planning(msg) => write!(f, "planning failed: {msg}"),
            Error::Generation { seed, index, attempts } => write!(
                f,
                "expert generation failed for trajectory {index} (seed {seed}) after {attempts} attempts"
            ),
            Error::NonFinite { stage } => write!(f, "non-finite value encountered during {stage}"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::Training { iteration, stage, source } => {
                write!(f, "training iteration {iteration} failed in {stage}: {source}")
            }
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::Training { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn in_stage(self, iteration: usize, stage: &'static str) -> Self {
        Error::Training { iteration, stage, source: Box::new(self) }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err($crate::error::Error::$variant(alloc::format!($($arg)+)));
            }
        }
    };
}
pub(crate) use ensure;
