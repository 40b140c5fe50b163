use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("svd did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    SvdNoConvergence { sweeps: usize, residual: f64 },

    #[error("pcp diverged at iteration {iteration}: residual grew for {streak} consecutive iterations (residual {residual:e})")]
    PcpDivergence {
        iteration: usize,
        streak: usize,
        residual: f64,
    },

    #[error("pcp produced a non-finite iterate at iteration {iteration}")]
    PcpNonFinite { iteration: usize },

    #[error("principal direction is ambiguous: top two eigenvalues {top:e} and {second:e} coincide")]
    AmbiguousDirection { top: f64, second: f64 },

    #[error("no local direction exists: projected norm {norm:e} vanishes")]
    NoLocalDirection { norm: f64 },

    #[error("empty null space: region basis has full rank {rank}")]
    EmptyNullSpace { rank: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
