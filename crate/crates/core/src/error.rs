use std::path::PathBuf;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid spectral mask: {0}")]
    InvalidMask(String),

    #[error("infeasible oscillator parameters: {0}")]
    InfeasibleOscillator(String),

    #[error("requested ALC of {requested_db:.3} dB exceeds the maximum achievable {max_db:.3} dB for this channel")]
    InfeasibleAlc { requested_db: f64, max_db: f64 },

    #[error("invalid channel profile: {0}")]
    InvalidChannel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by physically unrealizable parameters
    /// (as opposed to malformed input).
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleOscillator(_) | Error::InfeasibleAlc { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Csv(e) => e.is_io_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}
