use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("facet {facet} references unknown material `{material}`")]
    DanglingMaterial { facet: usize, material: String },

    #[error("facet {facet} is degenerate (area {area:e} m^2)")]
    DegenerateFacet { facet: usize, area: f64 },

    #[error("material `{name}`: {reason}")]
    InvalidMaterial { name: String, reason: String },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("CFR lattice incomplete: {0}")]
    IncompleteLattice(String),

    #[error("empirical CDF needs at least one sample")]
    EmptySamples,

    #[error("transmitter {0} has no path to the receiver")]
    Unreachable(usize),

    #[error("coverage curve has not decayed below 1e-6 by t = 1e9")]
    NonConvergence,

    #[error("rejection sampling gave up after {0} draws; bounds too tight")]
    BoundsTooTight(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable code, used by the CLI's `ERR:<code>:` prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => "ENOENT",
            Error::Io { .. } => "EIO",
            Error::Parse { .. } => "PARSE",
            Error::DanglingMaterial { .. } => "DANGLING_MATERIAL",
            Error::DegenerateFacet { .. } => "DEGENERATE_FACET",
            Error::InvalidMaterial { .. } => "MATERIAL",
            Error::InvalidScene(_) => "SCENE",
            Error::IncompleteLattice(_) => "LATTICE",
            Error::EmptySamples => "EMPTY",
            Error::Unreachable(_) => "UNREACHABLE",
            Error::NonConvergence => "NONCONVERGENCE",
            Error::BoundsTooTight(_) => "BOUNDS",
            Error::InvalidInput(_) => "INPUT",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            line,
            msg: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        }
    }
}
