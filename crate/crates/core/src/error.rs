use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Basis,
    DataMatrices,
    KoopmanEstimate,
    Logarithm,
    Trim,
    Solve,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Basis => "basis construction",
            Stage::DataMatrices => "data matrix assembly",
            Stage::KoopmanEstimate => "Koopman matrix estimation",
            Stage::Logarithm => "matrix logarithm",
            Stage::Trim => "generator trimming",
            Stage::Solve => "coefficient solve",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis size for n={n}, m={m} overflows the native integer range")]
    Overflow { n: usize, m: usize },

    #[error("multi-index {exponents:?} has degree {degree} > basis degree {max_degree}")]
    OutOfBasis {
        exponents: Vec<u32>,
        degree: u32,
        max_degree: u32,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dataset contains no snapshot pairs")]
    EmptyDataset,

    #[error("SVD failed to converge on a {rows}x{cols} matrix")]
    SvdFailed { rows: usize, cols: usize },

    #[error("Schur decomposition failed to converge on a {0}x{0} matrix")]
    SchurFailed(usize),

    #[error(
        "eigenvalue {re:.6e}{im:+.6e}i lies on the closed negative real axis, \
         no real principal logarithm exists; add data or reduce T_s"
    )]
    NegativeRealEigenvalue { re: f64, im: f64 },

    #[error("matrix is singular (eigenvalue of modulus {0:.3e})")]
    SingularMatrix(f64),

    #[error("{0} is undefined")]
    UndefinedMetric(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown system '{name}', expected one of: {}", choices.join(", "))]
    UnknownSystem {
        name: String,
        choices: Vec<&'static str>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Innermost error, with stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerical pipeline (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NegativeRealEigenvalue { .. }
                | Error::SingularMatrix(_)
                | Error::SvdFailed { .. }
                | Error::SchurFailed(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!(),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Parse(e.to_string())
        }
    }
}
