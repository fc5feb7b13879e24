use std::path::PathBuf;

use crate::linalg::SolveReport;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("{0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error(
        "conjugate gradients stopped after {} iterations at relative residual {:.3e}",
        .report.iterations, .report.relative_residual
    )]
    NotConverged {
        solution: Vec<f64>,
        report: SolveReport,
    },

    #[error("zero pivot in row {row}")]
    ZeroPivot { row: usize },

    #[error("singular interface matching system")]
    SingularMatching,

    #[error("layer under-resolved: eps/h = {ratio:.3} < 2")]
    UnresolvedLayer { ratio: f64 },

    #[error("interface is tangent to a mesh edge")]
    DegenerateCut,

    #[error("degenerate data for rate fit: {0}")]
    DegenerateData(String),

    #[error("diffuse solve did not converge (relative residual {:.3e})", .0.report.relative_residual)]
    DiffuseNotConverged(Box<crate::diffuse::DiffuseSolution>),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
