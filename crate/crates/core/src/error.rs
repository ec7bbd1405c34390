use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dataset validation failed: {0}")]
    Validation(String),

    #[error("parse error at row {row}, column {column}: {reason}")]
    Parse {
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("could not draw {n} non-co-aligned rows in dimension {d} after {retries} retries")]
    CoAlignmentRetries { n: usize, d: usize, retries: usize },

    /// `l` and `t` are `None` when the whole-network loss blew up after
    /// aggregation.
    #[error("training diverged at global iteration {k}{} (loss {loss})", location(.l, .t))]
    Divergence {
        k: usize,
        l: Option<usize>,
        t: Option<usize>,
        loss: f64,
    },

    #[error("symmetric eigensolver did not converge within {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    EigenNonConvergence { sweeps: usize, off_norm: f64 },

    #[error("smallest eigenvalue of the infinite-width kernel is {0:e}; data contains co-aligned points")]
    NonPositiveLambda0(f64),

    #[error("rate fit window has {found} usable points, need at least {needed}")]
    FitWindow { found: usize, needed: usize },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn location(l: &Option<usize>, t: &Option<usize>) -> String {
    match (l, t) {
        (Some(l), Some(t)) => format!(", subnetwork {l}, local step {t}"),
        _ => ", after aggregation".to_string(),
    }
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
