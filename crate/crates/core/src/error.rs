use thiserror::Error;

/// Errors surfaced by the pipeline.
///
/// Variants fall in two families: bad input (parse errors, preconditions)
/// and violated numerical invariants. The CLI maps the second family to
/// exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at `{token}`: {reason}")]
    Parse { token: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("grid of {cells} cells exceeds the cap of {cap}")]
    GridTooLarge { cells: usize, cap: usize },

    #[error("domain has no cells at this resolution")]
    EmptyDomain,

    #[error("invariant violated in {stage}: {detail}")]
    Invariant { stage: &'static str, detail: String },

    #[error("cover gap at cell ({i}, {j}): U cell covered by no cube")]
    CoverGap { i: usize, j: usize },

    #[error(
        "quasi-cube of cube {cube} (level {level}, side {side}) is empty; refine h, or move epsilon away from its extremes"
    )]
    EmptyQuasiCube { cube: usize, level: u32, side: f64 },

    #[error("partition of unity vanishes at ({x}, {y}): point not covered")]
    PartitionGap { x: f64, y: f64 },

    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("{0}")]
    Refused(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(token: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            token: token.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invariant(stage: &'static str, detail: impl Into<String>) -> Self {
        Error::Invariant {
            stage,
            detail: detail.into(),
        }
    }

    /// Wraps the error with the pipeline stage that raised it.
    pub fn at(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for errors that signal a broken numerical invariant rather than bad input.
    pub fn is_invariant_violation(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_invariant_violation();
        }
        matches!(
            self,
            Error::Invariant { .. }
                | Error::CoverGap { .. }
                | Error::EmptyQuasiCube { .. }
                | Error::PartitionGap { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
