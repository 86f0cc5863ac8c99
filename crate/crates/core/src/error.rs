use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice size {0} is below the minimum of 3")]
    LatticeTooSmall(usize),
    #[error("lattice size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("invalid spin character {0:?} (expected '+' or '-')")]
    BadSpinChar(char),
    #[error("site {site} out of range for lattice of size {n}")]
    SiteOutOfRange { site: usize, n: usize },

    #[error("invalid rule parameter: {0}")]
    RuleParameter(String),
    #[error("rule table entry for window {window} is not strictly positive ({rate})")]
    NonPositiveRate { window: String, rate: f64 },
    #[error("rule file: {0}")]
    RuleFile(String),
    #[error("unrecognized rule spec {0:?}")]
    RuleSpec(String),
    #[error("rule window 2K+1 = {window} does not fit on a lattice of size {n}")]
    WindowTooWide { window: usize, n: usize },
    #[error("rule is not attractive")]
    NotAttractive,

    #[error("initial pair is not ordered (upper must dominate lower)")]
    NotOrdered,
    #[error("invalid time {0}")]
    BadTime(f64),
    #[error("need at least {min} replicas, got {got}")]
    TooFewReplicas { min: usize, got: usize },
    #[error("delta must lie in (0, 1), got {0}")]
    BadDelta(f64),

    #[error("oracle lattice size {n} outside [3, {max}]")]
    OracleSize { n: usize, max: usize },
    #[error("uniformization needs more than {budget} terms (rate * time = {mass})")]
    TruncationBudget { budget: usize, mass: f64 },
    #[error("stationary solve failed: singular system")]
    SingularGenerator,

    #[error("time step {dt} violates the stability bound dx^2 = {bound}")]
    Unstable { dt: f64, bound: f64 },
    #[error("density left [-1, 1] at grid point {index}: {value}")]
    DensityOutOfRange { index: usize, value: f64 },
    #[error("block count {m} does not divide lattice size {n}")]
    BlockCount { m: usize, n: usize },
    #[error("invalid profile spec {0:?}")]
    ProfileSpec(String),

    #[error("need at least {min} stationary samples, got {got}")]
    TooFewStationarySamples { min: usize, got: usize },

    #[error("walk sites must be distinct")]
    DuplicateSites,
    #[error("{0}")]
    Invalid(String),
    #[error("fit needs at least {min} points, got {got}")]
    FitPoints { min: usize, got: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
