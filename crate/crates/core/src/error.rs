use thiserror::Error;

use crate::recovery::ReconResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("path delay {delay:e} s lies outside the frame [{start:e}, {end:e}) s")]
    PathOutsideFrame { delay: f64, start: f64, end: f64 },

    #[error("signal has zero power, SNR is undefined")]
    ZeroSignal,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("channel file line {line}: {reason}")]
    ChannelFile { line: usize, reason: String },

    #[error("matrix file line {line}: {reason}")]
    MatrixFile { line: usize, reason: String },

    #[error("no sample above threshold {threshold:e}")]
    NoPulse { threshold: f64 },

    #[error("rank-deficient active subproblem after {} atoms", partial.coeffs.iter().filter(|c| **c != 0.0).count())]
    RankDeficient { partial: Box<ReconResult> },

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("posterior covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("tag coincides with anchor {0}")]
    CoincidentAnchor(usize),

    #[error("singular TDOA normal equations at iteration {iteration}")]
    SingularGeometry { iteration: usize },

    #[error("station {station}: {source}")]
    Station {
        station: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_station(self, station: usize) -> Self {
        Error::Station {
            station,
            source: Box::new(self),
        }
    }
}
