use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive depth {0} in the camera frame")]
    NonPositiveDepth(f64),

    #[error("degenerate point configuration: denominator distance below epsilon")]
    DegenerateConfiguration,

    #[error("need at least 4 correspondences, got {0}")]
    InsufficientPoints(usize),

    #[error("pose places model points behind the camera")]
    BehindCamera,

    #[error("Levenberg-Marquardt failed to converge")]
    NoConvergence,

    #[error("no hypothesis reached {min_inliers} inliers")]
    NoConsensus { min_inliers: usize },

    #[error("training dataset is empty")]
    EmptyDataset,

    #[error("bounding box degenerates to {width:.2} x {height:.2} px")]
    DegenerateBox { width: f64, height: f64 },

    #[error("least-squares system is rank deficient")]
    RankDeficient,

    #[error("perturbation study requires a trained model, not the oracle provider")]
    OracleProviderRejected,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec failure on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
