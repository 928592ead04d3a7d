use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the registration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle {angle_rad} rad is too close to pi for a unique logarithm")]
    AngleNearPi { angle_rad: f64 },

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },

    #[error("pseudo set has no active points")]
    NoActivePseudoPoints,

    #[error("degenerate bounding box: every extent must be positive")]
    DegenerateBox,

    #[error("need at least {required} points, got {got}")]
    TooFewPoints { required: usize, got: usize },

    #[error("only {active} pseudo points remain active, at least {required} are required")]
    TooFewActive { active: usize, required: usize },

    #[error("normal equations are singular (effective rank {rank})")]
    SolverSingular { rank: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("no correspondences within {max_dist}")]
    NoCorrespondences { max_dist: f64 },

    #[error("no results to aggregate")]
    EmptyResults,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: unsupported PLY: {message}")]
    UnsupportedPly { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
