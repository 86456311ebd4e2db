use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point cloud")]
    EmptyCloud,

    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),

    #[error("label count {labels} does not match point count {points}")]
    LabelMismatch { labels: usize, points: usize },

    #[error("degenerate cloud: {0}")]
    DegenerateCloud(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero-length plane normal")]
    ZeroNormal,

    #[error("index {index} appears in more than one correspondence pair")]
    CorrespondenceConflict { index: usize },

    #[error("correspondence index {index} out of bounds for cloud of {len} points")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("k-NN graph is disconnected ({components} components); raise the neighbor count")]
    DisconnectedGraph { components: usize },

    #[error("eigensolver did not converge: {0}")]
    EigenNonConvergence(String),

    #[error("degenerate spectrum: no eigenvalue above {0:e}")]
    DegenerateSpectrum(f64),

    #[error("no keypoints detected; relax the ISS thresholds")]
    NoKeypoints,

    #[error("matching infeasible: {feasible} disjoint pairs available, {requested} requested")]
    MatchingInfeasible { feasible: usize, requested: usize },

    #[error("midpoints are collinear; they do not span a plane")]
    CollinearMidpoints,

    #[error("ambiguous symmetry plane: smallest eigenvalue is repeated")]
    AmbiguousPlane,

    #[error("could not preserve graph connectivity after {0} attempts")]
    ConnectivityExhausted(usize),

    #[error("line search failed to make progress")]
    LineSearchFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
