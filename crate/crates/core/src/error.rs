use thiserror::Error;

use crate::geometry::LandmarkKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("landmark kind {0:?} is not valid for this operation")]
    InvalidKind(LandmarkKind),
    #[error("infeasible birth: {0}")]
    InfeasibleBirth(&'static str),
    #[error("prior covariance is not positive definite")]
    SingularPrior,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("no feasible assignment exists")]
    Infeasible,
    #[error("no feasible data association")]
    NoFeasibleDa,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
