//! Classical comparators: k-nearest neighbours on z-scored telemetry,
//! log-distance path-loss and FTM ranging fits, and trilateration with the
//! error-area feedback signal.

mod knn;
mod ranging;
mod trilat;

pub use knn::{knn_predict, FeatureKey, FeatureSpace, KnnModel};
pub use ranging::{fit_ftm, fit_pathloss, pathloss_invert, FtmCalibration, PathLossFit};
pub use trilat::{
    error_area, error_polygon, range_cost, trilaterate, Anchor, FeedbackResult, Point, AREA_FLOOR_M2, FEEDBACK_CAP,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("k = {k} invalid for {n} training points")]
    BadK { k: usize, n: usize },
    #[error("query has {got} features, training points have {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("fit is degenerate: {0}")]
    DegenerateFit(String),
    #[error("anchors are collinear")]
    CollinearAnchors,
    #[error("need at least {need} anchors, got {got}")]
    TooFewAnchors { need: usize, got: usize },
    #[error("Gauss-Newton did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, BaselineError>;
