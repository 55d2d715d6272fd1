//! Computational geometry in two and three dimensions.

mod centerpoint;
mod depth;
mod derived;
mod distance;
mod hull;
mod point;
mod polytope;

use thiserror::Error;

pub use centerpoint::{
    centerpoint, coordinate_median, depth_target, radon_point, CenterpointSearch, Selection,
};
pub use depth::{halfspace_count, tukey_depth, tukey_depth_with_tol, DepthResult};
pub use derived::{build_bounding_box_d, build_hulls_bc};
pub use distance::{directed_hausdorff, hausdorff, mahalanobis_sq};
pub use hull::convex_hull;
pub use point::{Point, StateMatrix, MAX_DIM};
pub use polytope::{Face, Plane, Polytope, Shape};

/// Absolute tolerance used by every geometric predicate unless overridden.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("empty input")]
    EmptyInput,
    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("centerpoint search exhausted: best verified depth {best_depth} below target {target}")]
    SearchExhausted { best_depth: usize, target: usize },
    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("invalid noisy dimensions: {0}")]
    InvalidNoisyDims(String),
    #[error("invalid margins: {0}")]
    InvalidMargins(String),
}
