//! Pinhole camera with a five-coefficient lens model, calibration from
//! world-pixel correspondences, and ground-plane back-projection.
//!
//! Conventions: world frame in meters with the ground at `Z = 0` and `+Z` up;
//! pixels with a top-left origin, `+u` right and `+v` down. A pose maps world
//! to camera coordinates, `X_cam = R X_world + t`, with the camera looking
//! along its `+z` axis.

mod extrinsics;
mod homography;
mod intrinsics;
pub mod io;
pub mod lm;
mod mapping_error;
mod model;

pub use extrinsics::{camera_from_solution, initial_pose, refine_pose, solve_extrinsics, Correspondence, ExtrinsicSolution, GROUND_EPS};
pub use homography::{estimate_homography, pose_from_dlt, pose_from_plane_homography};
pub use intrinsics::{calibrate_intrinsics_planar, intrinsics_from_homographies, IntrinsicCalibration};
pub use lm::{levenberg_marquardt, LmError, LmOptions, LmReport, LmStatus};
pub use mapping_error::{ground_mapping_error, MappingErrorReport};
pub use model::{
    nearest_rotation, project_camera_point, project_camera_point_jacobian, rotation_derivative, CameraModel, Distortion, Intrinsics,
    PointJacobian, Pose, Undistorted, MIN_DEPTH, UNDISTORT_MAX_ITER, UNDISTORT_TOL,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point is at or behind the camera plane (depth {depth} m)")]
    BehindCamera { depth: f64 },
    #[error("invalid intrinsics {0:?}: focal lengths must be positive and all values finite")]
    InvalidIntrinsics(Intrinsics),
    #[error("distortion coefficients must be finite: {0:?}")]
    InvalidDistortion(Distortion),
    #[error("camera centre must be above the ground plane (height {height} m)")]
    CameraBelowGround { height: f64 },
    #[error("lens model inversion did not converge (residual {residual:e})")]
    UndistortionDiverged { residual: f64 },
    #[error("viewing ray through pixel ({}, {}) does not meet the ground", pixel[0], pixel[1])]
    NoGroundIntersection { pixel: [f64; 2] },
    #[error("reference point is not on the ground plane (Z = {z} m)")]
    NotOnGround { z: f64 },
    #[error("target point is not on the calibration plane (Z = {z})")]
    NotOnPlane { z: f64 },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("need at least 3 calibration views, got {got}")]
    TooFewViews { got: usize },
    #[error("optimizer stopped after {iterations} iterations without converging (cost {cost:e})")]
    NotConverged { iterations: usize, cost: f64 },
    #[error(transparent)]
    Lm(#[from] LmError),
}
