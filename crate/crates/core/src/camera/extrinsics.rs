use nalgebra::{DMatrix, DVector, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::homography::{estimate_homography, pose_from_dlt, pose_from_plane_homography};
use super::lm::{levenberg_marquardt, LmOptions, LmStatus, WithJacobian};
use super::model::{project_camera_point, project_camera_point_jacobian, rotation_derivative};
use super::{CameraModel, Distortion, GeometryError, Intrinsics, Pose};

/// Ground points closer than this to `Z = 0` count as on the plane.
pub const GROUND_EPS: f64 = 1e-9;

/// A surveyed world point (meters) and its observed pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "Y")]
    pub y: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    pub u: f64,
    pub v: f64,
}

impl Correspondence {
    pub fn new(world: Vector3<f64>, pixel: Vector2<f64>) -> Self {
        Self {
            x: world.x,
            y: world.y,
            z: world.z,
            u: pixel.x,
            v: pixel.y,
        }
    }

    pub fn world(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.u, self.v].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicSolution {
    pub pose: Pose,
    /// Root-mean-square reprojection distance in pixels.
    pub rms_px: f64,
    /// Sum of squared pixel residuals.
    pub cost: f64,
    pub iterations: usize,
    pub status: LmStatus,
}

/// Pixel residuals of `world` under pose `exp(delta) * base` with translation `t`,
/// and their Jacobian with respect to `(delta, t)`.
pub(crate) struct PoseResiduals<'a> {
    pub intrinsics: &'a Intrinsics,
    pub distortion: &'a Distortion,
    pub base: Rotation3<f64>,
    pub points: &'a [Correspondence],
}

impl PoseResiduals<'_> {
    pub fn pose(&self, params: &DVector<f64>) -> Pose {
        let delta = Vector3::new(params[0], params[1], params[2]);
        let r = Rotation3::from_scaled_axis(delta) * self.base;
        Pose::from_matrix(r.matrix(), Vector3::new(params[3], params[4], params[5]))
    }

    fn camera_point(&self, params: &DVector<f64>, c: &Correspondence) -> (Vector3<f64>, Vector3<f64>) {
        let delta = Vector3::new(params[0], params[1], params[2]);
        let rotated = self.base * c.world();
        let xc = Rotation3::from_scaled_axis(delta) * rotated + Vector3::new(params[3], params[4], params[5]);
        (xc, rotated)
    }

    pub fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        let mut r = DVector::zeros(2 * self.points.len());
        for (i, c) in self.points.iter().enumerate() {
            let (xc, _) = self.camera_point(params, c);
            match project_camera_point(self.intrinsics, self.distortion, &xc) {
                Ok(p) => {
                    r[2 * i] = p.x - c.u;
                    r[2 * i + 1] = p.y - c.v;
                }
                Err(_) => {
                    r[2 * i] = f64::INFINITY;
                    r[2 * i + 1] = f64::INFINITY;
                }
            }
        }
        r
    }

    pub fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let delta = Vector3::new(params[0], params[1], params[2]);
        let mut j = DMatrix::zeros(2 * self.points.len(), 6);
        for (i, c) in self.points.iter().enumerate() {
            let (xc, rotated) = self.camera_point(params, c);
            let Ok(pj) = project_camera_point_jacobian(self.intrinsics, self.distortion, &xc) else {
                continue;
            };
            let d_rot = pj.d_camera_point * rotation_derivative(&delta, &rotated);
            j.view_mut((2 * i, 0), (2, 3)).copy_from(&d_rot);
            j.view_mut((2 * i, 3), (2, 3)).copy_from(&pj.d_camera_point);
        }
        j
    }
}

/// Linear pose estimate: plane homography when every reference lies on the
/// ground, otherwise the 3D DLT.
pub fn initial_pose(
    intrinsics: &Intrinsics,
    distortion: &Distortion,
    points: &[Correspondence],
) -> Result<Pose, GeometryError> {
    let mut normalized = Vec::with_capacity(points.len());
    for c in points {
        let u = distortion.undistort(intrinsics.to_normalized(c.pixel()));
        if !u.converged {
            return Err(GeometryError::UndistortionDiverged { residual: u.residual });
        }
        normalized.push(u.point);
    }
    if points.iter().all(|c| c.z.abs() <= GROUND_EPS) {
        let plane: Vec<Vector2<f64>> = points.iter().map(|c| Vector2::new(c.x, c.y)).collect();
        let h = estimate_homography(&plane, &normalized)?;
        pose_from_plane_homography(&h)
    } else {
        let world: Vec<Vector3<f64>> = points.iter().map(Correspondence::world).collect();
        pose_from_dlt(&world, &normalized)
    }
}

/// Camera pose from world-pixel references, refined by Levenberg-Marquardt on
/// pixel reprojection error.
pub fn solve_extrinsics(
    intrinsics: &Intrinsics,
    distortion: &Distortion,
    points: &[Correspondence],
    opts: &LmOptions,
) -> Result<ExtrinsicSolution, GeometryError> {
    intrinsics.validate()?;
    if points.len() < 4 {
        return Err(GeometryError::TooFewPoints { needed: 4, got: points.len() });
    }
    if let Some(bad) = points.iter().position(|c| !c.is_finite()) {
        return Err(GeometryError::Degenerate(format!("reference {bad} is not finite")));
    }
    let init = initial_pose(intrinsics, distortion, points)?;
    refine_pose(intrinsics, distortion, points, init, opts)
}

/// LM refinement of a pose, parameterized as a rotation increment around the
/// starting rotation so the axis-angle stays far from its singularity at pi.
pub fn refine_pose(
    intrinsics: &Intrinsics,
    distortion: &Distortion,
    points: &[Correspondence],
    init: Pose,
    opts: &LmOptions,
) -> Result<ExtrinsicSolution, GeometryError> {
    let problem = PoseResiduals {
        intrinsics,
        distortion,
        base: *init.rotation(),
        points,
    };
    let t = init.translation;
    let start = DVector::from_vec(vec![0.0, 0.0, 0.0, t.x, t.y, t.z]);
    let lm = WithJacobian(|p: &DVector<f64>| problem.residuals(p), |p: &DVector<f64>| problem.jacobian(p));
    let report = levenberg_marquardt(&lm, start, opts)?;
    if report.status == LmStatus::MaxIterations {
        return Err(GeometryError::NotConverged {
            iterations: report.iterations,
            cost: report.cost,
        });
    }
    let pose = problem.pose(&report.params);
    Ok(ExtrinsicSolution {
        pose,
        rms_px: (report.cost / points.len() as f64).sqrt(),
        cost: report.cost,
        iterations: report.iterations,
        status: report.status,
    })
}

/// Assembles a camera from solved extrinsics.
pub fn camera_from_solution(
    intrinsics: Intrinsics,
    distortion: Distortion,
    solution: &ExtrinsicSolution,
    image_size: (u32, u32),
) -> Result<CameraModel, GeometryError> {
    CameraModel::new(intrinsics, distortion, solution.pose, image_size)
}

