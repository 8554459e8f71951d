use nalgebra::{Matrix2, Matrix2x3, Matrix2x4, Matrix3, Rotation3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

pub type Matrix2x5 = SMatrix<f64, 2, 5>;

/// Points closer than this to the camera plane are treated as behind it.
pub const MIN_DEPTH: f64 = 1e-9;

/// Newton iterations allowed when inverting the lens model.
pub const UNDISTORT_MAX_ITER: usize = 20;
/// Re-distortion residual (normalized units) accepted as converged.
pub const UNDISTORT_TOL: f64 = 1e-8;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy, skew: 0.0 }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.skew].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(*self));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Normalized (distorted) image coordinates to pixels.
    pub fn to_pixel(&self, xd: f64, yd: f64) -> Vector2<f64> {
        Vector2::new(self.fx * xd + self.skew * yd + self.cx, self.fy * yd + self.cy)
    }

    /// Pixels to normalized (distorted) image coordinates.
    pub fn to_normalized(&self, pixel: Vector2<f64>) -> Vector2<f64> {
        let yd = (pixel.y - self.cy) / self.fy;
        let xd = (pixel.x - self.cx - self.skew * yd) / self.fx;
        Vector2::new(xd, yd)
    }
}

/// Radial (k1, k2, k3) and tangential (p1, p2) lens coefficients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
}

impl Distortion {
    pub fn radial(k1: f64, k2: f64, k3: f64) -> Self {
        Self { k1, k2, k3, ..Self::default() }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    pub fn is_finite(&self) -> bool {
        [self.k1, self.k2, self.k3, self.p1, self.p2].iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.k1, self.k2, self.k3, self.p1, self.p2]
    }

    pub fn from_array(c: [f64; 5]) -> Self {
        Self { k1: c[0], k2: c[1], k3: c[2], p1: c[3], p2: c[4] }
    }

    /// Maps an ideal normalized point to its distorted position.
    pub fn distort(&self, p: Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        Vector2::new(
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    /// d(distorted) / d(ideal point).
    pub fn point_jacobian(&self, p: Vector2<f64>) -> Matrix2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        // d(radial)/d(r2)
        let dradial = self.k1 + r2 * (2.0 * self.k2 + 3.0 * self.k3 * r2);
        let dxd_dx = radial + 2.0 * x * x * dradial + 2.0 * self.p1 * y + 6.0 * self.p2 * x;
        let dxd_dy = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let dyd_dx = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let dyd_dy = radial + 2.0 * y * y * dradial + 6.0 * self.p1 * y + 2.0 * self.p2 * x;
        Matrix2::new(dxd_dx, dxd_dy, dyd_dx, dyd_dy)
    }

    /// d(distorted) / d(k1, k2, k3, p1, p2).
    pub fn coeff_jacobian(&self, p: Vector2<f64>) -> Matrix2x5 {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let (r4, r6) = (r2 * r2, r2 * r2 * r2);
        Matrix2x5::new(
            x * r2,
            x * r4,
            x * r6,
            2.0 * x * y,
            r2 + 2.0 * x * x,
            y * r2,
            y * r4,
            y * r6,
            r2 + 2.0 * y * y,
            2.0 * x * y,
        )
    }

    /// Inverts [`Distortion::distort`] by Newton iteration.
    pub fn undistort(&self, distorted: Vector2<f64>) -> Undistorted {
        if self.is_zero() {
            return Undistorted {
                point: distorted,
                converged: true,
                residual: 0.0,
                iterations: 0,
            };
        }
        let mut p = distorted;
        let mut residual_vec = self.distort(p) - distorted;
        let mut residual = residual_vec.norm();
        let mut best = (p, residual);
        let mut iterations = 0;
        while iterations < UNDISTORT_MAX_ITER && residual > 1e-15 {
            iterations += 1;
            let step = match self.point_jacobian(p).try_inverse() {
                Some(inv) => inv * residual_vec,
                // Fall back to the plain fixed-point update.
                None => residual_vec,
            };
            p -= step;
            residual_vec = self.distort(p) - distorted;
            residual = residual_vec.norm();
            if !residual.is_finite() {
                break;
            }
            if residual < best.1 {
                best = (p, residual);
            }
        }
        Undistorted {
            point: best.0,
            converged: best.1 < UNDISTORT_TOL,
            residual: best.1,
            iterations,
        }
    }
}

/// Result of inverting the lens model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Undistorted {
    /// Ideal normalized image point.
    pub point: Vector2<f64>,
    pub converged: bool,
    /// Re-distortion error in normalized units.
    pub residual: f64,
    pub iterations: usize,
}

/// World-to-camera rigid transform `X_cam = R X_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    axis_angle: Vector3<f64>,
    rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_scaled_axis(axis_angle);
        Self {
            axis_angle: rotation.scaled_axis(),
            rotation,
            translation,
        }
    }

    /// Builds a pose from any 3x3 matrix, projecting it onto the nearest rotation.
    pub fn from_matrix(r: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self::from_axis_angle(nearest_rotation(r).scaled_axis(), translation)
    }

    /// Camera at `eye` looking at `target`, image +y pointing towards world -Z.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::Degenerate("eye and target coincide".into()))?;
        let right = forward
            .cross(&Vector3::z())
            .try_normalize(1e-9)
            .ok_or_else(|| GeometryError::Degenerate("viewing direction is vertical".into()))?;
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Ok(Self::from_matrix(&r, -r * eye))
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        self.axis_angle
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.matrix()
    }

    /// Camera centre `C = -R^T t` in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn world_to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }
}

/// Closest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("3x3 SVD has U");
    let v_t = svd.v_t.expect("3x3 SVD has V^T");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Rotation3::from_matrix_unchecked(r)
}

/// Derivative of `R(omega) v` with respect to the axis-angle vector `omega`.
pub fn rotation_derivative(omega: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let r = Rotation3::from_scaled_axis(*omega);
    let rv = r * v;
    if theta2 < 1e-20 {
        // d(R v)/d(omega) at the identity is -[v]x.
        return -v.cross_matrix();
    }
    let rm = r.matrix();
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        let e = Vector3::ith(i, 1.0);
        let w = omega.cross(&((Matrix3::identity() - rm) * e));
        let d = (omega[i] * omega.cross_matrix() + w.cross_matrix()) / theta2;
        out.set_column(i, &(d * rv));
    }
    out
}

/// Pixel projection of a camera-frame point with its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct PointJacobian {
    pub pixel: Vector2<f64>,
    /// d(pixel) / d(camera-frame point).
    pub d_camera_point: Matrix2x3<f64>,
    /// d(pixel) / d(fx, fy, cx, cy).
    pub d_intrinsics: Matrix2x4<f64>,
    /// d(pixel) / d(k1, k2, k3, p1, p2).
    pub d_distortion: Matrix2x5,
}

pub fn project_camera_point(intr: &Intrinsics, dist: &Distortion, xc: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    if !(xc.z > MIN_DEPTH) {
        return Err(GeometryError::BehindCamera { depth: xc.z });
    }
    let ideal = Vector2::new(xc.x / xc.z, xc.y / xc.z);
    let d = dist.distort(ideal);
    Ok(intr.to_pixel(d.x, d.y))
}

pub fn project_camera_point_jacobian(
    intr: &Intrinsics,
    dist: &Distortion,
    xc: &Vector3<f64>,
) -> Result<PointJacobian, GeometryError> {
    if !(xc.z > MIN_DEPTH) {
        return Err(GeometryError::BehindCamera { depth: xc.z });
    }
    let iz = 1.0 / xc.z;
    let ideal = Vector2::new(xc.x * iz, xc.y * iz);
    let d = dist.distort(ideal);
    let pixel = intr.to_pixel(d.x, d.y);
    let d_ideal = Matrix2x3::new(iz, 0.0, -ideal.x * iz, 0.0, iz, -ideal.y * iz);
    let a = Matrix2::new(intr.fx, intr.skew, 0.0, intr.fy);
    let d_distorted = dist.point_jacobian(ideal);
    Ok(PointJacobian {
        pixel,
        d_camera_point: a * d_distorted * d_ideal,
        d_intrinsics: Matrix2x4::new(d.x, 0.0, 1.0, 0.0, 0.0, d.y, 0.0, 1.0),
        d_distortion: a * dist.coeff_jacobian(ideal),
    })
}

/// A calibrated camera: intrinsics, lens model, pose and image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    pub pose: Pose,
    /// (width, height) in pixels.
    pub image_size: (u32, u32),
}

impl CameraModel {
    /// Validates the parts and requires the camera centre above `Z = 0`.
    pub fn new(intrinsics: Intrinsics, distortion: Distortion, pose: Pose, image_size: (u32, u32)) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        if !distortion.is_finite() {
            return Err(GeometryError::InvalidDistortion(distortion));
        }
        let height = pose.camera_center().z;
        if !(height > 0.0) {
            return Err(GeometryError::CameraBelowGround { height });
        }
        Ok(Self {
            intrinsics,
            distortion,
            pose,
            image_size,
        })
    }

    /// World point (meters) to pixel.
    pub fn project(&self, world: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        project_camera_point(&self.intrinsics, &self.distortion, &self.pose.world_to_camera(world))
    }

    /// Pixel derivatives with respect to the pose parameters
    /// `(axis_angle[0..3], t[0..3])`.
    pub fn pose_jacobian(&self, world: &Vector3<f64>) -> Result<(Vector2<f64>, SMatrix<f64, 2, 6>), GeometryError> {
        let j = project_camera_point_jacobian(&self.intrinsics, &self.distortion, &self.pose.world_to_camera(world))?;
        let d_rot = j.d_camera_point * rotation_derivative(&self.pose.axis_angle, world);
        let mut out = SMatrix::<f64, 2, 6>::zeros();
        out.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_rot);
        out.fixed_view_mut::<2, 3>(0, 3).copy_from(&j.d_camera_point);
        Ok((j.pixel, out))
    }

    /// Pixel derivatives with respect to `(fx, fy, cx, cy, k1, k2, k3, p1, p2)`.
    pub fn lens_jacobian(&self, world: &Vector3<f64>) -> Result<(Vector2<f64>, SMatrix<f64, 2, 9>), GeometryError> {
        let j = project_camera_point_jacobian(&self.intrinsics, &self.distortion, &self.pose.world_to_camera(world))?;
        let mut out = SMatrix::<f64, 2, 9>::zeros();
        out.fixed_view_mut::<2, 4>(0, 0).copy_from(&j.d_intrinsics);
        out.fixed_view_mut::<2, 5>(0, 4).copy_from(&j.d_distortion);
        Ok((j.pixel, out))
    }

    /// Ideal normalized image point for a pixel.
    pub fn undistort_pixel(&self, pixel: Vector2<f64>) -> Undistorted {
        self.distortion.undistort(self.intrinsics.to_normalized(pixel))
    }

    /// World-frame direction of the viewing ray through `pixel`.
    pub fn ray_direction(&self, pixel: Vector2<f64>) -> Result<Vector3<f64>, GeometryError> {
        let u = self.undistort_pixel(pixel);
        if !u.converged {
            return Err(GeometryError::UndistortionDiverged { residual: u.residual });
        }
        Ok(self.pose.rotation().inverse() * Vector3::new(u.point.x, u.point.y, 1.0))
    }

    /// Intersects the viewing ray through `pixel` with the ground plane `Z = 0`.
    pub fn back_project_to_ground(&self, pixel: Vector2<f64>) -> Result<Vector3<f64>, GeometryError> {
        let dir = self.ray_direction(pixel)?;
        let center = self.pose.camera_center();
        // The ray must head downwards; a level or rising ray meets the plane
        // at the horizon or behind the camera.
        if !(dir.z < -1e-12 * dir.norm()) {
            return Err(GeometryError::NoGroundIntersection {
                pixel: [pixel.x, pixel.y],
            });
        }
        let lambda = -center.z / dir.z;
        let mut hit = center + dir * lambda;
        hit.z = 0.0;
        Ok(hit)
    }

    /// Whether a pixel lies inside the image rectangle.
    pub fn in_image(&self, pixel: &Vector2<f64>) -> bool {
        let (w, h) = (f64::from(self.image_size.0), f64::from(self.image_size.1));
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= w && pixel.y <= h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_camera() -> CameraModel {
        // Identity pose puts the camera centre at the origin; lift it so the
        // constructor's height check passes while keeping R = I.
        let pose = Pose::from_axis_angle(Vector3::zeros(), Vector3::new(0.0, 0.0, -1.0));
        CameraModel::new(Intrinsics::new(1000.0, 1000.0, 640.0, 360.0), Distortion::default(), pose, (1280, 720)).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let intr = Intrinsics::new(1000.0, 1000.0, 640.0, 360.0);
        let d = Distortion::default();
        let p = project_camera_point(&intr, &d, &Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(p, Vector2::new(640.0, 360.0));
        let p = project_camera_point(&intr, &d, &Vector3::new(0.5, 0.0, 5.0)).unwrap();
        assert!((p - Vector2::new(740.0, 360.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_rejected() {
        let cam = straight_camera();
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, 1.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn zero_distortion_undistort_is_exact() {
        let cam = straight_camera();
        let u = cam.undistort_pixel(Vector2::new(700.0, 300.0));
        assert_eq!(u.point, Vector2::new(60.0 / 1000.0, -60.0 / 1000.0));
        assert!(u.converged);
    }

    #[test]
    fn principal_point_undistorts_to_origin() {
        let mut cam = straight_camera();
        cam.distortion = Distortion { k1: -0.3, k2: 0.1, k3: 0.02, p1: 0.01, p2: -0.01 };
        let u = cam.undistort_pixel(Vector2::new(640.0, 360.0));
        assert_eq!(u.point, Vector2::zeros());
    }

    #[test]
    fn barrel_round_trip() {
        let d = Distortion::radial(-0.2, 0.0, 0.0);
        for &(x, y) in &[(0.1, 0.2), (-0.4, 0.3), (0.6, -0.5)] {
            let p = Vector2::new(x, y);
            let back = d.undistort(d.distort(p));
            assert!(back.converged);
            assert!((back.point - p).norm() < 1e-8, "{:?}", back);
        }
    }

    #[test]
    fn nadir_camera_principal_ray_hits_origin() {
        let pose = Pose::look_at(Vector3::new(0.0, 0.0, 5.0), Vector3::new(0.0, 1e-3, 0.0)).unwrap();
        let cam = CameraModel::new(Intrinsics::new(800.0, 800.0, 320.0, 240.0), Distortion::default(), pose, (640, 480)).unwrap();
        let g = cam.back_project_to_ground(Vector2::new(320.0, 240.0)).unwrap();
        assert!((g - Vector3::new(0.0, 1e-3, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn sky_pixel_has_no_ground_hit() {
        let pose = Pose::look_at(Vector3::new(0.0, 0.0, 5.0), Vector3::new(0.0, 20.0, 0.0)).unwrap();
        let cam = CameraModel::new(Intrinsics::new(800.0, 800.0, 320.0, 240.0), Distortion::default(), pose, (640, 480)).unwrap();
        assert!(matches!(
            cam.back_project_to_ground(Vector2::new(320.0, 0.0)),
            Err(GeometryError::NoGroundIntersection { .. })
        ));
    }

    #[test]
    fn camera_below_ground_rejected() {
        let pose = Pose::from_axis_angle(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0));
        assert!(matches!(
            CameraModel::new(Intrinsics::new(1.0, 1.0, 0.0, 0.0), Distortion::default(), pose, (1, 1)),
            Err(GeometryError::CameraBelowGround { .. })
        ));
    }

    #[test]
    fn rotation_derivative_matches_differences() {
        let omega = Vector3::new(0.3, -1.1, 0.7);
        let v = Vector3::new(1.0, 2.0, -0.5);
        let analytic = rotation_derivative(&omega, &v);
        for i in 0..3 {
            let h = 1e-6;
            let mut a = omega;
            let mut b = omega;
            a[i] += h;
            b[i] -= h;
            let fd = (Rotation3::from_scaled_axis(a) * v - Rotation3::from_scaled_axis(b) * v) / (2.0 * h);
            assert!((fd - analytic.column(i)).norm() < 1e-8);
        }
    }
}
