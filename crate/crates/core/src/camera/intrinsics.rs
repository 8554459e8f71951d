//! Planar-target intrinsic calibration: closed-form intrinsics from plane
//! homographies, then joint refinement of intrinsics, lens coefficients and
//! per-view poses.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SVector, Vector2, Vector3};

use super::extrinsics::{Correspondence, GROUND_EPS};
use super::homography::{estimate_homography, pose_from_plane_homography};
use super::lm::{levenberg_marquardt, LmOptions, LmStatus, WithJacobian};
use super::model::{project_camera_point, project_camera_point_jacobian, rotation_derivative};
use super::{Distortion, GeometryError, Intrinsics, Pose};

const LENS_PARAMS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicCalibration {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    /// Target pose for each view.
    pub poses: Vec<Pose>,
    pub rms_px: f64,
    pub iterations: usize,
    pub status: LmStatus,
}

fn v_ij(h: &Matrix3<f64>, i: usize, j: usize) -> SVector<f64, 6> {
    let a = h.column(i);
    let b = h.column(j);
    SVector::<f64, 6>::from_row_slice(&[
        a[0] * b[0],
        a[0] * b[1] + a[1] * b[0],
        a[1] * b[1],
        a[2] * b[0] + a[0] * b[2],
        a[2] * b[1] + a[1] * b[2],
        a[2] * b[2],
    ])
}

/// Closed-form intrinsics from at least three plane-to-pixel homographies.
/// Skew is estimated here and dropped afterwards.
pub fn intrinsics_from_homographies(hs: &[Matrix3<f64>]) -> Result<Intrinsics, GeometryError> {
    if hs.len() < 3 {
        return Err(GeometryError::TooFewViews { got: hs.len() });
    }
    let mut v = DMatrix::zeros(2 * hs.len(), 6);
    for (k, h) in hs.iter().enumerate() {
        let h = h / h.column(2).norm();
        v.row_mut(2 * k).copy_from(&v_ij(&h, 0, 1).transpose());
        v.row_mut(2 * k + 1).copy_from(&(v_ij(&h, 0, 0) - v_ij(&h, 1, 1)).transpose());
    }
    let svd = v.svd(false, true);
    let v_t = svd.v_t.expect("SVD computed V^T");
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = &svd.singular_values;
    // Five independent constraints are needed; parallel target planes give fewer.
    if sv[order[4]] <= 1e-9 * sv[order[0]] {
        return Err(GeometryError::Degenerate("views do not constrain the intrinsics (parallel target planes?)".into()));
    }
    let mut b = v_t.row(order[5]).transpose();
    if b[0] < 0.0 {
        b = -b;
    }
    let (b11, b12, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4], b[5]);
    let denom = b11 * b22 - b12 * b12;
    if !(denom > 0.0) || !(b11 > 0.0) {
        return Err(GeometryError::Degenerate("image of the absolute conic is not positive definite".into()));
    }
    let v0 = (b12 * b13 - b11 * b23) / denom;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    if !(lambda / b11 > 0.0) {
        return Err(GeometryError::Degenerate("negative focal length estimate".into()));
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda * b11 / denom).sqrt();
    let gamma = -b12 * alpha * alpha * beta / lambda;
    let u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;
    Ok(Intrinsics {
        fx: alpha,
        fy: beta,
        cx: u0,
        cy: v0,
        skew: gamma,
    })
}

struct PlanarProblem<'a> {
    views: &'a [Vec<Correspondence>],
    bases: Vec<Rotation3<f64>>,
    rows: usize,
}

impl PlanarProblem<'_> {
    fn unpack_lens(p: &DVector<f64>) -> (Intrinsics, Distortion) {
        (
            Intrinsics::new(p[0], p[1], p[2], p[3]),
            Distortion::from_array([p[4], p[5], p[6], p[7], p[8]]),
        )
    }

    fn view_params(p: &DVector<f64>, view: usize) -> (Vector3<f64>, Vector3<f64>) {
        let o = LENS_PARAMS + 6 * view;
        (
            Vector3::new(p[o], p[o + 1], p[o + 2]),
            Vector3::new(p[o + 3], p[o + 4], p[o + 5]),
        )
    }

    fn pose(&self, p: &DVector<f64>, view: usize) -> Pose {
        let (delta, t) = Self::view_params(p, view);
        let r = Rotation3::from_scaled_axis(delta) * self.bases[view];
        Pose::from_matrix(r.matrix(), t)
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let (intr, dist) = Self::unpack_lens(p);
        let mut r = DVector::zeros(self.rows);
        let mut row = 0;
        for (k, view) in self.views.iter().enumerate() {
            let (delta, t) = Self::view_params(p, k);
            let rot = Rotation3::from_scaled_axis(delta) * self.bases[k];
            for c in view {
                let xc = rot * c.world() + t;
                match project_camera_point(&intr, &dist, &xc) {
                    Ok(px) => {
                        r[row] = px.x - c.u;
                        r[row + 1] = px.y - c.v;
                    }
                    Err(_) => {
                        r[row] = f64::INFINITY;
                        r[row + 1] = f64::INFINITY;
                    }
                }
                row += 2;
            }
        }
        r
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let (intr, dist) = Self::unpack_lens(p);
        let mut j = DMatrix::zeros(self.rows, p.len());
        let mut row = 0;
        for (k, view) in self.views.iter().enumerate() {
            let (delta, t) = Self::view_params(p, k);
            let delta_rot = Rotation3::from_scaled_axis(delta);
            let col = LENS_PARAMS + 6 * k;
            for c in view {
                let rotated = self.bases[k] * c.world();
                let xc = delta_rot * rotated + t;
                if let Ok(pj) = project_camera_point_jacobian(&intr, &dist, &xc) {
                    j.view_mut((row, 0), (2, 4)).copy_from(&pj.d_intrinsics);
                    j.view_mut((row, 4), (2, 5)).copy_from(&pj.d_distortion);
                    let d_rot = pj.d_camera_point * rotation_derivative(&delta, &rotated);
                    j.view_mut((row, col), (2, 3)).copy_from(&d_rot);
                    j.view_mut((row, col + 3), (2, 3)).copy_from(&pj.d_camera_point);
                }
                row += 2;
            }
        }
        j
    }
}

/// Calibrates intrinsics and lens coefficients from several views of a planar
/// target. Each view lists target points on `Z = 0` with their pixels.
pub fn calibrate_intrinsics_planar(
    views: &[Vec<Correspondence>],
    opts: &LmOptions,
) -> Result<IntrinsicCalibration, GeometryError> {
    if views.len() < 3 {
        return Err(GeometryError::TooFewViews { got: views.len() });
    }
    for view in views {
        if view.len() < 4 {
            return Err(GeometryError::TooFewPoints { needed: 4, got: view.len() });
        }
        if let Some(c) = view.iter().find(|c| c.z.abs() > GROUND_EPS || !c.is_finite()) {
            return Err(GeometryError::NotOnPlane { z: c.z });
        }
    }
    // Condition pixels to unit scale so the conic constraints are balanced.
    let all: Vec<Vector2<f64>> = views.iter().flatten().map(Correspondence::pixel).collect();
    let n = all.len() as f64;
    let center = all.iter().sum::<Vector2<f64>>() / n;
    let scale = (all.iter().map(|p| (p - center).norm()).sum::<f64>() / n).max(1e-12);
    let cond = Matrix3::new(1.0 / scale, 0.0, -center.x / scale, 0.0, 1.0 / scale, -center.y / scale, 0.0, 0.0, 1.0);

    let mut hs = Vec::with_capacity(views.len());
    for view in views {
        let plane: Vec<Vector2<f64>> = view.iter().map(|c| Vector2::new(c.x, c.y)).collect();
        let px: Vec<Vector2<f64>> = view
            .iter()
            .map(|c| {
                let q = cond * Vector3::new(c.u, c.v, 1.0);
                Vector2::new(q.x, q.y)
            })
            .collect();
        hs.push(estimate_homography(&plane, &px)?);
    }
    let k_cond = intrinsics_from_homographies(&hs)?;
    let init = Intrinsics::new(
        k_cond.fx * scale,
        k_cond.fy * scale,
        k_cond.cx * scale + center.x,
        k_cond.cy * scale + center.y,
    );
    init.validate()?;

    let k_inv = init
        .matrix()
        .try_inverse()
        .ok_or_else(|| GeometryError::Degenerate("initial intrinsics not invertible".into()))?;
    let cond_inv = cond.try_inverse().expect("conditioning is invertible");
    let mut bases = Vec::with_capacity(views.len());
    let mut start = vec![init.fx, init.fy, init.cx, init.cy, 0.0, 0.0, 0.0, 0.0, 0.0];
    for h in &hs {
        let pose = pose_from_plane_homography(&(k_inv * cond_inv * h))?;
        bases.push(*pose.rotation());
        start.extend([0.0, 0.0, 0.0]);
        start.extend(pose.translation.iter().copied());
    }

    let problem = PlanarProblem {
        views,
        bases,
        rows: 2 * views.iter().map(Vec::len).sum::<usize>(),
    };
    let lm = WithJacobian(|p: &DVector<f64>| problem.residuals(p), |p: &DVector<f64>| problem.jacobian(p));
    let report = levenberg_marquardt(&lm, DVector::from_vec(start), opts)?;
    if report.status == LmStatus::MaxIterations {
        return Err(GeometryError::NotConverged {
            iterations: report.iterations,
            cost: report.cost,
        });
    }
    let (intrinsics, distortion) = PlanarProblem::unpack_lens(&report.params);
    intrinsics.validate()?;
    let poses = (0..views.len()).map(|k| problem.pose(&report.params, k)).collect();
    Ok(IntrinsicCalibration {
        intrinsics,
        distortion,
        poses,
        rms_px: (report.cost / (problem.rows / 2) as f64).sqrt(),
        iterations: report.iterations,
        status: report.status,
    })
}
