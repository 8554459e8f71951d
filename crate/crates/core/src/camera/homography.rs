//! Linear initializers: plane homographies and the 3D direct linear transform.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector2, Vector3};

use super::model::nearest_rotation;
use super::{GeometryError, Pose};

/// Similarity transform moving points to zero mean and mean distance sqrt(2).
fn normalizer(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector2<f64>>() / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Right singular vector of the smallest singular value. Rows are zero-padded
/// so the null space is always represented.
fn null_vector(mut a: DMatrix<f64>) -> (nalgebra::DVector<f64>, nalgebra::DVector<f64>) {
    let cols = a.ncols();
    if a.nrows() < cols {
        a = a.resize_vertically(cols, 0.0);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("SVD computed V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    (v_t.row(idx).transpose(), svd.singular_values)
}

/// Ratio of the smallest to largest spread of a 2D point cloud.
pub fn planar_spread_ratio(points: &[Vector2<f64>]) -> f64 {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector2<f64>>() / n;
    let mut cov = nalgebra::Matrix2::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    if hi <= 0.0 {
        0.0
    } else {
        (lo.max(0.0) / hi).sqrt()
    }
}

/// Ratio of the smallest to largest spread of a 3D point cloud.
pub fn spatial_spread_ratio(points: &[Vector3<f64>]) -> f64 {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    if hi <= 0.0 {
        0.0
    } else {
        (lo.max(0.0) / hi).sqrt()
    }
}

/// Spread ratio below which a configuration counts as collinear or coplanar.
pub const DEGENERATE_SPREAD: f64 = 1e-6;

/// Normalized DLT estimate of `H` with `dst ~ H src`.
pub fn estimate_homography(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Result<Matrix3<f64>, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::Degenerate("point lists differ in length".into()));
    }
    if src.len() < 4 {
        return Err(GeometryError::TooFewPoints { needed: 4, got: src.len() });
    }
    if planar_spread_ratio(src) < DEGENERATE_SPREAD || planar_spread_ratio(dst) < DEGENERATE_SPREAD {
        return Err(GeometryError::Degenerate("points are collinear".into()));
    }
    let ts = normalizer(src);
    let td = normalizer(dst);
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = apply(&ts, s);
        let d = apply(&td, d);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        a.row_mut(2 * i)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(2 * i + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let (h, _) = null_vector(a);
    let hn = Matrix3::from_row_slice(h.as_slice());
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| GeometryError::Degenerate("normalizer not invertible".into()))?;
    let out = td_inv * hn * ts;
    if out[(2, 2)].abs() > 1e-300 {
        Ok(out / out[(2, 2)])
    } else {
        Ok(out)
    }
}

/// Pose of a plane `Z = 0` from a homography mapping plane `(X, Y, 1)` to
/// ideal normalized image coordinates. Chooses the sign that puts the plane in
/// front of the camera.
pub fn pose_from_plane_homography(h: &Matrix3<f64>) -> Result<Pose, GeometryError> {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let norm = 0.5 * (h1.norm() + h2.norm());
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(GeometryError::Degenerate("homography has vanishing columns".into()));
    }
    let mut lambda = 1.0 / norm;
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let t = h3 * lambda;
    let r3 = r1.cross(&r2);
    let r = Matrix3::from_columns(&[r1, r2, r3]);
    Ok(Pose::from_matrix(&r, t))
}

/// Pose from the 3D direct linear transform on ideal normalized image
/// coordinates. Needs at least 6 points that are not coplanar.
pub fn pose_from_dlt(world: &[Vector3<f64>], normalized: &[Vector2<f64>]) -> Result<Pose, GeometryError> {
    if world.len() < 6 {
        return Err(GeometryError::TooFewPoints { needed: 6, got: world.len() });
    }
    if spatial_spread_ratio(world) < DEGENERATE_SPREAD {
        return Err(GeometryError::Degenerate("non-ground references are coplanar".into()));
    }
    let n = world.len() as f64;
    let c = world.iter().sum::<Vector3<f64>>() / n;
    let scale = world.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if scale > 0.0 { 3f64.sqrt() / scale } else { 1.0 };
    let mut a = DMatrix::zeros(2 * world.len(), 12);
    for (i, (w, m)) in world.iter().zip(normalized).enumerate() {
        let p = (w - c) * s;
        let (x, y, z) = (p.x, p.y, p.z);
        let (u, v) = (m.x, m.y);
        a.row_mut(2 * i).copy_from_slice(&[
            x, y, z, 1.0, 0.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u * z, -u,
        ]);
        a.row_mut(2 * i + 1).copy_from_slice(&[
            0.0, 0.0, 0.0, 0.0, x, y, z, 1.0, -v * x, -v * y, -v * z, -v,
        ]);
    }
    let (p, _) = null_vector(a);
    let pn = Matrix3x4::from_row_slice(p.as_slice());
    // Undo the world normalization: X' = s (X - c).
    let m = pn.fixed_view::<3, 3>(0, 0) * s;
    let t_col = pn.column(3) - m * c;
    let det = m.determinant();
    if det.abs() < 1e-300 {
        return Err(GeometryError::Degenerate("DLT solution is singular".into()));
    }
    let k = det.signum() * det.abs().cbrt();
    let r = nearest_rotation(&(m / k));
    let t = t_col / k;
    Ok(Pose::from_matrix(r.matrix(), t))
}
