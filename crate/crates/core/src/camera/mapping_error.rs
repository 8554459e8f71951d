use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::extrinsics::{Correspondence, GROUND_EPS};
use super::{CameraModel, GeometryError};

/// Ground remapping error of surveyed references, in meters.
///
/// Distances are Euclidean on the ground plane; a per-axis mean would be
/// smaller by up to a factor of sqrt(2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingErrorReport {
    pub mean_m: f64,
    pub max_m: f64,
    pub per_point: Vec<f64>,
}

/// Back-projects each reference pixel and measures its distance to the
/// surveyed ground point.
pub fn ground_mapping_error(camera: &CameraModel, refs: &[Correspondence]) -> Result<MappingErrorReport, GeometryError> {
    if refs.is_empty() {
        return Err(GeometryError::TooFewPoints { needed: 1, got: 0 });
    }
    let mut per_point = Vec::with_capacity(refs.len());
    for c in refs {
        if c.z.abs() > GROUND_EPS {
            return Err(GeometryError::NotOnGround { z: c.z });
        }
        let hit = camera.back_project_to_ground(c.pixel())?;
        per_point.push((Vector2::new(hit.x, hit.y) - Vector2::new(c.x, c.y)).norm());
    }
    let mean_m = per_point.iter().sum::<f64>() / per_point.len() as f64;
    let max_m = per_point.iter().copied().fold(0.0, f64::max);
    Ok(MappingErrorReport { mean_m, max_m, per_point })
}
