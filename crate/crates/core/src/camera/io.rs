//! Camera JSON files and correspondence CSV files.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{CameraModel, Correspondence, Distortion, GeometryError, Intrinsics, Pose};

pub const UNITS: &str = "m-px";

#[derive(Debug, thiserror::Error)]
pub enum CameraIoError {
    #[error("camera JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("correspondence CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("unsupported units {0:?}, expected \"m-px\"")]
    Units(String),
    #[error("line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub axis_angle: [f64; 3],
    pub t: [f64; 3],
}

/// Fit quality stored alongside a calibrated camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub rms_px: f64,
    pub points: usize,
    pub iterations: usize,
    pub method: String,
}

/// On-disk camera description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub image_size: [u32; 2],
    pub intrinsics: Intrinsics,
    #[serde(default)]
    pub distortion: Distortion,
    /// Absent for intrinsics-only files used as calibration input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseRecord>,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationRecord>,
}

impl CameraFile {
    pub fn from_camera(camera: &CameraModel) -> Self {
        let aa = camera.pose.axis_angle();
        let t = camera.pose.translation;
        Self {
            image_size: [camera.image_size.0, camera.image_size.1],
            intrinsics: camera.intrinsics,
            distortion: camera.distortion,
            pose: Some(PoseRecord {
                axis_angle: [aa.x, aa.y, aa.z],
                t: [t.x, t.y, t.z],
            }),
            units: UNITS.to_string(),
            calibration: None,
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CameraIoError> {
        let file: Self = serde_json::from_slice(bytes)?;
        if file.units != UNITS {
            return Err(CameraIoError::Units(file.units));
        }
        file.intrinsics.validate()?;
        if !file.distortion.is_finite() {
            return Err(GeometryError::InvalidDistortion(file.distortion).into());
        }
        Ok(file)
    }

    /// The full camera; fails when the file carries no pose.
    pub fn camera(&self) -> Result<CameraModel, CameraIoError> {
        let pose = self
            .pose
            .as_ref()
            .ok_or_else(|| GeometryError::Degenerate("camera file has no pose".into()))?;
        let pose = Pose::from_axis_angle(Vector3::from(pose.axis_angle), Vector3::from(pose.t));
        Ok(CameraModel::new(
            self.intrinsics,
            self.distortion,
            pose,
            (self.image_size[0], self.image_size[1]),
        )?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("camera file serializes")
    }
}

/// Reads `X,Y,Z,u,v` rows. Line numbers in errors count the header as line 1.
pub fn read_correspondences<R: Read>(reader: R) -> Result<Vec<Correspondence>, CameraIoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<Correspondence>() {
        let c = row?;
        if !c.is_finite() {
            return Err(CameraIoError::BadRow {
                line: out.len() as u64 + 2,
                reason: "non-finite value".into(),
            });
        }
        out.push(c);
    }
    Ok(out)
}

pub fn write_correspondences<W: Write>(writer: W, points: &[Correspondence]) -> Result<(), CameraIoError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for c in points {
        wtr.serialize(c)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
