//! Per-frame behavioral mapping: detections to ground-plane observations and
//! prior-sized 3D boxes.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, GeometryError};
use crate::coco::Annotation;
use crate::taxonomy::{Taxonomy, Treatment};

/// Share of the mask's row span that counts as the bottom (and top) band.
pub const BAND_FRACTION: f64 = 0.05;
/// Estimated heights are clamped to this range, meters.
pub const HEIGHT_RANGE: (f64, f64) = (0.3, 3.0);
/// Top-pixel rays closer than this to the vertical cannot fix a height.
pub const MIN_VERTICAL_ANGLE_RAD: f64 = 2.0 * std::f64::consts::PI / 180.0;
/// Slack on the closed extent test, meters.
const EXTENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MappingError {
    #[error("annotation {annotation_id}: no polygon and no valid bbox")]
    EmptyDetection { annotation_id: u64 },
    #[error("annotation {annotation_id}: class {class_id} is not in the treatment table")]
    UnknownClass { annotation_id: u64, class_id: u32 },
    #[error("annotation {annotation_id}: {source}")]
    Geometry {
        annotation_id: u64,
        #[source]
        source: GeometryError,
    },
    #[error("annotation {annotation_id}: top-pixel ray is within {:.1} degrees of vertical", MIN_VERTICAL_ANGLE_RAD.to_degrees())]
    DegenerateVertical { annotation_id: u64 },
    #[error("no size prior for class {class_id}")]
    NoPrior { class_id: u32 },
    #[error("invalid map extent: {0}")]
    InvalidExtent(String),
    #[error("invalid class prior for class {class_id}: footprint must be positive")]
    InvalidPrior { class_id: u32 },
}

/// A rectangle on the ground: `origin_xy` is one corner, `width_m` runs along
/// the direction `rotation_rad` from world +X, `length_m` along its left normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapExtent {
    pub origin_xy: [f64; 2],
    pub width_m: f64,
    pub length_m: f64,
    #[serde(default)]
    pub rotation_rad: f64,
}

impl MapExtent {
    pub fn new(origin_xy: [f64; 2], width_m: f64, length_m: f64, rotation_rad: f64) -> Result<Self, MappingError> {
        let e = Self {
            origin_xy,
            width_m,
            length_m,
            rotation_rad,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), MappingError> {
        if !(self.width_m > 0.0 && self.length_m > 0.0) || !self.width_m.is_finite() || !self.length_m.is_finite() {
            return Err(MappingError::InvalidExtent(format!(
                "width {} and length {} must be positive",
                self.width_m, self.length_m
            )));
        }
        if !(self.origin_xy[0].is_finite() && self.origin_xy[1].is_finite() && self.rotation_rad.is_finite()) {
            return Err(MappingError::InvalidExtent("origin and rotation must be finite".into()));
        }
        Ok(())
    }

    /// World point to extent-local `(along width, along length)`.
    pub fn to_local(&self, xy: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_rad.sin_cos();
        let dx = xy[0] - self.origin_xy[0];
        let dy = xy[1] - self.origin_xy[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn to_world(&self, local: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_rad.sin_cos();
        [
            self.origin_xy[0] + c * local[0] - s * local[1],
            self.origin_xy[1] + s * local[0] + c * local[1],
        ]
    }

    /// Closed containment: points on the boundary are inside.
    pub fn contains(&self, xy: [f64; 2]) -> bool {
        let [a, b] = self.to_local(xy);
        (-EXTENT_EPS..=self.width_m + EXTENT_EPS).contains(&a) && (-EXTENT_EPS..=self.length_m + EXTENT_EPS).contains(&b)
    }

    pub fn area(&self) -> f64 {
        self.width_m * self.length_m
    }
}

/// Horizontal size prior for one class, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub class_id: u32,
    pub footprint_w: f64,
    pub footprint_l: f64,
}

pub const PEDESTRIAN_FOOTPRINT: (f64, f64) = (0.50, 0.60);
pub const CYCLIST_FOOTPRINT: (f64, f64) = (0.50, 1.60);

/// Priors keyed by class id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassPriors(pub BTreeMap<u32, ClassPrior>);

impl ClassPriors {
    /// Pedestrian and cyclist footprints; other people classes reuse the
    /// pedestrian footprint.
    pub fn people_defaults(taxonomy: &Taxonomy) -> Self {
        let cyclist = taxonomy.class_by_name("cyclist").map(|c| c.class_id);
        let map = taxonomy
            .people_ids()
            .into_iter()
            .map(|id| {
                let (w, l) = if Some(id) == cyclist { CYCLIST_FOOTPRINT } else { PEDESTRIAN_FOOTPRINT };
                (
                    id,
                    ClassPrior {
                        class_id: id,
                        footprint_w: w,
                        footprint_l: l,
                    },
                )
            })
            .collect();
        Self(map)
    }

    pub fn get(&self, class_id: u32) -> Result<ClassPrior, MappingError> {
        let p = *self.0.get(&class_id).ok_or(MappingError::NoPrior { class_id })?;
        if !(p.footprint_w > 0.0 && p.footprint_l > 0.0) {
            return Err(MappingError::InvalidPrior { class_id });
        }
        Ok(p)
    }
}

/// A located user on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundObservation {
    /// Seconds since the stream epoch.
    pub ts: f64,
    pub image_id: u64,
    /// Class id after treatment.
    #[serde(rename = "class")]
    pub class_id: u32,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "Y")]
    pub y: f64,
    pub score: f64,
    /// Camera or stream identifier.
    #[serde(rename = "source", default)]
    pub source_id: u32,
}

impl GroundObservation {
    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Upright box on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center_xy: [f64; 2],
    /// Heading of the length axis from world +X. Taken from the viewing ray,
    /// so it carries no information about the user's actual orientation.
    pub yaw: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    /// True when the solved height hit the clamp range.
    pub height_clamped: bool,
}

impl Box3D {
    /// The four corners at height `z`, counter-clockwise.
    pub fn corners(&self, z: f64) -> [Vector3<f64>; 4] {
        let f = Vector2::new(self.yaw.cos(), self.yaw.sin());
        let s = Vector2::new(-f.y, f.x);
        let c = Vector2::from(self.center_xy);
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)].map(|(a, b)| {
            let p = c + f * a + s * b;
            Vector3::new(p.x, p.y, z)
        })
    }
}

fn vertices(det: &Annotation) -> Vec<Vector2<f64>> {
    det.segmentation
        .iter()
        .flat_map(|p| p.vertices.iter())
        .filter(|v| v.x.is_finite() && v.y.is_finite())
        .map(|v| Vector2::new(v.x, v.y))
        .collect()
}

/// Mid-column of the vertices within the band at the extreme row.
fn band_mid(verts: &[Vector2<f64>], bottom: bool) -> Vector2<f64> {
    let (lo, hi) = verts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.y), hi.max(v.y)));
    let band = BAND_FRACTION * (hi - lo);
    let (row, in_band): (f64, Box<dyn Fn(f64) -> bool>) = if bottom {
        (hi, Box::new(move |y| y >= hi - band))
    } else {
        (lo, Box::new(move |y| y <= lo + band))
    };
    let (xmin, xmax) = verts
        .iter()
        .filter(|v| in_band(v.y))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.x), b.max(v.x)));
    Vector2::new(0.5 * (xmin + xmax), row)
}

fn usable_bbox(det: &Annotation) -> Result<(), MappingError> {
    if det.bbox.is_valid() {
        Ok(())
    } else {
        Err(MappingError::EmptyDetection { annotation_id: det.id })
    }
}

/// Ground-contact pixel: middle of the lowest vertex band of the mask, or the
/// bbox bottom-centre when there is no polygon.
pub fn footpoint(det: &Annotation) -> Result<Vector2<f64>, MappingError> {
    let verts = vertices(det);
    if !verts.is_empty() {
        return Ok(band_mid(&verts, true));
    }
    usable_bbox(det)?;
    Ok(Vector2::new(det.bbox.x + 0.5 * det.bbox.w, det.bbox.bottom()))
}

/// Topmost pixel of the detection, taken the same way as the footpoint.
pub fn top_pixel(det: &Annotation) -> Result<Vector2<f64>, MappingError> {
    let verts = vertices(det);
    if !verts.is_empty() {
        return Ok(band_mid(&verts, false));
    }
    usable_bbox(det)?;
    Ok(Vector2::new(det.bbox.x + 0.5 * det.bbox.w, det.bbox.y))
}

fn geometry(annotation_id: u64) -> impl FnOnce(GeometryError) -> MappingError {
    move |source| MappingError::Geometry { annotation_id, source }
}

/// Back-projects the footpoint and applies the class treatment.
pub fn locate(det: &Annotation, camera: &CameraModel, treatment: &Treatment, ts: f64) -> Result<GroundObservation, MappingError> {
    let class_id = treatment.map(det.category_id).ok_or(MappingError::UnknownClass {
        annotation_id: det.id,
        class_id: det.category_id,
    })?;
    let g = camera.back_project_to_ground(footpoint(det)?).map_err(geometry(det.id))?;
    Ok(GroundObservation {
        ts,
        image_id: det.image_id,
        class_id,
        x: g.x,
        y: g.y,
        score: det.score.unwrap_or(1.0),
        source_id: 0,
    })
}

const HEIGHT_SEARCH_MAX: f64 = 10.0;

/// Box with prior footprint whose near edge sits on the located ground point.
/// The height makes the highest projected top corner land on the detection's
/// top row.
pub fn estimate_box3d(det: &Annotation, camera: &CameraModel, prior: &ClassPrior) -> Result<Box3D, MappingError> {
    if !(prior.footprint_w > 0.0 && prior.footprint_l > 0.0) {
        return Err(MappingError::InvalidPrior { class_id: prior.class_id });
    }
    let top = top_pixel(det)?;
    let top_ray = camera.ray_direction(top).map_err(geometry(det.id))?;
    if top_ray.z.abs() > MIN_VERTICAL_ANGLE_RAD.cos() * top_ray.norm() {
        return Err(MappingError::DegenerateVertical { annotation_id: det.id });
    }
    let g = camera.back_project_to_ground(footpoint(det)?).map_err(geometry(det.id))?;
    let c = camera.pose.camera_center();
    let yaw = (g.y - c.y).atan2(g.x - c.x);
    let center = Vector2::new(g.x, g.y) + Vector2::new(yaw.cos(), yaw.sin()) * (0.5 * prior.footprint_l);
    let mut b = Box3D {
        center_xy: [center.x, center.y],
        yaw,
        w: prior.footprint_w,
        l: prior.footprint_l,
        h: 0.0,
        height_clamped: false,
    };
    // Highest image row reached by the top face; rows shrink as the face rises.
    let top_row = |h: f64| {
        b.corners(h)
            .iter()
            .map(|p| camera.project(p).map(|px| px.y).unwrap_or(f64::NEG_INFINITY))
            .fold(f64::INFINITY, f64::min)
    };
    let (mut lo, mut hi) = (0.0, HEIGHT_SEARCH_MAX);
    let h = if top_row(lo) <= top.y {
        lo
    } else if top_row(hi) > top.y {
        hi
    } else {
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if top_row(mid) > top.y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    b.h = h.clamp(HEIGHT_RANGE.0, HEIGHT_RANGE.1);
    b.height_clamped = b.h != h;
    Ok(b)
}

/// Fixed inputs for mapping one camera's frames.
#[derive(Debug, Clone)]
pub struct MapContext<'a> {
    pub camera: &'a CameraModel,
    pub taxonomy: &'a Taxonomy,
    pub treatment: &'a Treatment,
    pub extent: Option<MapExtent>,
    /// When set, a box is estimated for every retained observation.
    pub priors: Option<&'a ClassPriors>,
    pub source_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateFailure {
    pub annotation_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMapping {
    pub observations: Vec<GroundObservation>,
    /// Annotation id and box for each observation, when priors are set.
    pub boxes: Vec<(u64, Box3D)>,
    pub out_of_extent: usize,
    pub non_people: usize,
    pub failures: Vec<LocateFailure>,
    pub elapsed_s: f64,
}

/// Maps the people detections of one frame. Failures are recorded per
/// detection and do not stop the frame.
pub fn map_frame(dets: &[Annotation], ctx: &MapContext<'_>, ts: f64) -> FrameMapping {
    let start = Instant::now();
    let mut out = FrameMapping {
        observations: Vec::new(),
        boxes: Vec::new(),
        out_of_extent: 0,
        non_people: 0,
        failures: Vec::new(),
        elapsed_s: 0.0,
    };
    for det in dets {
        let fail = |e: MappingError| LocateFailure {
            annotation_id: det.id,
            reason: e.to_string(),
        };
        match ctx.treatment.map(det.category_id) {
            Some(c) if ctx.taxonomy.is_people(c) => {}
            Some(_) => {
                out.non_people += 1;
                continue;
            }
            None => {
                out.failures.push(fail(MappingError::UnknownClass {
                    annotation_id: det.id,
                    class_id: det.category_id,
                }));
                continue;
            }
        }
        let mut obs = match locate(det, ctx.camera, ctx.treatment, ts) {
            Ok(o) => o,
            Err(e) => {
                out.failures.push(fail(e));
                continue;
            }
        };
        obs.source_id = ctx.source_id;
        if ctx.extent.is_some_and(|e| !e.contains(obs.xy())) {
            out.out_of_extent += 1;
            continue;
        }
        if let Some(priors) = ctx.priors {
            match priors.get(obs.class_id).and_then(|p| estimate_box3d(det, ctx.camera, &p)) {
                Ok(b) => out.boxes.push((det.id, b)),
                Err(e) => out.failures.push(fail(e)),
            }
        }
        out.observations.push(obs);
    }
    out.elapsed_s = start.elapsed().as_secs_f64();
    out
}

/// Maps frames concurrently; results keep the input order.
pub fn map_frames(frames: &[(f64, Vec<Annotation>)], ctx: &MapContext<'_>) -> Vec<FrameMapping> {
    frames.par_iter().map(|(ts, dets)| map_frame(dets, ctx, *ts)).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("observation CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("observation JSON line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("observation stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
}

fn check_finite(o: &GroundObservation, line: usize) -> Result<(), StreamError> {
    if [o.ts, o.x, o.y, o.score].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StreamError::NonFinite { line })
    }
}

/// CSV with header `ts,image_id,class,X,Y,score,source`; `source` may be absent.
pub fn read_observations_csv<R: Read>(reader: R) -> Result<Vec<GroundObservation>, StreamError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<GroundObservation>().enumerate() {
        let o = row?;
        check_finite(&o, i + 2)?;
        out.push(o);
    }
    Ok(out)
}

pub fn write_observations_csv<W: Write>(writer: W, obs: &[GroundObservation]) -> Result<(), StreamError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for o in obs {
        wtr.serialize(o)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One JSON object per line with the CSV field names; blank lines are skipped.
pub fn read_observations_jsonl<R: BufRead>(reader: R) -> Result<Vec<GroundObservation>, StreamError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let o: GroundObservation = serde_json::from_str(&line).map_err(|source| StreamError::Json { line: i + 1, source })?;
        check_finite(&o, i + 1)?;
        out.push(o);
    }
    Ok(out)
}

pub fn write_observations_jsonl<W: Write>(mut writer: W, obs: &[GroundObservation]) -> Result<(), StreamError> {
    for o in obs {
        serde_json::to_writer(&mut writer, o).map_err(|source| StreamError::Json { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
