//! COCO-format annotation and detection files.
//!
//! Ground truth and detections share one [`Annotation`] type; detections carry a
//! `score`. Fields this crate does not model are kept in `extra` maps and written
//! back unchanged.

mod labelme;
mod split;

pub use labelme::{export_labelme, import_labelme, LabelMeDoc, LabelMeShape};
pub use split::{split_dataset, SplitOptions, SplitRatio};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::polygon::{hull_bbox, total_area, BBox, Polygon};

/// Slack allowed between a bbox and the image frame or the polygon hull.
pub const PIXEL_TOLERANCE: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum CocoError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{record} is missing required field `{field}`")]
    MissingField { record: String, field: &'static str },
    #[error("duplicate image id {0}")]
    DuplicateImage(u64),
    #[error("duplicate category id {0}")]
    DuplicateCategory(u32),
    #[error("annotation {annotation_id} references missing image {image_id}")]
    DanglingImage { annotation_id: u64, image_id: u64 },
    #[error("annotation {annotation_id} references missing category {category_id}")]
    DanglingCategory { annotation_id: u64, category_id: u32 },
    #[error("annotation {annotation_id}: polygon {part} is degenerate ({reason})")]
    DegeneratePolygon {
        annotation_id: u64,
        part: usize,
        reason: String,
    },
    #[error("annotation {annotation_id}: RLE masks are not supported, segmentation must be polygons")]
    RleUnsupported { annotation_id: u64 },
    #[error("annotation {annotation_id}: invalid bbox {bbox:?}")]
    InvalidBbox { annotation_id: u64, bbox: Vec<f64> },
    #[error("annotation {annotation_id}: bbox {bbox:?} exceeds image {width}x{height}")]
    BboxOutOfImage {
        annotation_id: u64,
        bbox: [f64; 4],
        width: u32,
        height: u32,
    },
    #[error("annotation {annotation_id}: bbox {bbox:?} does not match polygon hull {hull:?}")]
    BboxHullMismatch {
        annotation_id: u64,
        bbox: [f64; 4],
        hull: [f64; 4],
    },
    #[error("annotation {annotation_id}: score {score} outside [0, 1]")]
    InvalidScore { annotation_id: u64, score: f64 },
    #[error("annotation {annotation_id} has no confidence score")]
    MissingScore { annotation_id: u64 },
    #[error("annotation {annotation_id} has no polygon")]
    MissingPolygon { annotation_id: u64 },
    #[error("annotation {annotation_id} belongs to image {found}, expected {expected}")]
    WrongImage {
        annotation_id: u64,
        expected: u64,
        found: u64,
    },
    #[error("dataset has no images")]
    EmptyDataset,
    #[error("invalid split ratio: {0}")]
    InvalidRatio(String),
    #[error("unknown category {0} in taxonomy")]
    UnknownCategory(u32),
    #[error("LabelMe shape {index}: {reason}")]
    BadShape { index: usize, reason: String },
}

pub type Result<T, E = CocoError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(id: u64, file_name: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id,
            file_name: file_name.into(),
            width,
            height,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
    #[serde(default)]
    pub supercategory: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One object instance: a ground-truth annotation or a scored detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: BBox,
    /// Polygon parts; empty for bbox-only detections.
    pub segmentation: Vec<Polygon>,
    /// Pixel area: sum of part shoelace areas, or the bbox area without polygons.
    pub area: f64,
    pub score: Option<f64>,
    pub extra: Map<String, Value>,
}

impl Annotation {
    /// Builds an annotation whose bbox and area are derived from its polygons.
    pub fn from_polygons(
        id: u64,
        image_id: u64,
        category_id: u32,
        segmentation: Vec<Polygon>,
        score: Option<f64>,
    ) -> Option<Self> {
        let bbox = hull_bbox(&segmentation)?;
        Some(Self {
            id,
            image_id,
            category_id,
            bbox,
            area: total_area(&segmentation),
            segmentation,
            score,
            extra: Map::new(),
        })
    }

    pub fn from_bbox(id: u64, image_id: u64, category_id: u32, bbox: BBox, score: Option<f64>) -> Self {
        Self {
            id,
            image_id,
            category_id,
            bbox,
            segmentation: Vec::new(),
            area: bbox.area(),
            score,
            extra: Map::new(),
        }
    }

    pub fn polygon_area(&self) -> f64 {
        total_area(&self.segmentation)
    }

    pub fn has_polygon(&self) -> bool {
        !self.segmentation.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segmentation: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

impl From<&Annotation> for RawAnnotation {
    fn from(a: &Annotation) -> Self {
        let segmentation = (!a.segmentation.is_empty()).then(|| {
            Value::Array(
                a.segmentation
                    .iter()
                    .map(|p| Value::from(p.to_flat()))
                    .collect(),
            )
        });
        Self {
            id: Some(a.id),
            image_id: Some(a.image_id),
            category_id: Some(a.category_id),
            segmentation,
            area: Some(a.area),
            bbox: Some(a.bbox.to_array().to_vec()),
            score: a.score,
            extra: a.extra.clone(),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawDataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    info: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    licenses: Option<Value>,
    #[serde(default)]
    images: Vec<ImageRecord>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// A COCO document: images, annotations and categories.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub info: Option<Value>,
    pub licenses: Option<Value>,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
    pub extra: Map<String, Value>,
}

impl Dataset {
    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn image_index(&self) -> BTreeMap<u64, &ImageRecord> {
        self.images.iter().map(|i| (i.id, i)).collect()
    }

    pub fn category(&self, id: u32) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Annotations grouped by image id, in file order.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut out: BTreeMap<u64, Vec<&Annotation>> = BTreeMap::new();
        for a in &self.annotations {
            out.entry(a.image_id).or_default().push(a);
        }
        out
    }

    /// Checks the referential and geometric invariants.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::new();
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(CocoError::DuplicateImage(img.id));
            }
        }
        let mut cat_ids = HashSet::new();
        for c in &self.categories {
            if !cat_ids.insert(c.id) {
                return Err(CocoError::DuplicateCategory(c.id));
            }
        }
        let images = self.image_index();
        for a in &self.annotations {
            let img = images.get(&a.image_id).ok_or(CocoError::DanglingImage {
                annotation_id: a.id,
                image_id: a.image_id,
            })?;
            if !cat_ids.contains(&a.category_id) {
                return Err(CocoError::DanglingCategory {
                    annotation_id: a.id,
                    category_id: a.category_id,
                });
            }
            validate_geometry(a)?;
            check_in_image(a, img)?;
        }
        Ok(())
    }
}

fn validate_geometry(a: &Annotation) -> Result<()> {
    if !a.bbox.is_valid() || !a.bbox.w.is_finite() || !a.bbox.h.is_finite() {
        return Err(CocoError::InvalidBbox {
            annotation_id: a.id,
            bbox: a.bbox.to_array().to_vec(),
        });
    }
    for (part, poly) in a.segmentation.iter().enumerate() {
        let reason = if poly.len() < 3 {
            Some(format!("{} vertices", poly.len()))
        } else if !poly.is_finite() {
            Some("non-finite vertex".to_string())
        } else if poly.area() <= 0.0 {
            Some("zero area".to_string())
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(CocoError::DegeneratePolygon {
                annotation_id: a.id,
                part,
                reason,
            });
        }
    }
    if let Some(score) = a.score {
        if !(0.0..=1.0).contains(&score) {
            return Err(CocoError::InvalidScore {
                annotation_id: a.id,
                score,
            });
        }
    }
    Ok(())
}

fn check_in_image(a: &Annotation, img: &ImageRecord) -> Result<()> {
    let b = a.bbox;
    let (w, h) = (f64::from(img.width), f64::from(img.height));
    if b.x < -PIXEL_TOLERANCE
        || b.y < -PIXEL_TOLERANCE
        || b.right() > w + PIXEL_TOLERANCE
        || b.bottom() > h + PIXEL_TOLERANCE
    {
        return Err(CocoError::BboxOutOfImage {
            annotation_id: a.id,
            bbox: b.to_array(),
            width: img.width,
            height: img.height,
        });
    }
    Ok(())
}

fn hull_mismatch(a: &Annotation) -> Option<BBox> {
    let hull = hull_bbox(&a.segmentation)?;
    (hull.max_corner_deviation(&a.bbox) > PIXEL_TOLERANCE).then_some(hull)
}

fn parse_segmentation(annotation_id: u64, value: Option<Value>) -> Result<Vec<Polygon>> {
    let parts = match value {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(Value::Object(_)) => return Err(CocoError::RleUnsupported { annotation_id }),
        Some(Value::Array(parts)) => parts,
        Some(_) => {
            return Err(CocoError::DegeneratePolygon {
                annotation_id,
                part: 0,
                reason: "segmentation is neither a polygon list nor RLE".into(),
            })
        }
    };
    // A bare flat list `[x1, y1, ...]` is accepted as a single part.
    let parts: Vec<Value> = if parts.first().is_some_and(Value::is_number) {
        vec![Value::Array(parts)]
    } else {
        parts
    };
    parts
        .into_iter()
        .enumerate()
        .map(|(part, v)| {
            let coords: Vec<f64> = serde_json::from_value(v).map_err(|e| CocoError::DegeneratePolygon {
                annotation_id,
                part,
                reason: e.to_string(),
            })?;
            Polygon::from_flat(&coords).ok_or_else(|| CocoError::DegeneratePolygon {
                annotation_id,
                part,
                reason: "odd number of coordinates".into(),
            })
        })
        .collect()
}

fn cook_annotation(raw: RawAnnotation, fallback_id: Option<u64>) -> Result<Annotation> {
    let id = raw.id.or(fallback_id).ok_or(CocoError::MissingField {
        record: "annotation".into(),
        field: "id",
    })?;
    let record = || format!("annotation {id}");
    let image_id = raw.image_id.ok_or_else(|| CocoError::MissingField {
        record: record(),
        field: "image_id",
    })?;
    let category_id = raw.category_id.ok_or_else(|| CocoError::MissingField {
        record: record(),
        field: "category_id",
    })?;
    let segmentation = parse_segmentation(id, raw.segmentation)?;
    let bbox = match raw.bbox {
        Some(v) if v.len() == 4 => BBox::new(v[0], v[1], v[2], v[3]),
        Some(v) => {
            return Err(CocoError::InvalidBbox {
                annotation_id: id,
                bbox: v,
            })
        }
        None => hull_bbox(&segmentation).ok_or_else(|| CocoError::MissingField {
            record: record(),
            field: "bbox",
        })?,
    };
    let area = raw.area.unwrap_or_else(|| {
        if segmentation.is_empty() {
            bbox.area()
        } else {
            total_area(&segmentation)
        }
    });
    let ann = Annotation {
        id,
        image_id,
        category_id,
        bbox,
        segmentation,
        area,
        score: raw.score,
        extra: raw.extra,
    };
    validate_geometry(&ann)?;
    if let Some(hull) = hull_mismatch(&ann) {
        log::warn!(
            "annotation {}: bbox {:?} differs from polygon hull {:?} by more than {} px",
            ann.id,
            ann.bbox.to_array(),
            hull.to_array(),
            PIXEL_TOLERANCE
        );
    }
    Ok(ann)
}

/// Parses a COCO document and checks its referential invariants.
pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let raw: RawDataset = serde_json::from_slice(bytes)?;
    let annotations = raw
        .annotations
        .into_iter()
        .map(|a| cook_annotation(a, None))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        info: raw.info,
        licenses: raw.licenses,
        images: raw.images,
        annotations,
        categories: raw.categories,
        extra: raw.extra,
    };
    ds.validate()?;
    Ok(ds)
}

/// Parses detections given either as a COCO results array or as a full document.
///
/// Results arrays commonly omit ids; those are numbered from 1 in file order.
/// Image references are not checked here since the image table lives in the
/// ground-truth file.
pub fn parse_detections(bytes: &[u8]) -> Result<Vec<Annotation>> {
    let value: Value = serde_json::from_slice(bytes)?;
    let raws: Vec<RawAnnotation> = match value {
        Value::Array(_) => serde_json::from_value(value)?,
        other => {
            let raw: RawDataset = serde_json::from_value(other)?;
            raw.annotations
        }
    };
    raws.into_iter()
        .enumerate()
        .map(|(i, raw)| cook_annotation(raw, Some(i as u64 + 1)))
        .collect()
}

/// Serializes a dataset. Annotations whose bbox is not the polygon hull
/// (within [`PIXEL_TOLERANCE`]) are rejected.
pub fn write_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    for a in &ds.annotations {
        if let Some(hull) = hull_mismatch(a) {
            return Err(CocoError::BboxHullMismatch {
                annotation_id: a.id,
                bbox: a.bbox.to_array(),
                hull: hull.to_array(),
            });
        }
    }
    let raw = RawDataset {
        info: ds.info.clone(),
        licenses: ds.licenses.clone(),
        images: ds.images.clone(),
        annotations: ds.annotations.iter().map(RawAnnotation::from).collect(),
        categories: ds.categories.clone(),
        extra: ds.extra.clone(),
    };
    Ok(serde_json::to_vec_pretty(&raw)?)
}

/// Serializes detections as a COCO results array.
pub fn write_detections(dets: &[Annotation]) -> Result<Vec<u8>> {
    let raws: Vec<RawAnnotation> = dets.iter().map(RawAnnotation::from).collect();
    Ok(serde_json::to_vec_pretty(&raws)?)
}

/// Thresholds for the detector-aided annotation loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssistThresholds {
    pub min_score: f64,
    pub min_area_px: f64,
}

impl Default for AssistThresholds {
    fn default() -> Self {
        Self {
            min_score: 0.75,
            min_area_px: 600.0,
        }
    }
}

/// Keeps detections with `score >= min_score` and polygon area `>= min_area_px`,
/// in input order.
pub fn filter_for_annotation(dets: &[Annotation], thresholds: AssistThresholds) -> Result<Vec<Annotation>> {
    let mut kept = Vec::new();
    for d in dets {
        let score = d.score.ok_or(CocoError::MissingScore { annotation_id: d.id })?;
        if !d.has_polygon() {
            return Err(CocoError::MissingPolygon { annotation_id: d.id });
        }
        if score >= thresholds.min_score && d.polygon_area() >= thresholds.min_area_px {
            kept.push(d.clone());
        }
    }
    Ok(kept)
}
