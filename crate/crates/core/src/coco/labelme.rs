use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::{Annotation, CocoError, ImageRecord, Result};
use crate::polygon::{Point2, Polygon};
use crate::taxonomy::Taxonomy;

/// A LabelMe annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMeDoc {
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default)]
    pub flags: Map<String, serde_json::Value>,
    pub shapes: Vec<LabelMeShape>,
    #[serde(rename = "imagePath")]
    pub image_path: String,
    #[serde(rename = "imageData", default)]
    pub image_data: Option<String>,
    #[serde(rename = "imageHeight")]
    pub image_height: u32,
    #[serde(rename = "imageWidth")]
    pub image_width: u32,
}

fn default_version() -> String {
    "5.0.1".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMeShape {
    /// `super_class_k`, e.g. `person_pedestrian_6`.
    pub label: String,
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub group_id: Option<i64>,
    pub shape_type: String,
    #[serde(default)]
    pub flags: Map<String, serde_json::Value>,
}

/// Splits `super_class_k` into its three parts. Class names may themselves
/// contain underscores.
pub fn parse_label(label: &str) -> Option<(&str, &str, u32)> {
    let (prefix, rest) = label.split_once('_')?;
    let (class, index) = rest.rsplit_once('_')?;
    if prefix.is_empty() || class.is_empty() {
        return None;
    }
    Some((prefix, class, index.parse().ok()?))
}

/// Writes one polygon shape per detection, numbered from 1 in descending
/// score order. Multi-part masks export their largest part.
pub fn export_labelme(image: &ImageRecord, dets: &[Annotation], taxonomy: &Taxonomy) -> Result<LabelMeDoc> {
    let mut order: Vec<&Annotation> = dets.iter().collect();
    for d in &order {
        if d.image_id != image.id {
            return Err(CocoError::WrongImage {
                annotation_id: d.id,
                expected: image.id,
                found: d.image_id,
            });
        }
    }
    let key = |a: &Annotation| a.score.unwrap_or(f64::NEG_INFINITY);
    order.sort_by(|a, b| key(b).partial_cmp(&key(a)).unwrap_or(Ordering::Equal));

    let (w, h) = (f64::from(image.width), f64::from(image.height));
    let mut shapes = Vec::with_capacity(order.len());
    for (k, d) in order.into_iter().enumerate() {
        let class = taxonomy
            .class(d.category_id)
            .ok_or(CocoError::UnknownCategory(d.category_id))?;
        let mut poly = d
            .segmentation
            .iter()
            .max_by(|a, b| a.area().total_cmp(&b.area()))
            .cloned()
            .unwrap_or_else(|| Polygon::rectangle(d.bbox));
        if poly.clamp_to(w, h) {
            log::warn!("detection {}: polygon clamped to the {}x{} image", d.id, image.width, image.height);
        }
        shapes.push(LabelMeShape {
            label: format!("{}_{}_{}", class.super_category.label_prefix(), class.name, k + 1),
            points: poly.vertices.iter().map(|p| [p.x, p.y]).collect(),
            group_id: None,
            shape_type: "polygon".to_string(),
            flags: Map::new(),
        });
    }
    Ok(LabelMeDoc {
        version: default_version(),
        flags: Map::new(),
        shapes,
        image_path: image.file_name.clone(),
        image_data: None,
        image_height: image.height,
        image_width: image.width,
    })
}

/// Reads revised LabelMe polygons back as ground-truth annotations with ids
/// starting at `first_id`.
pub fn import_labelme(doc: &LabelMeDoc, image_id: u64, taxonomy: &Taxonomy, first_id: u64) -> Result<Vec<Annotation>> {
    let mut out = Vec::with_capacity(doc.shapes.len());
    for (index, shape) in doc.shapes.iter().enumerate() {
        let bad = |reason: String| CocoError::BadShape { index, reason };
        if shape.shape_type != "polygon" {
            return Err(bad(format!("unsupported shape_type `{}`", shape.shape_type)));
        }
        let (prefix, class_name, _) =
            parse_label(&shape.label).ok_or_else(|| bad(format!("label `{}` is not super_class_k", shape.label)))?;
        let class = taxonomy
            .class_by_name(class_name)
            .ok_or_else(|| bad(format!("unknown class `{class_name}`")))?;
        if class.super_category.label_prefix() != prefix {
            return Err(bad(format!("`{prefix}` is not the super-category of `{class_name}`")));
        }
        let poly = Polygon::new(shape.points.iter().map(|p| Point2::new(p[0], p[1])).collect());
        if poly.len() < 3 {
            return Err(bad(format!("{} points", poly.len())));
        }
        let ann = Annotation::from_polygons(first_id + index as u64, image_id, class.class_id, vec![poly], None)
            .expect("polygon has vertices");
        out.push(ann);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polygon::BBox;

    fn det(id: u64, class: u32, score: f64, b: BBox) -> Annotation {
        Annotation::from_polygons(id, 3, class, vec![Polygon::rectangle(b)], Some(score)).unwrap()
    }

    #[test]
    fn label_parsing() {
        assert_eq!(parse_label("person_pedestrian_6"), Some(("person", "pedestrian", 6)));
        assert_eq!(parse_label("a_b_c_12"), Some(("a", "b_c", 12)));
        assert_eq!(parse_label("person_pedestrian"), None);
        assert_eq!(parse_label("person_pedestrian_x"), None);
    }

    #[test]
    fn single_pedestrian_label() {
        let tax = Taxonomy::opos();
        let img = ImageRecord::new(3, "frame.jpg", 1280, 720);
        let ped = tax.id_of("pedestrian").unwrap();
        let doc = export_labelme(&img, &[det(1, ped, 0.9, BBox::new(5.0, 5.0, 20.0, 50.0))], &tax).unwrap();
        assert_eq!(doc.shapes.len(), 1);
        assert_eq!(doc.shapes[0].label, "person_pedestrian_1");
        assert_eq!(doc.shapes[0].shape_type, "polygon");
        assert_eq!(doc.image_path, "frame.jpg");
    }

    #[test]
    fn zero_detections_give_no_shapes() {
        let tax = Taxonomy::opos();
        let img = ImageRecord::new(3, "frame.jpg", 1280, 720);
        assert!(export_labelme(&img, &[], &tax).unwrap().shapes.is_empty());
    }

    #[test]
    fn numbering_follows_score() {
        let tax = Taxonomy::opos();
        let img = ImageRecord::new(3, "frame.jpg", 1280, 720);
        let dog = tax.id_of("dog").unwrap();
        let cyc = tax.id_of("cyclist").unwrap();
        let dets = [
            det(1, dog, 0.6, BBox::new(0.0, 0.0, 10.0, 10.0)),
            det(2, cyc, 0.95, BBox::new(20.0, 0.0, 10.0, 10.0)),
        ];
        let doc = export_labelme(&img, &dets, &tax).unwrap();
        let labels: Vec<_> = doc.shapes.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["person_cyclist_1", "animal_dog_2"]);
    }

    #[test]
    fn wrong_image_rejected() {
        let tax = Taxonomy::opos();
        let img = ImageRecord::new(4, "frame.jpg", 1280, 720);
        let d = det(1, 3, 0.9, BBox::new(0.0, 0.0, 10.0, 10.0));
        assert!(matches!(
            export_labelme(&img, &[d], &tax),
            Err(CocoError::WrongImage { annotation_id: 1, .. })
        ));
    }

    #[test]
    fn polygons_clamped_to_image() {
        let tax = Taxonomy::opos();
        let img = ImageRecord::new(3, "frame.jpg", 100, 100);
        let d = det(1, 3, 0.9, BBox::new(90.0, 90.0, 20.0, 20.0));
        let doc = export_labelme(&img, &[d], &tax).unwrap();
        assert!(doc.shapes[0].points.iter().all(|p| p[0] <= 100.0 && p[1] <= 100.0));
    }

    #[test]
    fn reimport_rejects_mismatched_prefix() {
        let tax = Taxonomy::opos();
        let img = ImageRecord::new(3, "frame.jpg", 1280, 720);
        let mut doc = export_labelme(&img, &[det(1, 3, 0.9, BBox::new(5.0, 5.0, 20.0, 50.0))], &tax).unwrap();
        doc.shapes[0].label = "animal_pedestrian_1".into();
        assert!(matches!(import_labelme(&doc, 3, &tax, 1), Err(CocoError::BadShape { index: 0, .. })));
    }
}
