//! Per-class annotation statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use crate::coco::Dataset;
use crate::taxonomy::Taxonomy;

/// Image fields tallied as capture conditions when present.
pub const CONDITION_KEYS: [&str; 3] = ["weather", "time_of_day", "lighting"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: u32,
    pub name: String,
    pub super_category: String,
    pub count: usize,
    /// Mean polygon area, px².
    pub area_mean: Option<f64>,
    /// Population standard deviation of the area.
    pub area_std: Option<f64>,
    /// Mean bbox height over width.
    pub aspect_mean: Option<f64>,
    pub aspect_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTally {
    pub key: String,
    pub value: String,
    pub images: usize,
    pub annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub annotations: usize,
    /// In taxonomy order.
    pub per_class: Vec<ClassStats>,
    /// Annotations whose class is not in the taxonomy.
    pub unknown_class: usize,
    pub conditions: Vec<ConditionTally>,
}

fn moments(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (Some(mean), Some(v.population_std_dev()))
}

/// Counts, area and aspect moments per class.
pub fn dataset_stats(ds: &Dataset, taxonomy: &Taxonomy) -> DatasetStats {
    let mut areas: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut aspects: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut unknown_class = 0;
    for a in &ds.annotations {
        if taxonomy.class(a.category_id).is_none() {
            unknown_class += 1;
            continue;
        }
        let area = if a.has_polygon() { a.polygon_area() } else { a.area };
        areas.entry(a.category_id).or_default().push(area);
        aspects.entry(a.category_id).or_default().push(a.bbox.h / a.bbox.w);
    }
    let per_class = taxonomy
        .classes()
        .iter()
        .map(|c| {
            let ar = areas.get(&c.class_id).map(Vec::as_slice).unwrap_or(&[]);
            let asp = aspects.get(&c.class_id).map(Vec::as_slice).unwrap_or(&[]);
            let (area_mean, area_std) = moments(ar);
            let (aspect_mean, aspect_std) = moments(asp);
            ClassStats {
                class_id: c.class_id,
                name: c.name.clone(),
                super_category: c.super_category.as_str().to_string(),
                count: ar.len(),
                area_mean,
                area_std,
                aspect_mean,
                aspect_std,
            }
        })
        .collect();

    let per_image = ds.annotations_by_image();
    let mut tallies: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for img in &ds.images {
        for key in CONDITION_KEYS {
            let Some(v) = img.extra.get(key) else { continue };
            let value = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let t = tallies.entry((key.to_string(), value)).or_default();
            t.0 += 1;
            t.1 += per_image.get(&img.id).map_or(0, Vec::len);
        }
    }
    let conditions = tallies
        .into_iter()
        .map(|((key, value), (images, annotations))| ConditionTally {
            key,
            value,
            images,
            annotations,
        })
        .collect();
    DatasetStats {
        images: ds.images.len(),
        annotations: ds.annotations.len(),
        per_class,
        unknown_class,
        conditions,
    }
}
