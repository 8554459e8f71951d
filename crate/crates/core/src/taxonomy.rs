//! Two-level class system (super-category / class) and the class-remapping
//! treatments applied before training or evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coco::{Annotation, Category};

const OPOS_V1: &str = include_str!("../data/opos_taxonomy_v1.json");

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("malformed taxonomy JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("taxonomy has no classes")]
    Empty,
    #[error("class ids must be unique and contiguous from 1; found {0:?}")]
    NonContiguousIds(Vec<u32>),
    #[error("duplicate class name `{0}`")]
    DuplicateName(String),
    #[error("treatment `{mode}` refers to unknown class `{name}`")]
    UnknownTreatmentClass { mode: TreatmentMode, name: String },
    #[error("treatment `{mode}` is not idempotent: `{name}` maps to a class that is remapped again")]
    NotIdempotent { mode: TreatmentMode, name: String },
    #[error("annotation {annotation_id} has unknown class id {class_id}")]
    UnknownClass { annotation_id: u64, class_id: u32 },
    #[error("unknown class name `{0}`")]
    UnknownClassName(String),
    #[error("unknown treatment `{0}` (expected merging, filtering or separating)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuperCategory {
    People,
    Vehicle,
    Accessory,
    Animal,
}

impl SuperCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::People => "people",
            Self::Vehicle => "vehicle",
            Self::Accessory => "accessory",
            Self::Animal => "animal",
        }
    }

    /// Prefix used in LabelMe labels, e.g. `person_pedestrian_6`.
    pub fn label_prefix(self) -> &'static str {
        match self {
            Self::People => "person",
            other => other.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub class_id: u32,
    pub name: String,
    pub super_category: SuperCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentMode {
    Merging,
    Filtering,
    Separating,
}

impl TreatmentMode {
    pub const ALL: [TreatmentMode; 3] = [Self::Merging, Self::Filtering, Self::Separating];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Merging => "merging",
            Self::Filtering => "filtering",
            Self::Separating => "separating",
        }
    }
}

impl fmt::Display for TreatmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TreatmentMode {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "merging" => Ok(Self::Merging),
            "filtering" => Ok(Self::Filtering),
            "separating" => Ok(Self::Separating),
            other => Err(TaxonomyError::UnknownMode(other.to_string())),
        }
    }
}

/// A total class remapping. Classes absent from the underlying table map to
/// themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Treatment {
    pub mode: TreatmentMode,
    remap: BTreeMap<u32, u32>,
}

impl Treatment {
    /// Remapped id, or `None` for ids outside the taxonomy.
    pub fn map(&self, class_id: u32) -> Option<u32> {
        self.remap.get(&class_id).copied()
    }

    /// The full `class_id -> class_id` table.
    pub fn table(&self) -> &BTreeMap<u32, u32> {
        &self.remap
    }

    /// Distinct ids in the image of the remap.
    pub fn effective_classes(&self) -> BTreeSet<u32> {
        self.remap.values().copied().collect()
    }
}

/// Number of distinct classes left after a treatment.
pub fn effective_class_count(treatment: &Treatment) -> usize {
    treatment.effective_classes().len()
}

/// Remaps every annotation's class; geometry and order are untouched.
pub fn apply_treatment(annotations: &[Annotation], treatment: &Treatment) -> Result<Vec<Annotation>, TaxonomyError> {
    annotations
        .iter()
        .map(|a| {
            let class_id = treatment.map(a.category_id).ok_or(TaxonomyError::UnknownClass {
                annotation_id: a.id,
                class_id: a.category_id,
            })?;
            Ok(Annotation {
                category_id: class_id,
                ..a.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaxonomyDoc {
    version: String,
    classes: Vec<ClassDef>,
    #[serde(default)]
    treatments: BTreeMap<TreatmentMode, BTreeMap<String, String>>,
}

/// A validated class taxonomy with its treatment tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    doc: TaxonomyDoc,
    treatments: BTreeMap<TreatmentMode, Treatment>,
}

impl Taxonomy {
    /// The shipped 15-class, four-super-category taxonomy.
    pub fn opos() -> Self {
        Self::from_json(OPOS_V1.as_bytes()).expect("shipped taxonomy is valid")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, TaxonomyError> {
        let doc: TaxonomyDoc = serde_json::from_slice(bytes)?;
        Self::from_doc(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("taxonomy serializes")
    }

    fn from_doc(mut doc: TaxonomyDoc) -> Result<Self, TaxonomyError> {
        if doc.classes.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        doc.classes.sort_by_key(|c| c.class_id);
        let ids: Vec<u32> = doc.classes.iter().map(|c| c.class_id).collect();
        if ids.iter().zip(1u32..).any(|(&id, want)| id != want) {
            return Err(TaxonomyError::NonContiguousIds(ids));
        }
        let mut by_name = BTreeMap::new();
        for c in &doc.classes {
            if by_name.insert(c.name.clone(), c.class_id).is_some() {
                return Err(TaxonomyError::DuplicateName(c.name.clone()));
            }
        }
        let mut treatments = BTreeMap::new();
        for mode in TreatmentMode::ALL {
            let mut remap: BTreeMap<u32, u32> = ids.iter().map(|&id| (id, id)).collect();
            for (from, to) in doc.treatments.get(&mode).into_iter().flatten() {
                let lookup = |name: &String| {
                    by_name.get(name).copied().ok_or_else(|| TaxonomyError::UnknownTreatmentClass {
                        mode,
                        name: name.clone(),
                    })
                };
                remap.insert(lookup(from)?, lookup(to)?);
            }
            for (&from, &to) in &remap {
                if remap[&to] != to {
                    let name = doc.classes[(from - 1) as usize].name.clone();
                    return Err(TaxonomyError::NotIdempotent { mode, name });
                }
            }
            treatments.insert(mode, Treatment { mode, remap });
        }
        Ok(Self { doc, treatments })
    }

    pub fn version(&self) -> &str {
        &self.doc.version
    }

    /// Classes in id order.
    pub fn classes(&self) -> &[ClassDef] {
        &self.doc.classes
    }

    pub fn class(&self, class_id: u32) -> Option<&ClassDef> {
        class_id
            .checked_sub(1)
            .and_then(|i| self.doc.classes.get(i as usize))
    }

    pub fn class_by_name(&self, name: &str) -> Option<&ClassDef> {
        self.doc.classes.iter().find(|c| c.name == name)
    }

    pub fn id_of(&self, name: &str) -> Result<u32, TaxonomyError> {
        self.class_by_name(name)
            .map(|c| c.class_id)
            .ok_or_else(|| TaxonomyError::UnknownClassName(name.to_string()))
    }

    pub fn name_of(&self, class_id: u32) -> Option<&str> {
        self.class(class_id).map(|c| c.name.as_str())
    }

    pub fn super_category(&self, class_id: u32) -> Option<SuperCategory> {
        self.class(class_id).map(|c| c.super_category)
    }

    pub fn is_people(&self, class_id: u32) -> bool {
        self.super_category(class_id) == Some(SuperCategory::People)
    }

    pub fn people_ids(&self) -> BTreeSet<u32> {
        self.doc
            .classes
            .iter()
            .filter(|c| c.super_category == SuperCategory::People)
            .map(|c| c.class_id)
            .collect()
    }

    pub fn treatment(&self, mode: TreatmentMode) -> &Treatment {
        &self.treatments[&mode]
    }

    /// COCO category records for this taxonomy.
    pub fn categories(&self) -> Vec<Category> {
        self.doc
            .classes
            .iter()
            .map(|c| Category {
                id: c.class_id,
                name: c.name.clone(),
                supercategory: c.super_category.as_str().to_string(),
                extra: Default::default(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polygon::BBox;

    fn ann(id: u64, class: u32) -> Annotation {
        Annotation::from_bbox(id, 1, class, BBox::new(1.0, 2.0, 3.0, 4.0), None)
    }

    #[test]
    fn shipped_taxonomy_shape() {
        let t = Taxonomy::opos();
        assert_eq!(t.classes().len(), 15);
        assert_eq!(t.people_ids().len(), 10);
        let supers: BTreeSet<_> = t.classes().iter().map(|c| c.super_category).collect();
        assert_eq!(supers.len(), 4);
        assert_eq!(t.version(), "opos-1");
    }

    #[test]
    fn pedpart_merges_into_pedestrian() {
        let t = Taxonomy::opos();
        let tr = t.treatment(TreatmentMode::Merging);
        let out = apply_treatment(&[ann(1, t.id_of("pedpart").unwrap())], tr).unwrap();
        assert_eq!(t.name_of(out[0].category_id), Some("pedestrian"));
    }

    #[test]
    fn cycpart_filters_into_peopleother() {
        let t = Taxonomy::opos();
        let tr = t.treatment(TreatmentMode::Filtering);
        let out = apply_treatment(&[ann(1, t.id_of("cycpart").unwrap())], tr).unwrap();
        assert_eq!(t.name_of(out[0].category_id), Some("peopleother"));
    }

    #[test]
    fn non_part_classes_unchanged() {
        let t = Taxonomy::opos();
        let input = vec![ann(1, t.id_of("cyclist").unwrap()), ann(2, t.id_of("dog").unwrap())];
        for mode in TreatmentMode::ALL {
            assert_eq!(apply_treatment(&input, t.treatment(mode)).unwrap(), input);
        }
    }

    #[test]
    fn effective_counts_from_table() {
        // Counted from the shipped table: merging and filtering each fold four
        // classes away, separating folds roller and peoplelying only.
        let t = Taxonomy::opos();
        assert_eq!(effective_class_count(t.treatment(TreatmentMode::Merging)), 11);
        assert_eq!(effective_class_count(t.treatment(TreatmentMode::Filtering)), 11);
        assert_eq!(effective_class_count(t.treatment(TreatmentMode::Separating)), 13);
    }

    #[test]
    fn unknown_class_names_annotation() {
        let t = Taxonomy::opos();
        let err = apply_treatment(&[ann(42, 99)], t.treatment(TreatmentMode::Merging)).unwrap_err();
        assert!(matches!(err, TaxonomyError::UnknownClass { annotation_id: 42, class_id: 99 }));
    }

    #[test]
    fn json_round_trip() {
        let t = Taxonomy::opos();
        let back = Taxonomy::from_json(t.to_json().as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_gaps_and_chains() {
        let gap = r#"{"version":"x","classes":[
            {"class_id":1,"name":"a","super_category":"people"},
            {"class_id":3,"name":"b","super_category":"people"}]}"#;
        assert!(matches!(
            Taxonomy::from_json(gap.as_bytes()),
            Err(TaxonomyError::NonContiguousIds(_))
        ));
        let chain = r#"{"version":"x","classes":[
            {"class_id":1,"name":"a","super_category":"people"},
            {"class_id":2,"name":"b","super_category":"people"},
            {"class_id":3,"name":"c","super_category":"people"}],
            "treatments":{"merging":{"a":"b","b":"c"}}}"#;
        assert!(matches!(
            Taxonomy::from_json(chain.as_bytes()),
            Err(TaxonomyError::NotIdempotent { .. })
        ));
    }

    #[test]
    fn label_prefix_for_people_is_person() {
        assert_eq!(SuperCategory::People.label_prefix(), "person");
        assert_eq!(SuperCategory::Animal.label_prefix(), "animal");
    }
}
