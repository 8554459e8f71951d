//! Progressive PR error diagnosis.
//!
//! Rungs, each at least as forgiving as the one before:
//! C75 and C50 are the curves at IoU 0.75 and 0.5; Loc matches at IoU 0.1;
//! Sim additionally drops false positives overlapping ground truth of another
//! class in the same super-category; Oth drops those overlapping any other
//! class; BG drops every remaining false positive; FN has precision 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coco::{Annotation, Dataset};
use crate::taxonomy::Taxonomy;

use super::{AreaRange, EvalError, EvalParams, Evaluator, IouType, PrCurve};

/// Overlap that counts as localized for Loc and as a confusion for Sim/Oth.
pub const DIAGNOSIS_IOU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rung {
    C75,
    C50,
    Loc,
    Sim,
    Oth,
    BG,
    FN,
}

impl Rung {
    pub const ALL: [Rung; 7] = [Self::C75, Self::C50, Self::Loc, Self::Sim, Self::Oth, Self::BG, Self::FN];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::C75 => "C75",
            Self::C50 => "C50",
            Self::Loc => "Loc",
            Self::Sim => "Sim",
            Self::Oth => "Oth",
            Self::BG => "BG",
            Self::FN => "FN",
        }
    }
}

/// Seven PR curves in rung order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub curves: BTreeMap<Rung, PrCurve>,
}

impl Ladder {
    pub fn ap(&self, rung: Rung) -> f64 {
        self.curves[&rung].ap
    }

    pub fn aps(&self) -> [f64; 7] {
        Rung::ALL.map(|r| self.ap(r))
    }

    pub fn is_monotone(&self) -> bool {
        let a = self.aps();
        a.windows(2).all(|w| w[0] <= w[1]) && a[6] == 1.0
    }

    /// Rung-wise mean of precision over several ladders.
    pub fn mean<'a>(ladders: impl IntoIterator<Item = &'a Ladder>) -> Option<Ladder> {
        let ladders: Vec<&Ladder> = ladders.into_iter().collect();
        let first = ladders.first()?;
        let n = ladders.len() as f64;
        let curves = Rung::ALL
            .iter()
            .map(|&r| {
                let len = first.curves[&r].precision.len();
                let precision: Vec<f64> = (0..len)
                    .map(|i| ladders.iter().map(|l| l.curves[&r].precision[i]).sum::<f64>() / n)
                    .collect();
                let ap = precision.iter().sum::<f64>() / len as f64;
                let max_recall = ladders.iter().map(|l| l.curves[&r].max_recall).sum::<f64>() / n;
                (
                    r,
                    PrCurve {
                        recall: first.curves[&r].recall.clone(),
                        precision,
                        max_recall,
                        ap,
                    },
                )
            })
            .collect();
        Some(Ladder { curves })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub area: AreaRange,
    /// Classes with ground truth in the stratum.
    pub per_class: BTreeMap<u32, Ladder>,
    pub people: Option<Ladder>,
    pub overall: Option<Ladder>,
}

#[derive(Debug, Clone, Copy)]
enum Removal<'a> {
    None,
    SameSuper(&'a Taxonomy),
    AnyClass,
    AllFalsePositives,
}

impl Evaluator {
    fn rung_curve(&self, class: u32, threshold: f64, area: AreaRange, removal: Removal<'_>) -> Option<PrCurve> {
        let mut per_image = Vec::new();
        let mut npig = 0;
        for (k, cell) in self.class_cells(class) {
            let (mut outcomes, _, n) = self.cell_outcomes(k, cell, threshold, area);
            npig += n;
            let img = &self.images[k];
            for (o, &d) in outcomes.iter_mut().zip(&cell.det) {
                if o.tp || o.ignored {
                    continue;
                }
                let confused = |other: &dyn Fn(u32) -> bool| {
                    img.gts
                        .iter()
                        .any(|g| g.class != class && other(g.class) && img.dets[d].shape.iou(&g.shape) >= DIAGNOSIS_IOU)
                };
                o.ignored = match removal {
                    Removal::None => false,
                    Removal::SameSuper(tax) => {
                        let sc = tax.super_category(class);
                        confused(&|c| sc.is_some() && tax.super_category(c) == sc)
                    }
                    Removal::AnyClass => confused(&|_| true),
                    Removal::AllFalsePositives => true,
                };
            }
            per_image.push(outcomes);
        }
        super::pr_from_ranked(&Self::rank(per_image), npig, &self.params.recall_thresholds)
    }

    /// Ladder for one class; `None` without ground truth in the stratum.
    pub fn class_ladder(&self, class: u32, taxonomy: &Taxonomy, area: AreaRange) -> Option<Ladder> {
        let c75 = self.rung_curve(class, 0.75, area, Removal::None)?;
        let c50 = self.rung_curve(class, 0.5, area, Removal::None)?;
        let loc = self.rung_curve(class, DIAGNOSIS_IOU, area, Removal::None)?;
        let sim = self.rung_curve(class, DIAGNOSIS_IOU, area, Removal::SameSuper(taxonomy))?;
        let oth = self.rung_curve(class, DIAGNOSIS_IOU, area, Removal::AnyClass)?;
        let bg = self.rung_curve(class, DIAGNOSIS_IOU, area, Removal::AllFalsePositives)?;
        let n = self.params.recall_thresholds.len();
        let fn_curve = PrCurve {
            recall: self.params.recall_thresholds.clone(),
            precision: vec![1.0; n],
            max_recall: 1.0,
            ap: 1.0,
        };
        let curves = Rung::ALL.into_iter().zip([c75, c50, loc, sim, oth, bg, fn_curve]).collect();
        Some(Ladder { curves })
    }

    pub fn diagnose(&self, taxonomy: &Taxonomy, area: AreaRange) -> Diagnosis {
        use rayon::prelude::*;
        let per_class: BTreeMap<u32, Ladder> = self
            .classes
            .par_iter()
            .filter_map(|&c| self.class_ladder(c, taxonomy, area).map(|l| (c, l)))
            .collect();
        let people = Ladder::mean(per_class.iter().filter(|(c, _)| taxonomy.is_people(**c)).map(|(_, l)| l));
        let overall = Ladder::mean(per_class.values());
        Diagnosis {
            area,
            per_class,
            people,
            overall,
        }
    }
}

/// Diagnosis ladders over all classes with ground truth.
pub fn diagnose(
    gt: &Dataset,
    dets: &[Annotation],
    taxonomy: &Taxonomy,
    iou_type: IouType,
    area: AreaRange,
) -> Result<Diagnosis, EvalError> {
    Ok(Evaluator::new(gt, dets, iou_type, EvalParams::default())?.diagnose(taxonomy, area))
}
