//! Evaluation report assembly and CSV export.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::taxonomy::Taxonomy;

use super::{mean_ap, Diagnosis, Evaluation, IouType, PrCurve, Rung};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
    pub ar100: Option<f64>,
}

/// AP per rung of a ladder, keyed by rung name.
pub type LadderAps = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub area: String,
    pub overall: Option<LadderAps>,
    pub people: Option<LadderAps>,
    pub per_class: BTreeMap<String, LadderAps>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_type: IouType,
    /// Keyed by class name.
    pub per_class: BTreeMap<String, ClassReport>,
    /// Mean AP over people classes with ground truth.
    pub map_people: Option<f64>,
    pub map_overall: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ladder: Vec<LadderReport>,
}

fn ladder_aps(l: &super::Ladder) -> LadderAps {
    Rung::ALL.iter().map(|r| (r.as_str().to_string(), l.ap(*r))).collect()
}

impl EvalReport {
    pub fn new(ev: &Evaluation, taxonomy: &Taxonomy, diagnoses: &[Diagnosis]) -> Self {
        let name = |c: u32| taxonomy.name_of(c).map(str::to_string).unwrap_or_else(|| format!("class_{c}"));
        let per_class = ev
            .per_class
            .iter()
            .map(|(&c, m)| {
                (
                    name(c),
                    ClassReport {
                        class_id: c,
                        ap: m.ap,
                        ap50: m.ap50,
                        ap75: m.ap75,
                        ap_s: m.ap_small,
                        ap_m: m.ap_medium,
                        ap_l: m.ap_large,
                        ar100: m.ar100,
                    },
                )
            })
            .collect();
        let classes: Vec<u32> = ev.per_class.keys().copied().collect();
        let people: Vec<u32> = classes.iter().copied().filter(|c| taxonomy.is_people(*c)).collect();
        let ladder = diagnoses
            .iter()
            .map(|d| LadderReport {
                area: d.area.as_str().to_string(),
                overall: d.overall.as_ref().map(ladder_aps),
                people: d.people.as_ref().map(ladder_aps),
                per_class: d.per_class.iter().map(|(&c, l)| (name(c), ladder_aps(l))).collect(),
            })
            .collect();
        Self {
            iou_type: ev.iou_type,
            per_class,
            map_people: mean_ap(&ev.per_class, people).ok(),
            map_overall: mean_ap(&ev.per_class, classes).ok(),
            ladder,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per class; empty cells mark strata without ground truth.
pub fn write_summary_csv<W: Write>(mut w: W, report: &EvalReport) -> std::io::Result<()> {
    writeln!(w, "class,class_id,ap,ap50,ap75,ap_s,ap_m,ap_l,ar100")?;
    let mut rows: Vec<(&String, &ClassReport)> = report.per_class.iter().collect();
    rows.sort_by_key(|(_, r)| r.class_id);
    for (name, r) in rows {
        writeln!(
            w,
            "{name},{},{},{},{},{},{},{},{}",
            r.class_id,
            cell(r.ap),
            cell(r.ap50),
            cell(r.ap75),
            cell(r.ap_s),
            cell(r.ap_m),
            cell(r.ap_l),
            cell(r.ar100)
        )?;
    }
    Ok(())
}

/// Long-format `(curve, recall, precision)` rows for plotting.
pub fn write_pr_csv<W: Write>(mut w: W, curves: &[(String, &PrCurve)]) -> std::io::Result<()> {
    writeln!(w, "curve,recall,precision")?;
    for (label, c) in curves {
        for (r, p) in c.recall.iter().zip(&c.precision) {
            writeln!(w, "{label},{r:.2},{p:.6}")?;
        }
    }
    Ok(())
}
