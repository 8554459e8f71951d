//! COCO-style detection evaluation, PR error diagnosis and dataset statistics.
//!
//! Protocol: per image and class, detections sorted by score (stable) and
//! truncated to `max_dets`; greedy matching at each IoU threshold; 101-point
//! interpolated precision; ground truth outside an area stratum is ignored and
//! unmatched detections outside it are dropped.

mod diagnosis;
mod iou;
mod report;
mod stats;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco::{Annotation, Dataset};
use crate::polygon::BBox;

pub use diagnosis::{diagnose, Diagnosis, Ladder, Rung, DIAGNOSIS_IOU};
pub use iou::{iou_bbox, iou_mask, SpanMask};
pub use report::{write_pr_csv, write_summary_csv, ClassReport, EvalReport};
pub use stats::{dataset_stats, ClassStats, ConditionTally, DatasetStats, CONDITION_KEYS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("box has non-positive width or height")]
    DegenerateBox,
    #[error("polygon has fewer than 3 vertices")]
    DegeneratePolygon,
    #[error("polygon lies entirely outside the image")]
    PolygonOutsideImage,
    #[error("annotation {annotation_id}: {reason}")]
    Annotation { annotation_id: u64, reason: String },
    #[error("detection {annotation_id} references image {image_id} absent from the ground truth")]
    UnknownImage { annotation_id: u64, image_id: u64 },
    #[error("detection {annotation_id} has no score")]
    MissingScore { annotation_id: u64 },
    #[error("no class in the subset has a defined AP")]
    EmptySubset,
}

/// Overlap measure used for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouType {
    Bbox,
    Segm,
}

impl std::str::FromStr for IouType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bbox" => Ok(Self::Bbox),
            "segm" => Ok(Self::Segm),
            _ => Err(format!("unknown IoU type {s:?}; expected bbox or segm")),
        }
    }
}

/// Object size stratum by area in px².
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] = [Self::All, Self::Small, Self::Medium, Self::Large];

    /// Closed bounds; an area on a cutoff belongs to both neighbours.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Self::All => (0.0, 1e10),
            Self::Small => (0.0, 32.0 * 32.0),
            Self::Medium => (32.0 * 32.0, 96.0 * 96.0),
            Self::Large => (96.0 * 96.0, 1e10),
        }
    }

    pub fn contains(self, area: f64) -> bool {
        let (lo, hi) = self.bounds();
        area >= lo && area <= hi
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
        }
    }
}

/// `n` evenly spaced values from `start` to `stop`, computed as
/// `start + i * ((stop - start) / (n - 1))` with the last value pinned to `stop`.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    let step = (stop - start) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * step + start).collect();
    v[n - 1] = stop;
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub iou_thresholds: Vec<f64>,
    pub recall_thresholds: Vec<f64>,
    pub max_dets: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            iou_thresholds: linspace(0.5, 0.95, 10),
            recall_thresholds: linspace(0.0, 1.0, 101),
            max_dets: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Shape {
    Box(BBox),
    Mask(SpanMask),
}

impl Shape {
    fn iou(&self, other: &Shape) -> f64 {
        match (self, other) {
            (Shape::Box(a), Shape::Box(b)) => iou::iou_bbox_unchecked(a, b),
            (Shape::Mask(a), Shape::Mask(b)) => a.iou(b),
            _ => unreachable!("shapes of one evaluation share a type"),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Item {
    pub id: u64,
    pub class: u32,
    pub score: f64,
    /// Area used for stratum membership.
    pub area: f64,
    pub shape: Shape,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ImageData {
    pub gts: Vec<Item>,
    pub dets: Vec<Item>,
}

/// One (class, image) pair: ground truth sorted by id, detections by score.
#[derive(Debug, Clone, Default)]
pub(crate) struct Cell {
    pub gt: Vec<usize>,
    pub det: Vec<usize>,
    /// Row-major `det x gt`.
    pub ious: Vec<f64>,
}

impl Cell {
    fn iou(&self, d: usize, g: usize) -> f64 {
        self.ious[d * self.gt.len() + g]
    }
}

/// Outcome of one ranked detection at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetOutcome {
    pub score: f64,
    pub tp: bool,
    /// Left out of both counts (matched to ignored ground truth, outside the
    /// stratum, or removed by a diagnosis rung).
    pub ignored: bool,
}

/// Interpolated precision on the recall grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    /// Recall reached by all detections.
    pub max_recall: f64,
    pub ap: f64,
}

/// Precision on `recall_grid` from outcomes already in rank order. `None` when
/// there is no ground truth to recall.
pub fn pr_from_ranked(ranked: &[DetOutcome], num_gt: usize, recall_grid: &[f64]) -> Option<PrCurve> {
    if num_gt == 0 {
        return None;
    }
    let npig = num_gt as f64;
    let mut rc = Vec::with_capacity(ranked.len());
    let mut pr = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    for o in ranked {
        if !o.ignored {
            if o.tp {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        rc.push(tp / npig);
        pr.push(tp / (fp + tp + f64::EPSILON));
    }
    for i in (1..pr.len()).rev() {
        if pr[i] > pr[i - 1] {
            pr[i - 1] = pr[i];
        }
    }
    let precision: Vec<f64> = recall_grid
        .iter()
        .map(|&r| {
            let idx = rc.partition_point(|&x| x < r);
            pr.get(idx).copied().unwrap_or(0.0)
        })
        .collect();
    let ap = precision.iter().sum::<f64>() / precision.len() as f64;
    Some(PrCurve {
        recall: recall_grid.to_vec(),
        precision,
        max_recall: rc.last().copied().unwrap_or(0.0),
        ap,
    })
}

/// 101-point interpolated PR curve. Outcomes are ranked by descending score;
/// equal scores keep their input order.
pub fn pr_curve(outcomes: &[DetOutcome], num_gt: usize) -> Option<PrCurve> {
    let mut ranked = outcomes.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    pr_from_ranked(&ranked, num_gt, &linspace(0.0, 1.0, 101))
}

/// Greedy assignment. Detections are taken in the given order; each claims the
/// unmatched ground truth of highest IoU at or above `threshold`. Ground truth
/// is scanned non-ignored first, then by position, so ties go to the earlier
/// entry and an ignored match is only taken when no regular one qualifies.
pub(crate) fn greedy_match(
    n_det: usize,
    n_gt: usize,
    iou: impl Fn(usize, usize) -> f64,
    gt_ignore: &[bool],
    threshold: f64,
) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..n_gt).collect();
    order.sort_by_key(|&g| gt_ignore[g]);
    let mut taken = vec![false; n_gt];
    let floor = threshold.min(1.0 - 1e-10);
    (0..n_det)
        .map(|d| {
            let mut best: Option<usize> = None;
            let mut best_iou = floor;
            for &g in &order {
                if taken[g] {
                    continue;
                }
                if let Some(m) = best {
                    if !gt_ignore[m] && gt_ignore[g] {
                        break;
                    }
                }
                let v = iou(d, g);
                if v < best_iou || (best.is_some() && v <= best_iou) {
                    continue;
                }
                best_iou = v;
                best = Some(g);
            }
            if let Some(g) = best {
                taken[g] = true;
            }
            best
        })
        .collect()
}

/// One detection's assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub det_id: u64,
    pub gt_id: Option<u64>,
    /// IoU with the matched ground truth, or the best IoU over all ground
    /// truth when unmatched.
    pub iou: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// In descending score order.
    pub pairs: Vec<MatchPair>,
    /// Ground-truth ids left unmatched.
    pub unmatched_gt: Vec<u64>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.gt_id.is_some()).count()
    }

    pub fn outcomes(&self) -> Vec<DetOutcome> {
        self.pairs
            .iter()
            .map(|p| DetOutcome {
                score: p.score,
                tp: p.gt_id.is_some(),
                ignored: false,
            })
            .collect()
    }
}

/// Greedy matching of one image's detections to its ground truth of one class.
/// Ties in IoU go to the lower ground-truth id.
pub fn match_detections(
    gt: &[&Annotation],
    dets: &[&Annotation],
    iou_fn: impl Fn(&Annotation, &Annotation) -> f64,
    threshold: f64,
) -> MatchResult {
    let mut gt: Vec<&Annotation> = gt.to_vec();
    gt.sort_by_key(|a| a.id);
    let mut dets: Vec<&Annotation> = dets.to_vec();
    dets.sort_by(|a, b| b.score.unwrap_or(0.0).total_cmp(&a.score.unwrap_or(0.0)));
    let ious: Vec<Vec<f64>> = dets.iter().map(|d| gt.iter().map(|g| iou_fn(d, g)).collect()).collect();
    let assign = greedy_match(dets.len(), gt.len(), |d, g| ious[d][g], &vec![false; gt.len()], threshold);
    let mut matched = vec![false; gt.len()];
    let pairs = dets
        .iter()
        .zip(&assign)
        .enumerate()
        .map(|(d, (det, m))| {
            if let Some(g) = m {
                matched[*g] = true;
            }
            MatchPair {
                det_id: det.id,
                gt_id: m.map(|g| gt[g].id),
                iou: match m {
                    Some(g) => ious[d][*g],
                    None => ious[d].iter().copied().fold(0.0, f64::max),
                },
                score: det.score.unwrap_or(0.0),
            }
        })
        .collect();
    let unmatched_gt = gt.iter().zip(&matched).filter(|(_, m)| !**m).map(|(g, _)| g.id).collect();
    MatchResult { pairs, unmatched_gt }
}

/// COCO summary for one class. `None` marks a stratum without ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar100: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub iou_type: IouType,
    pub params: EvalParams,
    pub per_class: BTreeMap<u32, ClassMetrics>,
    /// Curves at every IoU threshold for the `all` stratum, per class.
    pub curves: BTreeMap<u32, Vec<PrCurve>>,
}

impl Evaluation {
    /// Unweighted mean AP over the classes of `subset` with a defined AP.
    pub fn mean_ap(&self, subset: impl IntoIterator<Item = u32>) -> Result<f64, EvalError> {
        mean_ap(&self.per_class, subset)
    }
}

/// Unweighted mean of the defined APs of `subset`.
pub fn mean_ap(per_class: &BTreeMap<u32, ClassMetrics>, subset: impl IntoIterator<Item = u32>) -> Result<f64, EvalError> {
    let aps: Vec<f64> = subset.into_iter().filter_map(|c| per_class.get(&c).and_then(|m| m.ap)).collect();
    if aps.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Prepared ground truth and detections for one evaluation.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub(crate) iou_type: IouType,
    pub(crate) params: EvalParams,
    pub(crate) classes: Vec<u32>,
    pub(crate) images: Vec<ImageData>,
    /// Keyed by `(class, image index)`.
    pub(crate) cells: BTreeMap<(u32, usize), Cell>,
}

fn make_item(a: &Annotation, size: (u32, u32), iou_type: IouType, is_det: bool) -> Result<Item, EvalError> {
    let fail = |reason: String| EvalError::Annotation {
        annotation_id: a.id,
        reason,
    };
    let (shape, det_area) = match iou_type {
        IouType::Bbox => {
            if !a.bbox.is_valid() {
                return Err(fail("box has non-positive width or height".into()));
            }
            (Shape::Box(a.bbox), a.bbox.area())
        }
        IouType::Segm => {
            if !a.has_polygon() {
                return Err(fail("segm evaluation needs a polygon".into()));
            }
            let m = SpanMask::rasterize(&a.segmentation, size.0, size.1).map_err(|e| fail(e.to_string()))?;
            (Shape::Mask(m), a.polygon_area())
        }
    };
    let score = if is_det {
        a.score.ok_or(EvalError::MissingScore { annotation_id: a.id })?
    } else {
        1.0
    };
    Ok(Item {
        id: a.id,
        class: a.category_id,
        score,
        // Ground truth is stratified by its stored area, detections by their geometry.
        area: if is_det { det_area } else { a.area },
        shape,
    })
}

impl Evaluator {
    /// Prepares an evaluation over every image and category of `gt`.
    pub fn new(gt: &Dataset, dets: &[Annotation], iou_type: IouType, params: EvalParams) -> Result<Self, EvalError> {
        let mut images: Vec<&crate::coco::ImageRecord> = gt.images.iter().collect();
        images.sort_by_key(|i| i.id);
        let index: BTreeMap<u64, usize> = images.iter().enumerate().map(|(k, i)| (i.id, k)).collect();
        let mut gt_by: Vec<Vec<&Annotation>> = vec![Vec::new(); images.len()];
        for a in &gt.annotations {
            if let Some(&k) = index.get(&a.image_id) {
                gt_by[k].push(a);
            }
        }
        let mut det_by: Vec<Vec<&Annotation>> = vec![Vec::new(); images.len()];
        for d in dets {
            let k = *index.get(&d.image_id).ok_or(EvalError::UnknownImage {
                annotation_id: d.id,
                image_id: d.image_id,
            })?;
            det_by[k].push(d);
        }
        let images = images
            .par_iter()
            .zip(gt_by.par_iter().zip(det_by.par_iter()))
            .map(|(img, (g, d))| {
                let size = (img.width, img.height);
                Ok(ImageData {
                    gts: g.iter().map(|a| make_item(a, size, iou_type, false)).collect::<Result<_, _>>()?,
                    dets: d.iter().map(|a| make_item(a, size, iou_type, true)).collect::<Result<_, _>>()?,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let mut classes: Vec<u32> = gt.categories.iter().map(|c| c.id).collect();
        classes.sort_unstable();
        classes.dedup();
        let max_dets = params.max_dets;
        let cells: BTreeMap<(u32, usize), Cell> = images
            .par_iter()
            .enumerate()
            .flat_map_iter(|(k, img)| {
                let mut by_class: BTreeMap<u32, Cell> = BTreeMap::new();
                for (i, g) in img.gts.iter().enumerate() {
                    by_class.entry(g.class).or_default().gt.push(i);
                }
                for (i, d) in img.dets.iter().enumerate() {
                    by_class.entry(d.class).or_default().det.push(i);
                }
                by_class.into_iter().map(move |(class, mut cell)| {
                    cell.gt.sort_by_key(|&i| img.gts[i].id);
                    cell.det.sort_by(|&a, &b| img.dets[b].score.total_cmp(&img.dets[a].score));
                    cell.det.truncate(max_dets);
                    cell.ious = cell
                        .det
                        .iter()
                        .flat_map(|&d| cell.gt.iter().map(move |&g| img.dets[d].shape.iou(&img.gts[g].shape)))
                        .collect();
                    ((class, k), cell)
                })
            })
            .collect();
        Ok(Self {
            iou_type,
            params,
            classes,
            images,
            cells,
        })
    }

    pub fn iou_type(&self) -> IouType {
        self.iou_type
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub(crate) fn class_cells(&self, class: u32) -> impl Iterator<Item = (usize, &Cell)> {
        self.cells.range((class, 0)..=(class, usize::MAX)).map(|((_, k), c)| (*k, c))
    }

    /// Per-cell outcomes in cell order, and the count of non-ignored ground truth.
    pub(crate) fn cell_outcomes(&self, k: usize, cell: &Cell, threshold: f64, area: AreaRange) -> (Vec<DetOutcome>, Vec<Option<usize>>, usize) {
        let img = &self.images[k];
        let gt_ignore: Vec<bool> = cell.gt.iter().map(|&g| !area.contains(img.gts[g].area)).collect();
        let assign = greedy_match(cell.det.len(), cell.gt.len(), |d, g| cell.iou(d, g), &gt_ignore, threshold);
        let outcomes = cell
            .det
            .iter()
            .zip(&assign)
            .map(|(&d, m)| {
                let det = &img.dets[d];
                DetOutcome {
                    score: det.score,
                    tp: m.is_some(),
                    ignored: match m {
                        Some(g) => gt_ignore[*g],
                        None => !area.contains(det.area),
                    },
                }
            })
            .collect();
        let npig = gt_ignore.iter().filter(|i| !**i).count();
        (outcomes, assign, npig)
    }

    /// Ranks per-image outcomes across the dataset: descending score, ties in
    /// image order then in-image rank.
    pub(crate) fn rank(per_image: Vec<Vec<DetOutcome>>) -> Vec<DetOutcome> {
        let mut all: Vec<DetOutcome> = per_image.into_iter().flatten().collect();
        all.sort_by(|a, b| b.score.total_cmp(&a.score));
        all
    }

    /// PR curve of one class at one threshold and stratum.
    pub fn class_curve(&self, class: u32, threshold: f64, area: AreaRange) -> Option<PrCurve> {
        let mut per_image = Vec::new();
        let mut npig = 0;
        for (k, cell) in self.class_cells(class) {
            let (o, _, n) = self.cell_outcomes(k, cell, threshold, area);
            per_image.push(o);
            npig += n;
        }
        pr_from_ranked(&Self::rank(per_image), npig, &self.params.recall_thresholds)
    }

    fn class_metrics(&self, class: u32) -> (ClassMetrics, Vec<PrCurve>) {
        let thr = &self.params.iou_thresholds;
        let curves_for = |area: AreaRange| -> Vec<Option<PrCurve>> { thr.iter().map(|&t| self.class_curve(class, t, area)).collect() };
        let mean_ap = |cs: &[Option<PrCurve>]| -> Option<f64> {
            let v: Vec<f64> = cs.iter().filter_map(|c| c.as_ref().map(|c| c.ap)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let at = |cs: &[Option<PrCurve>], t: f64| -> Option<f64> {
            thr.iter()
                .position(|&x| (x - t).abs() < 1e-9)
                .and_then(|i| cs[i].as_ref().map(|c| c.ap))
        };
        let all = curves_for(AreaRange::All);
        let recalls: Vec<f64> = all.iter().filter_map(|c| c.as_ref().map(|c| c.max_recall)).collect();
        let metrics = ClassMetrics {
            ap: mean_ap(&all),
            ap50: at(&all, 0.5),
            ap75: at(&all, 0.75),
            ap_small: mean_ap(&curves_for(AreaRange::Small)),
            ap_medium: mean_ap(&curves_for(AreaRange::Medium)),
            ap_large: mean_ap(&curves_for(AreaRange::Large)),
            ar100: (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64),
        };
        (metrics, all.into_iter().flatten().collect())
    }

    pub fn evaluate(&self) -> Evaluation {
        let results: Vec<(u32, ClassMetrics, Vec<PrCurve>)> = self
            .classes
            .par_iter()
            .map(|&c| {
                let (m, curves) = self.class_metrics(c);
                (c, m, curves)
            })
            .collect();
        let mut per_class = BTreeMap::new();
        let mut curves = BTreeMap::new();
        for (c, m, cs) in results {
            per_class.insert(c, m);
            curves.insert(c, cs);
        }
        Evaluation {
            iou_type: self.iou_type,
            params: self.params.clone(),
            per_class,
            curves,
        }
    }
}

/// Evaluates detections against ground truth with the COCO defaults.
pub fn evaluate(gt: &Dataset, dets: &[Annotation], iou_type: IouType) -> Result<Evaluation, EvalError> {
    Ok(Evaluator::new(gt, dets, iou_type, EvalParams::default())?.evaluate())
}

/// COCO metrics for a single class.
pub fn coco_ap(gt: &Dataset, dets: &[Annotation], class: u32, iou_type: IouType) -> Result<ClassMetrics, EvalError> {
    let ev = evaluate(gt, dets, iou_type)?;
    Ok(ev.per_class.get(&class).copied().unwrap_or(ClassMetrics {
        ap: None,
        ap50: None,
        ap75: None,
        ap_small: None,
        ap_medium: None,
        ap_large: None,
        ar100: None,
    }))
}
