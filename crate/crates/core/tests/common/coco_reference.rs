//! Line-by-line port of pycocotools' `evaluateImg` and `accumulate` for
//! bbox evaluation, kept separate from the library's implementation.
use std::collections::BTreeMap;

use possense::coco::{Annotation, Dataset};

fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let h = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let i = w * h;
    i / (a[2] * a[3] + b[2] * b[3] - i)
}

/// numpy.linspace: `start + i * step`, last element set to `stop`.
fn np_linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    let step = (stop - start) / (num - 1) as f64;
    let mut v: Vec<f64> = (0..num).map(|i| start + i as f64 * step).collect();
    v[num - 1] = stop;
    v
}

struct ImgEval {
    dt_scores: Vec<f64>,
    dt_matched: Vec<Vec<bool>>,
    dt_ignore: Vec<Vec<bool>>,
    gt_ignore: Vec<bool>,
}

fn evaluate_img(gts: &[&Annotation], dts: &[&Annotation], area: (f64, f64), thrs: &[f64]) -> Option<ImgEval> {
    if gts.is_empty() && dts.is_empty() {
        return None;
    }
    let ig: Vec<bool> = gts.iter().map(|g| g.area < area.0 || g.area > area.1).collect();
    // Stable sort: non-ignored ground truth first.
    let mut gtind: Vec<usize> = (0..gts.len()).collect();
    gtind.sort_by_key(|&i| ig[i]);
    let gt: Vec<&Annotation> = gtind.iter().map(|&i| gts[i]).collect();
    let gt_ig: Vec<bool> = gtind.iter().map(|&i| ig[i]).collect();
    let mut dtind: Vec<usize> = (0..dts.len()).collect();
    dtind.sort_by(|&a, &b| dts[b].score.unwrap().total_cmp(&dts[a].score.unwrap()));
    let dt: Vec<&Annotation> = dtind.iter().take(100).map(|&i| dts[i]).collect();
    let ious: Vec<Vec<f64>> = dt.iter().map(|d| gt.iter().map(|g| iou(&d.bbox.to_array(), &g.bbox.to_array())).collect()).collect();
    let mut dtm = vec![vec![false; dt.len()]; thrs.len()];
    let mut dt_ig = vec![vec![false; dt.len()]; thrs.len()];
    for (ti, &t) in thrs.iter().enumerate() {
        let mut gtm = vec![false; gt.len()];
        for di in 0..dt.len() {
            let mut best = t.min(1.0 - 1e-10);
            let mut m: Option<usize> = None;
            for gi in 0..gt.len() {
                if gtm[gi] {
                    continue;
                }
                if let Some(mm) = m {
                    if !gt_ig[mm] && gt_ig[gi] {
                        break;
                    }
                }
                if ious[di][gi] < best {
                    continue;
                }
                best = ious[di][gi];
                m = Some(gi);
            }
            if let Some(g) = m {
                dt_ig[ti][di] = gt_ig[g];
                dtm[ti][di] = true;
                gtm[g] = true;
            }
        }
    }
    for ti in 0..thrs.len() {
        for (di, d) in dt.iter().enumerate() {
            // loadRes sets result area to the bbox area.
            let a = d.bbox.w * d.bbox.h;
            let out = a < area.0 || a > area.1;
            dt_ig[ti][di] = dt_ig[ti][di] || (!dtm[ti][di] && out);
        }
    }
    Some(ImgEval {
        dt_scores: dt.iter().map(|d| d.score.unwrap()).collect(),
        dt_matched: dtm,
        dt_ignore: dt_ig,
        gt_ignore: gt_ig,
    })
}

/// Per class: ap, ap50, ap75, ap_small, ap_medium, ap_large, ar100.
pub fn evaluate(gt: &Dataset, dets: &[Annotation]) -> BTreeMap<u32, [Option<f64>; 7]> {
    let thrs = np_linspace(0.5, 0.95, 10);
    let rec = np_linspace(0.0, 1.0, 101);
    let areas = [(0.0, 1e10), (0.0, 32.0 * 32.0), (32.0 * 32.0, 96.0 * 96.0), (96.0 * 96.0, 1e10)];
    let mut img_ids: Vec<u64> = gt.images.iter().map(|i| i.id).collect();
    img_ids.sort();
    let mut out = BTreeMap::new();
    for cat in &gt.categories {
        let c = cat.id;
        if !gt.annotations.iter().any(|a| a.category_id == c) {
            continue;
        }
        // precision[a][t] and recall[a][t]; None where npig == 0.
        let mut prec: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; thrs.len()]; 4];
        let mut recall: Vec<Vec<Option<f64>>> = vec![vec![None; thrs.len()]; 4];
        for (ai, &area) in areas.iter().enumerate() {
            let evals: Vec<ImgEval> = img_ids
                .iter()
                .filter_map(|&im| {
                    let g: Vec<&Annotation> = gt.annotations.iter().filter(|a| a.image_id == im && a.category_id == c).collect();
                    let d: Vec<&Annotation> = dets.iter().filter(|a| a.image_id == im && a.category_id == c).collect();
                    evaluate_img(&g, &d, area, &thrs)
                })
                .collect();
            let scores: Vec<f64> = evals.iter().flat_map(|e| e.dt_scores.iter().copied()).collect();
            let mut inds: Vec<usize> = (0..scores.len()).collect();
            inds.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let npig = evals.iter().flat_map(|e| &e.gt_ignore).filter(|i| !**i).count();
            if npig == 0 {
                continue;
            }
            for ti in 0..thrs.len() {
                let m: Vec<bool> = evals.iter().flat_map(|e| e.dt_matched[ti].iter().copied()).collect();
                let ig: Vec<bool> = evals.iter().flat_map(|e| e.dt_ignore[ti].iter().copied()).collect();
                let (mut tp, mut fp) = (0.0, 0.0);
                let mut rc = Vec::new();
                let mut pr = Vec::new();
                for &i in &inds {
                    if m[i] && !ig[i] {
                        tp += 1.0;
                    }
                    if !m[i] && !ig[i] {
                        fp += 1.0;
                    }
                    rc.push(tp / npig as f64);
                    pr.push(tp / (fp + tp + f64::EPSILON));
                }
                let nd = rc.len();
                recall[ai][ti] = Some(if nd > 0 { rc[nd - 1] } else { 0.0 });
                for i in (1..nd).rev() {
                    if pr[i] > pr[i - 1] {
                        pr[i - 1] = pr[i];
                    }
                }
                let mut q = vec![0.0; rec.len()];
                for (ri, &r) in rec.iter().enumerate() {
                    let pi = rc.iter().position(|&x| x >= r).unwrap_or(nd);
                    if pi >= nd {
                        break;
                    }
                    q[ri] = pr[pi];
                }
                prec[ai][ti] = Some(q);
            }
        }
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let ap = |ai: usize, ts: &[usize]| mean(ts.iter().filter_map(|&t| prec[ai][t].clone()).flatten().collect());
        let all: Vec<usize> = (0..thrs.len()).collect();
        out.insert(
            c,
            [
                ap(0, &all),
                ap(0, &[0]),
                ap(0, &[5]),
                ap(1, &all),
                ap(2, &all),
                ap(3, &all),
                mean(recall[0].iter().flatten().copied().collect()),
            ],
        );
    }
    out
}
