//! Builders for small evaluation fixtures.
use possense::coco::{parse_dataset, parse_detections, Annotation, Dataset, ImageRecord};
use possense::eval::{AreaRange, EvalParams, Evaluator, IouType};
use possense::polygon::{BBox, Polygon};
use possense::taxonomy::Taxonomy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn image(id: u64) -> ImageRecord {
    ImageRecord::new(id, format!("{id}.jpg"), 640, 480)
}

pub fn dataset(images: usize, gts: Vec<Annotation>) -> Dataset {
    Dataset {
        images: (1..=images as u64).map(image).collect(),
        annotations: gts,
        categories: Taxonomy::opos().categories(),
        ..Dataset::default()
    }
}

pub fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox { x, y, w, h }
}

pub fn gt_box(id: u64, img: u64, class: u32, b: BBox) -> Annotation {
    Annotation::from_polygons(id, img, class, vec![Polygon::rectangle(b)], None).unwrap()
}

pub fn det_box(id: u64, img: u64, class: u32, b: BBox, score: f64) -> Annotation {
    Annotation::from_polygons(id, img, class, vec![Polygon::rectangle(b)], Some(score)).unwrap()
}

/// Random boxes with perturbed, duplicated, confused and background detections.
pub fn random_fixture(seed: u64, images: usize) -> (Dataset, Vec<Annotation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = [1u32, 2, 3, 11];
    let (mut gts, mut dets) = (Vec::new(), Vec::new());
    for img in 1..=images as u64 {
        for _ in 0..rng.random_range(0..6) {
            let w = rng.random_range(8.0..200.0);
            let h = rng.random_range(8.0..200.0);
            let b = bx(rng.random_range(0.0..640.0 - w), rng.random_range(0.0..480.0 - h), w, h);
            let c = classes[rng.random_range(0..classes.len())];
            gts.push(gt_box(gts.len() as u64 + 1, img, c, b));
            let copies = rng.random_range(0..3);
            for _ in 0..copies {
                let s = 0.3 * rng.random::<f64>();
                let d = bx(
                    (b.x + s * w * rng.random_range(-1.0..1.0)).clamp(0.0, 640.0 - w),
                    (b.y + s * h * rng.random_range(-1.0..1.0)).clamp(0.0, 480.0 - h),
                    w,
                    h,
                );
                let dc = if rng.random_bool(0.15) { classes[rng.random_range(0..classes.len())] } else { c };
                dets.push(det_box(dets.len() as u64 + 1, img, dc, d, (rng.random::<f64>() * 100.0).round() / 100.0));
            }
        }
        for _ in 0..rng.random_range(0..3) {
            let w = rng.random_range(8.0..150.0);
            let h = rng.random_range(8.0..150.0);
            let d = bx(rng.random_range(0.0..640.0 - w), rng.random_range(0.0..480.0 - h), w, h);
            dets.push(det_box(dets.len() as u64 + 1, img, classes[rng.random_range(0..classes.len())], d, rng.random()));
        }
    }
    (dataset(images, gts), dets)
}

pub fn ladder(gt: &Dataset, dets: &[Annotation], class: u32) -> [f64; 7] {
    let t = Taxonomy::opos();
    let ev = Evaluator::new(gt, dets, IouType::Bbox, EvalParams::default()).unwrap();
    ev.class_ladder(class, &t, AreaRange::All).unwrap().aps()
}

pub fn grid_gts(n: u64, class: u32) -> Vec<Annotation> {
    (0..n).map(|k| gt_box(k + 1, 1, class, bx(10.0 + 120.0 * k as f64, 10.0, 100.0, 100.0))).collect()
}

/// Twenty simulator frames with perturbed detections; pycocotools' numbers for
/// it are frozen in `fixtures/sim20_pycocotools.json`.
pub fn sim20() -> (Dataset, Vec<Annotation>) {
    let gt = parse_dataset(include_bytes!("../fixtures/sim20_gt.json")).unwrap();
    let dets = parse_detections(include_bytes!("../fixtures/sim20_dets.json")).unwrap();
    (gt, dets)
}

pub const SIM20_PYCOCOTOOLS: &[u8] = include_bytes!("../fixtures/sim20_pycocotools.json");
