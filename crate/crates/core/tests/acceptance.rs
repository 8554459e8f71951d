//! Acceptance gate: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::time::Instant;

use common::coco_reference;
use common::eval_fixtures::*;
use common::edge_probe;
use nalgebra::{Vector2, Vector3};
use possense::camera::*;
use possense::coco::*;
use possense::density::*;
use possense::eval::*;
use possense::mapping::{locate, map_frames, GroundObservation, MapContext, MapExtent};
use possense::polygon::{BBox, Point2, Polygon};
use possense::sim::*;
use possense::taxonomy::{apply_treatment, effective_class_count, Taxonomy, TreatmentMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("calibration and ground mapping on Cullen-style rigs", c1_calibration),
        ("simulator agents mapped by locate", c2_locate),
        ("projection round trips and Jacobians", c3_projection),
        ("COCO AP against reference implementations", c4_coco_ap),
        ("diagnosis ladder", c5_ladder),
        ("taxonomy treatments", c6_taxonomy),
        ("density rasters", c7_density),
        ("formats, annotation assist and split", c8_formats),
        ("eval + mapping throughput", c9_throughput),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += usize::from(!o.pass);
        println!("criterion {}: {} - {name}: {}", k + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn c1_calibration() -> Outcome {
    let start = Instant::now();
    let (mut good, mut worst_noiseless, mut means) = (0, 0.0f64, Vec::new());
    for seed in 0..100u64 {
        let (cam, extent) = cullen_rig(seed);
        let exact = ground_references(&cam, &extent, 19, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let noisy: Vec<Correspondence> = exact
            .iter()
            .map(|c| Correspondence::new(c.world(), c.pixel() + 0.5 * Vector2::new(gauss(&mut rng), gauss(&mut rng))))
            .collect();
        let err = |refs: &[Correspondence]| -> f64 {
            let sol = solve_extrinsics(&cam.intrinsics, &cam.distortion, refs, &LmOptions::default()).unwrap();
            let solved = camera_from_solution(cam.intrinsics, cam.distortion, &sol, cam.image_size).unwrap();
            ground_mapping_error(&solved, refs).unwrap().mean_m
        };
        let e = err(&noisy);
        means.push(e);
        good += usize::from(e < 0.10);
        worst_noiseless = worst_noiseless.max(err(&exact));
    }
    let secs = start.elapsed().as_secs_f64();
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    outcome(
        good >= 95 && worst_noiseless < 1e-6 && secs < 10.0,
        format!("{good}/100 seeds < 10 cm (average {:.2} cm), noiseless max {worst_noiseless:.1e} m, {secs:.2} s", avg * 100.0),
    )
}

fn c2_locate() -> Outcome {
    let t = Taxonomy::opos();
    let treatment = t.treatment(TreatmentMode::Separating);
    let sigmas = [0.0, 0.5, 1.0, 2.0];
    let mut errs = Vec::new();
    for &sigma in &sigmas {
        let (mut sum, mut n) = (0.0, 0usize);
        for seed in 0..20u64 {
            let (cam, extent) = cullen_rig(seed);
            let noise = NoiseSpec {
                pixel_sigma: sigma,
                ..NoiseSpec::NONE
            };
            let s = scatter_scenario(&cam, extent, 100, noise, seed, &t);
            let out = render_detections(&s, &t).unwrap();
            for (d, truth) in out.detections.iter().zip(&out.truth) {
                let o = locate(d, &cam, treatment, 0.0).unwrap();
                sum += (o.x - truth.observation.x).hypot(o.y - truth.observation.y);
                n += 1;
            }
        }
        errs.push(sum / n as f64);
    }
    let monotone = errs.windows(2).all(|w| w[0] <= w[1]);
    let cm: Vec<String> = sigmas.iter().zip(&errs).map(|(s, e)| format!("{s} px: {:.2} cm", e * 100.0)).collect();
    outcome(errs[2] < 0.10 && monotone, format!("{} over 20 x 100 agents, monotone {monotone}", cm.join(", ")))
}

fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
    let eye = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-15.0..-5.0), rng.random_range(3.0..10.0));
    let target = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(2.0..12.0), 0.0);
    let f = rng.random_range(800.0..1400.0);
    let intr = Intrinsics::new(f, f * rng.random_range(0.98..1.02), rng.random_range(600.0..680.0), rng.random_range(330.0..390.0));
    let d = Distortion {
        k1: rng.random_range(-0.25..0.1),
        k2: rng.random_range(-0.05..0.05),
        k3: rng.random_range(-0.01..0.01),
        p1: rng.random_range(-1e-3..1e-3),
        p2: rng.random_range(-1e-3..1e-3),
    };
    CameraModel::new(intr, d, Pose::look_at(eye, target).unwrap(), (1280, 720)).unwrap()
}

/// The radial profile `r (1 + k1 r^2 + k2 r^4 + k3 r^6)` is increasing on
/// `[0, r]`. Beyond its first fold a pixel has two preimages and the lens
/// model is not invertible.
fn inside_first_fold(d: &Distortion, r: f64) -> bool {
    (0..=200).all(|s| {
        let q = r * f64::from(s) / 200.0;
        let q2 = q * q;
        1.0 + 3.0 * d.k1 * q2 + 5.0 * d.k2 * q2 * q2 + 7.0 * d.k3 * q2 * q2 * q2 > 0.0
    })
}

/// Frobenius-norm relative difference between an analytic Jacobian and
/// central differences of `f` over `params`.
fn jacobian_gap<const N: usize>(analytic: &nalgebra::SMatrix<f64, 2, N>, params: [f64; N], f: impl Fn(&[f64; N]) -> Vector2<f64>) -> f64 {
    let mut fd = nalgebra::SMatrix::<f64, 2, N>::zeros();
    for k in 0..N {
        let h = 1e-4 * params[k].abs().max(1e-2);
        let (mut a, mut b) = (params, params);
        a[k] += h;
        b[k] -= h;
        fd.set_column(k, &((f(&a) - f(&b)) / (2.0 * h)));
    }
    (analytic - fd).norm() / analytic.norm()
}

fn c3_projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_rt, mut worst_undist, mut worst_pose, mut worst_lens) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut n = 0;
    while n < 10_000 {
        let cam = random_camera(&mut rng);
        let w = Vector3::new(rng.random_range(-8.0..8.0), rng.random_range(0.0..25.0), 0.0);
        let Ok(p) = cam.project(&w) else { continue };
        let xc = cam.pose.world_to_camera(&w);
        if !cam.in_image(&p) || !inside_first_fold(&cam.distortion, (xc.x / xc.z).hypot(xc.y / xc.z)) {
            continue;
        }
        n += 1;
        let back = cam.back_project_to_ground(p).unwrap();
        worst_rt = worst_rt.max((back - w).norm());

        let ideal = Vector2::new(rng.random_range(-0.6..0.6), rng.random_range(-0.35..0.35));
        let u = cam.distortion.undistort(cam.distortion.distort(ideal));
        worst_undist = worst_undist.max((u.point - ideal).norm());

        let (_, jp) = cam.pose_jacobian(&w).unwrap();
        let aa = cam.pose.axis_angle();
        let t = cam.pose.translation;
        let pose_params = [aa.x, aa.y, aa.z, t.x, t.y, t.z];
        worst_pose = worst_pose.max(jacobian_gap(&jp, pose_params, |q| {
            let pose = Pose::from_axis_angle(Vector3::new(q[0], q[1], q[2]), Vector3::new(q[3], q[4], q[5]));
            project_camera_point(&cam.intrinsics, &cam.distortion, &pose.world_to_camera(&w)).unwrap()
        }));
        let (_, jl) = cam.lens_jacobian(&w).unwrap();
        let (i, d) = (cam.intrinsics, cam.distortion);
        let lens_params = [i.fx, i.fy, i.cx, i.cy, d.k1, d.k2, d.k3, d.p1, d.p2];
        worst_lens = worst_lens.max(jacobian_gap(&jl, lens_params, |q| {
            let intr = Intrinsics::new(q[0], q[1], q[2], q[3]);
            let dist = Distortion::from_array([q[4], q[5], q[6], q[7], q[8]]);
            project_camera_point(&intr, &dist, &xc).unwrap()
        }));
    }
    outcome(
        worst_rt < 1e-6 && worst_undist < 1e-8 && worst_pose < 1e-5 && worst_lens < 1e-5,
        format!(
            "{n} cases: round trip max {worst_rt:.1e} m, undistort max {worst_undist:.1e}, Jacobian relative gap pose {worst_pose:.1e} lens {worst_lens:.1e}"
        ),
    )
}

fn fields(m: &ClassMetrics) -> [Option<f64>; 7] {
    [m.ap, m.ap50, m.ap75, m.ap_small, m.ap_medium, m.ap_large, m.ar100]
}

fn max_gap(a: &[Option<f64>; 7], b: &[Option<f64>; 7]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

fn c4_coco_ap() -> Outcome {
    let (gt, dets) = sim20();
    let ev = evaluate(&gt, &dets, IouType::Bbox).unwrap();
    let frozen: serde_json::Value = serde_json::from_slice(SIM20_PYCOCOTOOLS).unwrap();
    let mut gap_frozen = 0.0f64;
    for (c, v) in frozen["per_class"].as_object().unwrap() {
        let want = ["ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large", "ar100"].map(|k| v[k].as_f64());
        gap_frozen = gap_frozen.max(max_gap(&fields(&ev.per_class[&c.parse::<u32>().unwrap()]), &want));
    }
    let mut gap_port = 0.0f64;
    let mut fixtures = vec![(gt.clone(), dets.clone())];
    fixtures.extend((0..40).map(|s| random_fixture(1000 + s, 20)));
    for (g, d) in &fixtures {
        let ev = evaluate(g, d, IouType::Bbox).unwrap();
        for (c, r) in coco_reference::evaluate(g, d) {
            gap_port = gap_port.max(max_gap(&fields(&ev.per_class[&c]), &r));
        }
    }

    // Ranked TP, FP, TP, TP, FP against 4 ground truths.
    let g = [bx(10.0, 10.0, 100.0, 100.0), bx(200.0, 10.0, 100.0, 100.0), bx(10.0, 200.0, 100.0, 100.0), bx(200.0, 200.0, 100.0, 100.0)];
    let gts = g.iter().enumerate().map(|(k, b)| gt_box(k as u64 + 1, 1, 1, *b)).collect();
    let far = bx(500.0, 350.0, 50.0, 50.0);
    let hand = [(g[0], 0.9), (far, 0.8), (g[1], 0.7), (g[2], 0.6), (far, 0.5)];
    let hand: Vec<Annotation> = hand.iter().enumerate().map(|(k, (b, s))| det_box(k as u64 + 1, 1, 1, *b, *s)).collect();
    let ap50 = coco_ap(&dataset(1, gts), &hand, 1, IouType::Bbox).unwrap().ap50;
    let exact = ap50 == Some((26.0 + 50.0 * 0.75) / 101.0);
    outcome(
        gap_frozen <= 1e-6 && gap_port <= 1e-6 && exact,
        format!("pycocotools gap {gap_frozen:.1e}, reference port gap {gap_port:.1e} over {} fixtures, hand case exact {exact}", fixtures.len()),
    )
}

fn c5_ladder() -> Outcome {
    let t = Taxonomy::opos();
    let mut monotone = 0;
    for seed in 0..1000u64 {
        let (gt, dets) = random_fixture(seed, 6);
        let d = diagnose(&gt, &dets, &t, IouType::Bbox, AreaRange::All).unwrap();
        monotone += usize::from(d.per_class.values().chain(&d.overall).chain(&d.people).all(|l| l.is_monotone()));
    }

    let gts = grid_gts(4, 1);
    let mut dets: Vec<Annotation> = gts[..3].iter().enumerate().map(|(k, g)| det_box(k as u64 + 1, 1, 1, g.bbox, 0.8 - 0.1 * k as f64)).collect();
    let b = gts[3].bbox;
    dets.push(det_box(4, 1, 1, bx(b.x + 54.0, b.y, b.w, b.h), 0.95));
    let [c75, c50, loc, sim, oth, bg, _] = ladder(&dataset(1, gts), &dets, 1);
    let loc_ok = c75 == c50 && loc > c50 && sim == loc && oth == loc && bg == loc;

    let (ped, cyc) = (t.id_of("pedestrian").unwrap(), t.id_of("cyclist").unwrap());
    let mut gts = grid_gts(3, ped);
    let cyc_box = bx(10.0, 200.0, 100.0, 100.0);
    gts.push(gt_box(4, 1, cyc, cyc_box));
    let mut dets: Vec<Annotation> = gts[..3].iter().map(|g| det_box(g.id, 1, ped, g.bbox, 0.8)).collect();
    dets.push(det_box(9, 1, ped, cyc_box, 0.95));
    let [c75, c50, loc, sim, oth, bg, _] = ladder(&dataset(1, gts), &dets, ped);
    let sim_ok = c75 == loc && c50 == loc && sim > loc && oth == sim && bg == sim;

    outcome(
        monotone == 1000 && loc_ok && sim_ok,
        format!("{monotone}/1000 fixtures monotone, localization fixture {loc_ok}, confusion fixture {sim_ok}"),
    )
}

fn c6_taxonomy() -> Outcome {
    let t = Taxonomy::opos();
    let (roller, ped) = (t.id_of("roller").unwrap(), t.id_of("pedestrian").unwrap());
    let parts = [t.id_of("pedpart").unwrap(), t.id_of("cycpart").unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = true;
    for _ in 0..1000 {
        let n = rng.random_range(0..64);
        let anns: Vec<Annotation> = (0..n)
            .map(|k| Annotation::from_bbox(k + 1, 1, rng.random_range(1..=15), BBox::new(1.0, 2.0, 3.0, 4.0), None))
            .collect();
        for mode in TreatmentMode::ALL {
            let once = apply_treatment(&anns, t.treatment(mode)).unwrap();
            ok &= once.len() == anns.len();
            ok &= apply_treatment(&once, t.treatment(mode)).unwrap() == once;
            for (a, b) in anns.iter().zip(&once) {
                ok &= a.category_id != roller || b.category_id == ped;
                if mode != TreatmentMode::Separating {
                    ok &= !parts.contains(&b.category_id);
                }
            }
        }
    }
    let merged = effective_class_count(t.treatment(TreatmentMode::Merging));
    outcome(ok && merged == 11, format!("1000 random annotation sets x 3 modes hold {ok}, merging leaves {merged} classes"))
}

fn c7_density() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let extent = MapExtent::new([10.0, -5.0], 12.0, 8.0, 0.4).unwrap();
    let obs = |rng: &mut ChaCha8Rng, n: usize| -> Vec<GroundObservation> {
        (0..n)
            .map(|k| {
                let p = extent.to_world([rng.random_range(-1.0..13.0), rng.random_range(-1.0..9.0)]);
                GroundObservation {
                    ts: k as f64,
                    image_id: k as u64,
                    class_id: 3,
                    x: p[0],
                    y: p[1],
                    score: 1.0,
                    source_id: 0,
                }
            })
            .collect()
    };
    let render = |o: &[GroundObservation], bw: f64| kde_from_observations(o, &DensityFilter::default(), &extent, 0.25, Bandwidth::Fixed(bw)).unwrap();
    let mut mass_ok = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..100);
        let o = obs(&mut rng, n);
        let bw = rng.random_range(0.05..3.0);
        let inside = o.iter().filter(|x| extent.contains(x.xy())).count() as f64;
        let r = render(&o, bw);
        mass_ok += usize::from((r.values().iter().sum::<f64>() * r.cell_area() - inside).abs() <= 0.01 * inside);
    }
    let mut monoid_ok = true;
    let zero = DensityRaster::zero(extent, 0.25, 0.8).unwrap();
    for _ in 0..100 {
        let [a, b, c] = [0, 1, 2].map(|_| {
            let n = rng.random_range(0..40);
            render(&obs(&mut rng, n), 0.8)
        });
        let ab_c = merge_rasters(&merge_rasters(&a, &b).unwrap(), &c).unwrap();
        let a_bc = merge_rasters(&a, &merge_rasters(&b, &c).unwrap()).unwrap();
        monoid_ok &= merge_rasters(&a, &zero).unwrap() == a && merge_rasters(&a, &b).unwrap() == merge_rasters(&b, &a).unwrap() && ab_c == a_bc;
    }
    let (mut edge_ok, mut edge_auto) = (0, 0);
    for seed in 0..100 {
        let probe = edge_probe(seed, 1.0, Bandwidth::Fixed(DWELL_RADIUS_M));
        edge_ok += usize::from(probe.argmax_distance() <= DWELL_RADIUS_M);
        let auto = edge_probe(seed, 1.0, Bandwidth::Auto);
        edge_auto += usize::from(auto.argmax_distance() <= auto.raster.bandwidth);
    }
    let mut decim_ok = true;
    for _ in 0..200 {
        let native = rng.random_range(1.0..60.0);
        let duration: f64 = rng.random_range(0.5..30.0);
        let mut store = ObservationStore::new();
        for src in 0..3u32 {
            let frames = (duration * native).floor() as u64;
            let o: Vec<GroundObservation> = (0..frames)
                .map(|f| GroundObservation {
                    ts: f as f64 / native,
                    image_id: u64::from(src) * 100_000 + f + 1,
                    class_id: 3,
                    x: 12.0,
                    y: -2.0,
                    score: 1.0,
                    source_id: src,
                })
                .collect();
            let mut single = ObservationStore::new();
            accumulate(&mut single, &o, 1.0).unwrap();
            decim_ok &= single.frame_count() as f64 <= duration.ceil();
            accumulate(&mut store, &o, 1.0).unwrap();
        }
        decim_ok &= store.frame_count() as f64 <= 3.0 * duration.ceil();
    }
    outcome(
        mass_ok == 1000 && monoid_ok && edge_ok >= 95 && decim_ok,
        format!(
            "mass within 1% {mass_ok}/1000, monoid laws {monoid_ok}, edge argmax within {DWELL_RADIUS_M} m bandwidth {edge_ok}/100 (auto bandwidth {edge_auto}/100), 1 fps decimation bound {decim_ok}"
        ),
    )
}

fn random_polygon(rng: &mut ChaCha8Rng) -> Polygon {
    loop {
        let n = rng.random_range(3..9);
        let p = Polygon::new(
            (0..n)
                .map(|_| Point2::new(f64::from(rng.random_range(0u32..2560)) / 4.0, f64::from(rng.random_range(0u32..1920)) / 4.0))
                .collect(),
        );
        if p.area() > 1.0 {
            return p;
        }
    }
}

fn c8_formats() -> Outcome {
    let t = Taxonomy::opos();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut coco_ok, mut labelme_ok) = (true, true);
    for _ in 0..300 {
        let anns: Vec<Annotation> = (0..rng.random_range(0..20u64))
            .map(|k| {
                let parts = (0..rng.random_range(1..3)).map(|_| random_polygon(&mut rng)).collect();
                Annotation::from_polygons(k + 1, rng.random_range(1..=5), rng.random_range(1..=15), parts, None).unwrap()
            })
            .collect();
        let d = Dataset {
            images: (1..=5).map(image).collect(),
            annotations: anns,
            categories: t.categories(),
            ..Dataset::default()
        };
        coco_ok &= parse_dataset(&write_dataset(&d).unwrap()).unwrap() == d;
        let dets: Vec<Annotation> = d.annotations.iter().map(|a| Annotation { score: Some(rng.random()), ..a.clone() }).collect();
        coco_ok &= parse_detections(&write_detections(&dets).unwrap()).unwrap() == dets;

        let img = image(3);
        let on_img: Vec<Annotation> = dets
            .iter()
            .filter(|a| a.segmentation.len() == 1)
            .enumerate()
            .map(|(k, a)| Annotation {
                image_id: 3,
                score: Some(1.0 - k as f64 / 100.0),
                ..a.clone()
            })
            .collect();
        let doc = export_labelme(&img, &on_img, &t).unwrap();
        let doc: LabelMeDoc = serde_json::from_slice(&serde_json::to_vec(&doc).unwrap()).unwrap();
        let back = import_labelme(&doc, 3, &t, 1).unwrap();
        labelme_ok &= back.len() == on_img.len()
            && back.iter().zip(&on_img).all(|(b, a)| b.category_id == a.category_id && b.segmentation == a.segmentation);
    }

    let det = |id, score, w: f64, h: f64| Annotation::from_polygons(id, 1, 3, vec![Polygon::rectangle(BBox::new(0.0, 0.0, w, h))], Some(score)).unwrap();
    let boundary = vec![
        det(1, 0.75, 20.0, 30.0),
        det(2, 0.75_f64.next_down(), 20.0, 30.0),
        det(3, 0.9, 20.0, 30.0_f64.next_down()),
        det(4, 1.0, 600.0, 1.0),
    ];
    let kept: Vec<u64> = filter_for_annotation(&boundary, AssistThresholds::default()).unwrap().iter().map(|d| d.id).collect();
    let closed = kept == [1, 4];

    let index = Dataset {
        images: (1..=7826).map(image).collect(),
        categories: t.categories(),
        ..Dataset::default()
    };
    let (train, test) = split_dataset(&index, SplitRatio::new(9, 1).unwrap(), 0, SplitOptions::default()).unwrap();
    let sizes = (train.images.len(), test.images.len());
    outcome(
        coco_ok && labelme_ok && closed && sizes == (7043, 783),
        format!("COCO round trip {coco_ok}, LabelMe round trip {labelme_ok} over 300 datasets, thresholds closed {closed}, split {}/{}", sizes.0, sizes.1),
    )
}

fn c9_throughput() -> Outcome {
    let t = Taxonomy::opos();
    let (cam, extent) = cullen_rig(9);
    let spec = EdgeScenarioSpec {
        extent,
        attractor: Some(Attractor {
            name: "steps".into(),
            xy: extent.to_world([0.5 * extent.width_m, extent.length_m - 1.5]),
        }),
        dwellers: 15,
        through_traffic: 25,
        duration_s: 400.0,
        fps: 5.0,
        seed: 9,
    };
    let noise = NoiseSpec {
        pixel_sigma: 1.0,
        miss_rate: 0.1,
        confusion_rate: 0.1,
    };
    let s = edge_scenario(&spec, vec![possense::camera::io::CameraFile::from_camera(&cam)], noise, &t);
    let out = render_detections(&s, &t).unwrap();
    let frames: Vec<(f64, Vec<Annotation>)> = out.detections_by_frame().into_iter().map(|(f, d)| (f.ts, d)).collect();
    let n = s.frame_count();

    let start = Instant::now();
    let ctx = MapContext {
        camera: &cam,
        taxonomy: &t,
        treatment: t.treatment(TreatmentMode::Merging),
        extent: Some(extent),
        priors: None,
        source_id: 0,
    };
    let mapped = map_frames(&frames, &ctx);
    let mut store = ObservationStore::new();
    for m in &mapped {
        accumulate(&mut store, &m.observations, 1.0).unwrap();
    }
    let raster = kde_density(&store, &DensityFilter::default(), &extent, DEFAULT_CELL_SIZE_M, Bandwidth::Auto).unwrap();
    let ev = evaluate(&out.ground_truth, &out.detections, IouType::Bbox).unwrap();
    let secs = start.elapsed().as_secs_f64();
    std::hint::black_box((raster, ev));
    let rate = n as f64 / secs;
    outcome(rate >= 1000.0, format!("{n} frames ({} detections) mapped, rasterized and evaluated in {secs:.3} s = {rate:.0} frames/s", out.detections.len()))
}
