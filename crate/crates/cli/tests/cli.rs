use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use possense::camera::io::{write_correspondences, CameraFile};
use possense::sim::{dequindre_rig, dequindre_scenario, ground_references, NoiseSpec};
use possense::taxonomy::Taxonomy;
use serde_json::Value;
use tempfile::TempDir;

fn possense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_possense")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = possense(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

/// Simulated greenway scenario, rendered through the CLI into `dir/sim`.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let tax = Taxonomy::opos();
        let noise = NoiseSpec {
            pixel_sigma: 1.0,
            miss_rate: 0.1,
            confusion_rate: 0.1,
        };
        let mut scenario = dequindre_scenario(6, noise, 7, &tax);
        scenario.duration_s = 8.0;
        fs::write(dir.path().join("scenario.json"), scenario.to_json()).unwrap();
        fs::write(dir.path().join("extent.json"), serde_json::to_vec(&scenario.extent).unwrap()).unwrap();
        let f = Self { dir };
        ok(&["simulate", "--scenario", s(&f.path("scenario.json")), "--out", s(&f.path("sim"))]);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

#[test]
fn help_exits_zero() {
    let out = possense(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("diagnose"));
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(possense(&["eval", "--gt"]).status.code(), Some(2));
    assert_eq!(possense(&["--jobs", "0", "stats", "--gt", "x.json"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = possense(&["stats", "--gt", s(&dir.path().join("absent.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn malformed_data_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.json");
    fs::write(&gt, br#"{"images": [{"id": 1}], "annotations": "nope"}"#).unwrap();
    let out = possense(&["stats", "--gt", s(&gt), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn pixel_above_horizon_exits_four_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let (cam, _) = dequindre_rig();
    let cam_path = dir.path().join("camera.json");
    fs::write(&cam_path, CameraFile::from_camera(&cam).to_json()).unwrap();
    let pixels = dir.path().join("pixels.csv");
    fs::write(&pixels, "u,v\n640,600\n640,0\n").unwrap();
    let out = possense(&["project", "--camera", s(&cam_path), "--input", s(&pixels), "--to", "ground", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn project_round_trips_ground_points() {
    let dir = tempfile::tempdir().unwrap();
    let (cam, _) = dequindre_rig();
    let cam_path = dir.path().join("camera.json");
    fs::write(&cam_path, CameraFile::from_camera(&cam).to_json()).unwrap();
    let world = dir.path().join("world.csv");
    fs::write(&world, "X,Y,Z\n0,10,0\n1.5,20,0\n-2,30,0\n").unwrap();
    let img_dir = dir.path().join("img");
    ok(&["project", "--camera", s(&cam_path), "--input", s(&world), "--to", "image", "--out", s(&img_dir)]);
    let gnd_dir = dir.path().join("gnd");
    ok(&["project", "--camera", s(&cam_path), "--input", s(&img_dir.join("projected.csv")), "--to", "ground", "--out", s(&gnd_dir)]);
    let back = fs::read_to_string(gnd_dir.join("projected.csv")).unwrap();
    let expected = [[0.0, 10.0], [1.5, 20.0], [-2.0, 30.0]];
    for (line, want) in back.lines().skip(1).zip(expected) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        // Pixels are written with 6 decimals.
        assert!((cols[2] - want[0]).abs() < 1e-3 && (cols[3] - want[1]).abs() < 1e-3, "{line}");
    }
}

#[test]
fn calibrate_recovers_the_pose() {
    let dir = tempfile::tempdir().unwrap();
    let (cam, extent) = dequindre_rig();
    let intr = dir.path().join("intrinsics.json");
    let mut file = CameraFile::from_camera(&cam);
    file.pose = None;
    fs::write(&intr, file.to_json()).unwrap();
    let refs = dir.path().join("refs.csv");
    let points = ground_references(&cam, &extent, 12, 3);
    let mut buf = Vec::new();
    write_correspondences(&mut buf, &points).unwrap();
    fs::write(&refs, buf).unwrap();

    let out = dir.path().join("cal");
    ok(&["calibrate", "--intrinsics", s(&intr), "--refs", s(&refs), "--out", s(&out)]);
    let file = CameraFile::parse(&fs::read(out.join("camera.json")).unwrap()).unwrap();
    assert!(file.calibration.as_ref().unwrap().rms_px < 1e-6);
    let got = file.camera().unwrap();
    let want = cam.pose.camera_center();
    assert!((got.pose.camera_center() - want).norm() < 1e-6, "{} vs {}", got.pose.camera_center(), want);
    let err = json(&out.join("mapping_error.json"));
    assert!(err["max_m"].as_f64().unwrap() < 1e-6);
}

#[test]
fn eval_and_diagnose_reports() {
    let f = Fixture::new();
    let (gt, dets) = (f.path("sim/gt.json"), f.path("sim/dets.json"));
    ok(&["eval", "--gt", s(&gt), "--dets", s(&dets), "--treatment", "merging", "--out", s(&f.path("eval"))]);
    let report = json(&f.path("eval/report.json"));
    let people = report["map_people"].as_f64().expect("map_people present");
    assert!((0.0..=1.0).contains(&people));
    assert!(fs::read_to_string(f.path("eval/pr.csv")).unwrap().contains("@0.50"));

    ok(&["diagnose", "--gt", s(&gt), "--dets", s(&dets), "--out", s(&f.path("diag"))]);
    let ladder = fs::read_to_string(f.path("diag/ladder.csv")).unwrap();
    for line in ladder.lines().skip(1) {
        let aps: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert!(aps.windows(2).all(|w| w[0] <= w[1] + 1e-9), "ladder not monotone: {line}");
    }
}

#[test]
fn manifest_records_digests_and_reruns_identically() {
    let f = Fixture::new();
    let manifest = json(&f.path("sim/run_manifest.json"));
    assert_eq!(manifest["subcommand"], "simulate");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"].as_str().unwrap().ends_with("gt.json")));
    for rec in outputs.iter().chain(manifest["inputs"].as_array().unwrap()) {
        let sha = rec["sha256"].as_str().unwrap();
        assert_eq!(sha.len(), 64);
        assert!(sha.bytes().all(|b| b.is_ascii_hexdigit()));
    }

    let argv: Vec<String> = manifest["argv"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let first: Vec<Vec<u8>> = outputs.iter().map(|o| fs::read(o["path"].as_str().unwrap()).unwrap()).collect();
    let args: Vec<&str> = argv.iter().skip(1).map(String::as_str).collect();
    ok(&args);
    for (o, before) in outputs.iter().zip(first) {
        assert_eq!(fs::read(o["path"].as_str().unwrap()).unwrap(), before, "{}", o["path"]);
    }
}

#[test]
fn simulate_map_density_pipeline() {
    let f = Fixture::new();
    ok(&[
        "map",
        "--camera",
        s(&f.path("sim/camera_0.json")),
        "--images",
        s(&f.path("sim/gt.json")),
        "--dets",
        s(&f.path("sim/dets.json")),
        "--extent",
        s(&f.path("extent.json")),
        "--out",
        s(&f.path("map")),
    ]);
    let summary = json(&f.path("map/map_summary.json"));
    assert!(summary["observations"].as_u64().unwrap() > 0);
    ok(&[
        "--jobs",
        "2",
        "density",
        "--observations",
        s(&f.path("map/observations.csv")),
        "--extent",
        s(&f.path("extent.json")),
        "--bandwidth",
        "0.5",
        "--out",
        s(&f.path("density")),
    ]);
    let header = json(&f.path("density/density_header.json"));
    assert!(header.is_object());
    assert!(fs::read(f.path("density/density.pgm")).unwrap().starts_with(b"P"));
    assert_eq!(json(&f.path("density/run_manifest.json"))["jobs"], 2);
}

#[test]
fn split_nine_to_one() {
    let f = Fixture::new();
    ok(&["split", "--gt", s(&f.path("sim/gt.json")), "--ratio", "9:1", "--out", s(&f.path("split"))]);
    let total = json(&f.path("sim/gt.json"))["images"].as_array().unwrap().len();
    let train = json(&f.path("split/train.json"))["images"].as_array().unwrap().len();
    let test = json(&f.path("split/test.json"))["images"].as_array().unwrap().len();
    assert_eq!(train + test, total);
    assert_eq!(train, (total as f64 * 0.9).round() as usize);
}

#[test]
fn filter_and_labelme_export() {
    let f = Fixture::new();
    ok(&["filter-annotations", "--dets", s(&f.path("sim/dets.json")), "--out", s(&f.path("filt"))]);
    let kept = json(&f.path("filt/filtered.json"));
    for d in kept.as_array().unwrap() {
        assert!(d["score"].as_f64().unwrap() >= 0.75);
        assert!(d["area"].as_f64().unwrap() >= 600.0);
    }
    ok(&["export-labelme", "--images", s(&f.path("sim/gt.json")), "--dets", s(&f.path("sim/dets.json")), "--out", s(&f.path("lm"))]);
    let images = json(&f.path("sim/gt.json"))["images"].as_array().unwrap().len();
    assert_eq!(fs::read_dir(f.path("lm/labelme")).unwrap().count(), images);
    ok(&["stats", "--gt", s(&f.path("sim/gt.json")), "--out", s(&f.path("stats"))]);
    assert!(json(&f.path("stats/stats.json")).is_object());
}
