use std::collections::{BTreeMap, BTreeSet};
use std::io::BufReader;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use possense::camera::io::{read_correspondences, CalibrationRecord, CameraFile};
use possense::camera::*;
use possense::coco::*;
use possense::density::{accumulate, kde_density, DensityFilter, ObservationStore};
use possense::eval::{write_pr_csv, write_summary_csv, AreaRange, EvalParams, EvalReport, Evaluator, IouType, Rung};
use possense::mapping::*;
use possense::sim::{render_detections, Scenario};
use possense::taxonomy::{apply_treatment, Taxonomy};
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::*;

fn taxonomy(run: &mut Run, path: Option<&Path>) -> CliResult<Taxonomy> {
    match path {
        None => Ok(Taxonomy::opos()),
        Some(p) => Taxonomy::from_json(&run.read(p)?).map_err(|e| CliError::from(e).in_file(p)),
    }
}

fn camera_file(run: &mut Run, path: &Path) -> CliResult<CameraFile> {
    CameraFile::parse(&run.read(path)?).map_err(|e| CliError::from(e).in_file(path))
}

fn camera(run: &mut Run, path: &Path) -> CliResult<CameraModel> {
    camera_file(run, path)?.camera().map_err(|e| CliError::from(e).in_file(path))
}

fn dataset(run: &mut Run, path: &Path) -> CliResult<Dataset> {
    parse_dataset(&run.read(path)?).map_err(|e| CliError::from(e).in_file(path))
}

fn detections(run: &mut Run, path: &Path) -> CliResult<Vec<Annotation>> {
    parse_detections(&run.read(path)?).map_err(|e| CliError::from(e).in_file(path))
}

fn correspondences(run: &mut Run, path: &Path) -> CliResult<Vec<Correspondence>> {
    read_correspondences(run.read(path)?.as_slice()).map_err(|e| CliError::from(e).in_file(path))
}

fn extent(run: &mut Run, path: &Path) -> CliResult<MapExtent> {
    let e: MapExtent = serde_json::from_slice(&run.read(path)?).map_err(|e| CliError::config(e.to_string()).in_file(path))?;
    e.validate().map_err(|e| CliError::from(e).in_file(path))?;
    Ok(e)
}

fn pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("output serializes");
    out.push(b'\n');
    out
}

fn parse_image_size(s: &str) -> CliResult<(u32, u32)> {
    s.split_once(['x', 'X'])
        .and_then(|(w, h)| Some((w.trim().parse().ok()?, h.trim().parse().ok()?)))
        .filter(|&(w, h)| w > 0 && h > 0)
        .ok_or_else(|| CliError::config(format!("--image-size {s:?} is not WIDTHxHEIGHT")))
}

pub fn calibrate(a: &CalibrateArgs, run: &mut Run) -> CliResult<()> {
    let base = a.intrinsics.as_deref().map(|p| camera_file(run, p)).transpose()?;
    let image_size = match (&a.image_size, &base) {
        (Some(s), _) => parse_image_size(s)?,
        (None, Some(f)) => (f.image_size[0], f.image_size[1]),
        (None, None) => return Err(CliError::config("give --intrinsics or --image-size")),
    };
    let opts = LmOptions::default();
    let (intrinsics, distortion, method) = if a.views.is_empty() {
        let f = base.as_ref().ok_or_else(|| CliError::config("give --intrinsics or at least 3 --view files"))?;
        (f.intrinsics, f.distortion, "extrinsics-lm")
    } else {
        let views = a.views.iter().map(|p| correspondences(run, p)).collect::<CliResult<Vec<_>>>()?;
        let cal = run.stage("intrinsics", || calibrate_intrinsics_planar(&views, &opts))?;
        log::info!("planar calibration: rms {:.4} px after {} iterations", cal.rms_px, cal.iterations);
        (cal.intrinsics, cal.distortion, "planar-intrinsics+extrinsics-lm")
    };
    let refs = correspondences(run, &a.refs)?;
    let sol = run.stage("extrinsics", || solve_extrinsics(&intrinsics, &distortion, &refs, &opts))?;
    let cam = camera_from_solution(intrinsics, distortion, &sol, image_size)?;
    let mut file = CameraFile::from_camera(&cam);
    file.calibration = Some(CalibrationRecord {
        rms_px: sol.rms_px,
        points: refs.len(),
        iterations: sol.iterations,
        method: method.into(),
    });
    let mut json = file.to_json().into_bytes();
    json.push(b'\n');
    run.write("camera.json", &json)?;

    let ground: Vec<Correspondence> = refs.iter().copied().filter(|c| c.z.abs() < 1e-9).collect();
    if !ground.is_empty() {
        let report = ground_mapping_error(&cam, &ground)?;
        log::info!("ground mapping error: mean {:.4} m, max {:.4} m", report.mean_m, report.max_m);
        run.write("mapping_error.json", &pretty(&report))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct PixelRow {
    u: f64,
    v: f64,
}

#[derive(Deserialize)]
struct WorldRow {
    #[serde(rename = "X")]
    x: f64,
    #[serde(rename = "Y")]
    y: f64,
    #[serde(rename = "Z")]
    z: f64,
}

/// Reads typed CSV rows; errors carry the line number (header is line 1).
fn csv_rows<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> CliResult<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    rdr.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| CliError::from(e).in_file(path))
}

pub fn project(a: &ProjectArgs, run: &mut Run) -> CliResult<()> {
    let cam = camera(run, &a.camera)?;
    let bytes = run.read(&a.input)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    match a.to {
        Direction::Ground => {
            w.write_record(["u", "v", "x", "y"])?;
            for (k, r) in csv_rows::<PixelRow>(&bytes, &a.input)?.into_iter().enumerate() {
                let g = cam
                    .back_project_to_ground(Vector2::new(r.u, r.v))
                    .map_err(|e| CliError::from(e).at_line(k + 2).in_file(&a.input))?;
                w.write_record([fixed(r.u), fixed(r.v), fixed(g.x), fixed(g.y)])?;
            }
        }
        Direction::Image => {
            w.write_record(["X", "Y", "Z", "u", "v"])?;
            for (k, r) in csv_rows::<WorldRow>(&bytes, &a.input)?.into_iter().enumerate() {
                let p = cam
                    .project(&Vector3::new(r.x, r.y, r.z))
                    .map_err(|e| CliError::from(e).at_line(k + 2).in_file(&a.input))?;
                w.write_record([fixed(r.x), fixed(r.y), fixed(r.z), fixed(p.x), fixed(p.y)])?;
            }
        }
    }
    let out = w.into_inner().map_err(|e| CliError::config(e.to_string()))?;
    run.write("projected.csv", &out)?;
    Ok(())
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

impl CliError {
    fn at_line(mut self, line: usize) -> Self {
        self.message = format!("line {line}: {}", self.message);
        self
    }
}

/// Frames in image-id order with their timestamps.
fn frame_times(images: &[ImageRecord], fps: Option<f64>) -> CliResult<Vec<(u64, f64)>> {
    let mut sorted: Vec<&ImageRecord> = images.iter().collect();
    sorted.sort_by_key(|i| i.id);
    sorted
        .iter()
        .enumerate()
        .map(|(k, img)| {
            let ts = match (img.extra.get("ts").and_then(serde_json::Value::as_f64), fps) {
                (Some(ts), _) => ts,
                (None, Some(f)) if f > 0.0 && f.is_finite() => k as f64 / f,
                (None, Some(f)) => return Err(CliError::config(format!("--fps must be positive, got {f}"))),
                (None, None) => return Err(CliError::config(format!("image {} has no `ts` field; pass --fps", img.id))),
            };
            Ok((img.id, ts))
        })
        .collect()
}

pub fn map(a: &MapArgs, run: &mut Run) -> CliResult<()> {
    let cam = camera(run, &a.camera)?;
    let tax = taxonomy(run, a.taxonomy.taxonomy.as_deref())?;
    let images = dataset(run, &a.images)?;
    let dets = detections(run, &a.dets)?;
    let extent = a.extent.as_deref().map(|p| extent(run, p)).transpose()?;
    let priors = match &a.priors {
        Some(p) => Some(serde_json::from_slice::<ClassPriors>(&run.read(p)?).map_err(|e| CliError::config(e.to_string()).in_file(p))?),
        None if a.boxes => Some(ClassPriors::people_defaults(&tax)),
        None => None,
    };

    let times = frame_times(&images.images, a.fps)?;
    let mut by_image: BTreeMap<u64, Vec<Annotation>> = times.iter().map(|(id, _)| (*id, Vec::new())).collect();
    for d in dets {
        let id = d.image_id;
        by_image
            .get_mut(&id)
            .ok_or_else(|| CliError::data(format!("detection {} references image {id} absent from {}", d.id, a.images.display())))?
            .push(d);
    }
    let frames: Vec<(f64, Vec<Annotation>)> = times.iter().map(|(id, ts)| (*ts, by_image.remove(id).unwrap_or_default())).collect();
    let ctx = MapContext {
        camera: &cam,
        taxonomy: &tax,
        treatment: tax.treatment(a.taxonomy.treatment),
        extent,
        priors: priors.as_ref(),
        source_id: a.source_id,
    };
    let mapped = run.stage("map", || map_frames(&frames, &ctx));

    let obs: Vec<GroundObservation> = mapped.iter().flat_map(|m| m.observations.iter().copied()).collect();
    let mut stream = Vec::new();
    let name = match a.format {
        StreamFormat::Csv => {
            write_observations_csv(&mut stream, &obs)?;
            "observations.csv"
        }
        StreamFormat::Jsonl => {
            write_observations_jsonl(&mut stream, &obs)?;
            "observations.jsonl"
        }
    };
    run.write(name, &stream)?;

    if priors.is_some() {
        let boxes: Vec<serde_json::Value> = mapped
            .iter()
            .zip(&times)
            .flat_map(|(m, (image_id, _))| {
                m.boxes
                    .iter()
                    .map(move |(ann, b)| serde_json::json!({"image_id": image_id, "annotation_id": ann, "box": b}))
            })
            .collect();
        run.write("boxes.json", &pretty(&boxes))?;
    }
    let failures: Vec<serde_json::Value> = mapped
        .iter()
        .zip(&times)
        .flat_map(|(m, (image_id, _))| m.failures.iter().map(move |f| serde_json::json!({"image_id": image_id, "annotation_id": f.annotation_id, "reason": f.reason})))
        .collect();
    for f in &failures {
        log::warn!("not located: {f}");
    }
    let summary = serde_json::json!({
        "frames": frames.len(),
        "observations": obs.len(),
        "out_of_extent": mapped.iter().map(|m| m.out_of_extent).sum::<usize>(),
        "non_people": mapped.iter().map(|m| m.non_people).sum::<usize>(),
        "failures": failures,
    });
    run.write("map_summary.json", &pretty(&summary))?;
    Ok(())
}

pub fn density(a: &DensityArgs, run: &mut Run) -> CliResult<()> {
    let extent = extent(run, &a.extent)?;
    let mut obs = Vec::new();
    for p in &a.observations {
        let bytes = run.read(p)?;
        let batch = if p.extension().is_some_and(|e| e == "jsonl") {
            read_observations_jsonl(BufReader::new(bytes.as_slice()))
        } else {
            read_observations_csv(bytes.as_slice())
        };
        obs.extend(batch.map_err(|e| CliError::from(e).in_file(p))?);
    }
    // Per-source order is by time; stable so equal timestamps keep file order.
    obs.sort_by(|x, y| x.source_id.cmp(&y.source_id).then(x.ts.total_cmp(&y.ts)));
    let mut store = ObservationStore::new();
    accumulate(&mut store, &obs, a.sampling_fps)?;
    log::info!("{} observations in {} frames after {} fps decimation", store.len(), store.frame_count(), a.sampling_fps);

    let time_window = match (a.t0, a.t1) {
        (None, None) => None,
        (t0, t1) => Some([t0.unwrap_or(f64::NEG_INFINITY), t1.unwrap_or(f64::INFINITY)]),
    };
    let filter = DensityFilter {
        classes: (!a.classes.is_empty()).then(|| a.classes.iter().copied().collect::<BTreeSet<u32>>()),
        time_window,
    };
    let raster = run.stage("kde", || kde_density(&store, &filter, &extent, a.cell_size, a.bandwidth))?;
    let mut csv = Vec::new();
    raster.write_csv(&mut csv).map_err(|e| CliError::config(e.to_string()))?;
    run.write("density.csv", &csv)?;
    let mut pgm = Vec::new();
    raster.write_pgm(&mut pgm).map_err(|e| CliError::config(e.to_string()))?;
    run.write("density.pgm", &pgm)?;
    run.write("density_header.json", &pretty(&raster.header()))?;
    Ok(())
}

/// Ground truth and detections with the treatment applied to both.
fn treated(run: &mut Run, gt: &Path, dets: &Path, t: &TaxonomyArgs) -> CliResult<(Taxonomy, Dataset, Vec<Annotation>)> {
    let tax = taxonomy(run, t.taxonomy.as_deref())?;
    let mut gt_ds = dataset(run, gt)?;
    let dets = detections(run, dets)?;
    let tr = tax.treatment(t.treatment);
    gt_ds.annotations = apply_treatment(&gt_ds.annotations, tr)?;
    let dets = apply_treatment(&dets, tr)?;
    Ok((tax, gt_ds, dets))
}

pub fn eval(a: &EvalArgs, run: &mut Run) -> CliResult<()> {
    let (tax, gt, dets) = treated(run, &a.gt, &a.dets, &a.taxonomy)?;
    let iou: IouType = a.iou.into();
    let ev = run.stage("match", || Evaluator::new(&gt, &dets, iou, EvalParams::default()))?;
    let evaluation = run.stage("accumulate", || ev.evaluate());
    let diag = run.stage("diagnose", || ev.diagnose(&tax, AreaRange::All));
    let report = EvalReport::new(&evaluation, &tax, &[diag]);
    run.write("report.json", report.to_json().as_bytes())?;
    let mut summary = Vec::new();
    write_summary_csv(&mut summary, &report).map_err(|e| CliError::config(e.to_string()))?;
    run.write("summary.csv", &summary)?;

    let mut curves = Vec::new();
    for &c in ev.classes() {
        for thr in [0.5, 0.75] {
            if let Some(curve) = ev.class_curve(c, thr, AreaRange::All) {
                let name = tax.name_of(c).map_or_else(|| format!("class_{c}"), str::to_string);
                curves.push((format!("{name}@{thr:.2}"), curve));
            }
        }
    }
    let refs: Vec<(String, &possense::eval::PrCurve)> = curves.iter().map(|(n, c)| (n.clone(), c)).collect();
    let mut pr = Vec::new();
    write_pr_csv(&mut pr, &refs).map_err(|e| CliError::config(e.to_string()))?;
    run.write("pr.csv", &pr)?;
    Ok(())
}

pub fn diagnose(a: &DiagnoseArgs, run: &mut Run) -> CliResult<()> {
    let (tax, gt, dets) = treated(run, &a.gt, &a.dets, &a.taxonomy)?;
    let ev = run.stage("match", || Evaluator::new(&gt, &dets, a.iou.into(), EvalParams::default()))?;
    let d = run.stage("diagnose", || ev.diagnose(&tax, a.area.into()));
    let report = EvalReport::new(&ev.evaluate(), &tax, std::slice::from_ref(&d));
    run.write("ladder.json", &pretty(&report.ladder[0]))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["scope".to_string()];
    header.extend(Rung::ALL.iter().map(|r| r.as_str().to_string()));
    w.write_record(&header)?;
    let mut row = |scope: String, l: &possense::eval::Ladder| w.write_record(std::iter::once(scope).chain(l.aps().iter().map(|v| format!("{v:.6}"))));
    if let Some(l) = &d.overall {
        row("overall".into(), l)?;
    }
    if let Some(l) = &d.people {
        row("people".into(), l)?;
    }
    for (c, l) in &d.per_class {
        row(tax.name_of(*c).map_or_else(|| format!("class_{c}"), str::to_string), l)?;
    }
    let out = w.into_inner().map_err(|e| CliError::config(e.to_string()))?;
    run.write("ladder.csv", &out)?;
    Ok(())
}

pub fn stats(a: &StatsArgs, run: &mut Run) -> CliResult<()> {
    let tax = taxonomy(run, a.taxonomy.as_deref())?;
    let ds = dataset(run, &a.gt)?;
    let s = possense::eval::dataset_stats(&ds, &tax);
    run.write("stats.json", &pretty(&s))?;
    Ok(())
}

fn thresholds(min_score: f64, min_area: f64) -> CliResult<AssistThresholds> {
    if !(0.0..=1.0).contains(&min_score) || min_area.is_nan() || min_area < 0.0 {
        return Err(CliError::config(format!("thresholds out of range: score {min_score}, area {min_area}")));
    }
    Ok(AssistThresholds {
        min_score,
        min_area_px: min_area,
    })
}

pub fn filter_annotations(a: &FilterArgs, run: &mut Run) -> CliResult<()> {
    let th = thresholds(a.min_score, a.min_area)?;
    let dets = detections(run, &a.dets)?;
    let kept = filter_for_annotation(&dets, th).map_err(|e| CliError::from(e).in_file(&a.dets))?;
    log::info!("kept {} of {} detections", kept.len(), dets.len());
    run.write("filtered.json", &write_detections(&kept)?)?;
    Ok(())
}

pub fn export_labelme(a: &ExportLabelmeArgs, run: &mut Run) -> CliResult<()> {
    let tax = taxonomy(run, a.taxonomy.as_deref())?;
    let images = dataset(run, &a.images)?;
    let mut dets = detections(run, &a.dets)?;
    if !a.all {
        dets = filter_for_annotation(&dets, thresholds(a.min_score, a.min_area)?).map_err(|e| CliError::from(e).in_file(&a.dets))?;
    }
    let mut by_image: BTreeMap<u64, Vec<Annotation>> = BTreeMap::new();
    for d in dets {
        if images.image(d.image_id).is_none() {
            return Err(CliError::data(format!("detection {} references image {} absent from {}", d.id, d.image_id, a.images.display())));
        }
        by_image.entry(d.image_id).or_default().push(d);
    }
    let mut names = BTreeSet::new();
    for img in &images.images {
        let doc = possense::coco::export_labelme(img, by_image.get(&img.id).map_or(&[][..], Vec::as_slice), &tax)?;
        let stem = Path::new(&img.file_name).file_stem().map_or_else(|| format!("image_{}", img.id), |s| s.to_string_lossy().into_owned());
        let name = if names.insert(stem.clone()) { stem } else { format!("{stem}_{}", img.id) };
        run.write(format!("labelme/{name}.json"), &pretty(&doc))?;
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs, run: &mut Run) -> CliResult<()> {
    let tax = taxonomy(run, a.taxonomy.as_deref())?;
    let scenario = Scenario::from_json(&run.read(&a.scenario)?).map_err(|e| CliError::from(e).in_file(&a.scenario))?;
    let out = run.stage("render", || render_detections(&scenario, &tax))?;
    run.write("gt.json", &write_dataset(&out.ground_truth)?)?;
    run.write("dets.json", &write_detections(&out.detections)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "annotation_id", "agent", "ts", "class_id", "x", "y", "agent_x", "agent_y", "yaw", "height_m", "source_id"])?;
    for t in &out.truth {
        let o = &t.observation;
        w.write_record([
            o.image_id.to_string(),
            t.annotation_id.to_string(),
            t.agent.to_string(),
            format!("{:.6}", o.ts),
            o.class_id.to_string(),
            format!("{:.9}", o.x),
            format!("{:.9}", o.y),
            format!("{:.9}", t.agent_xy[0]),
            format!("{:.9}", t.agent_xy[1]),
            format!("{:.9}", t.yaw),
            format!("{:.6}", t.height_m),
            o.source_id.to_string(),
        ])?;
    }
    let truth = w.into_inner().map_err(|e| CliError::config(e.to_string()))?;
    run.write("truth.csv", &truth)?;
    for (k, cam) in scenario.cameras.iter().enumerate() {
        let mut json = cam.to_json().into_bytes();
        json.push(b'\n');
        run.write(format!("camera_{k}.json"), &json)?;
    }
    if !out.never_visible.is_empty() {
        log::warn!("agents never fully visible: {:?}", out.never_visible);
    }
    Ok(())
}

pub fn split(a: &SplitArgs, run: &mut Run) -> CliResult<()> {
    let ratio: SplitRatio = a.ratio.parse()?;
    let ds = dataset(run, &a.gt)?;
    let opts = SplitOptions {
        stratify_by_scene: a.stratify_by_scene,
    };
    let (train, test) = split_dataset(&ds, ratio, a.seed, opts)?;
    log::info!("{} train / {} test images", train.images.len(), test.images.len());
    run.write("train.json", &write_dataset(&train)?)?;
    run.write("test.json", &write_dataset(&test)?)?;
    Ok(())
}
