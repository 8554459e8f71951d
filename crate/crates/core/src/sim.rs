//! Synthetic scenes: cameras, agent trajectories and the detections a noisy
//! detector would emit for them. Used as a ground-truth oracle.
//!
//! Agents are upright cuboids. A frame's ground-truth mask is the convex hull
//! of the projected cuboid; a detection perturbs the hull vertices with
//! Gaussian pixel noise, may be dropped, and may carry a confused class.
//! Every (camera, frame) pair draws from its own ChaCha stream of the scenario
//! seed, so output does not depend on scheduling.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::camera::io::CameraFile;
use crate::camera::{CameraModel, Correspondence, Distortion, GeometryError, Intrinsics, Pose};
use crate::coco::{Annotation, Dataset, ImageRecord};
use crate::mapping::{footpoint, GroundObservation, MapExtent, CYCLIST_FOOTPRINT, PEDESTRIAN_FOOTPRINT};
use crate::polygon::{convex_hull, Point2, Polygon};
use crate::taxonomy::Taxonomy;

/// Corner noise draws per agent; a cuboid hull has at most 8 vertices.
const NOISE_SLOTS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Camera(#[from] crate::camera::io::CameraIoError),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub class_id: u32,
    pub height_m: f64,
    pub footprint_w: f64,
    pub footprint_l: f64,
    /// Piecewise-linear path; the agent exists between the first and last time.
    pub trajectory: Vec<Waypoint>,
    /// Heading while stationary, radians from world +X.
    #[serde(default)]
    pub rest_yaw: f64,
    /// Counts toward dwell time rather than through-traffic.
    #[serde(default)]
    pub dwelling: bool,
}

impl Agent {
    /// Position and heading at `t`, or `None` outside the trajectory's span.
    pub fn state(&self, t: f64) -> Option<([f64; 2], f64)> {
        let tr = &self.trajectory;
        let first = tr.first()?;
        let last = tr.last()?;
        if t < first.t || t > last.t {
            return None;
        }
        if tr.len() == 1 {
            return Some(([first.x, first.y], self.rest_yaw));
        }
        let k = tr.windows(2).position(|w| t <= w[1].t).unwrap_or(tr.len() - 2);
        let (a, b) = (tr[k], tr[k + 1]);
        let span = b.t - a.t;
        let s = if span > 0.0 { (t - a.t) / span } else { 0.0 };
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let yaw = if dx.hypot(dy) > 1e-9 { dy.atan2(dx) } else { self.rest_yaw };
        Some(([a.x + s * dx, a.y + s * dy], yaw))
    }

    /// Ground corners then roof corners of the cuboid.
    pub fn corners(&self, xy: [f64; 2], yaw: f64) -> [Vector3<f64>; 8] {
        let f = Vector2::new(yaw.cos(), yaw.sin());
        let s = Vector2::new(-f.y, f.x);
        let c = Vector2::from(xy);
        let (hl, hw) = (0.5 * self.footprint_l, 0.5 * self.footprint_w);
        let base = [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)].map(|(a, b)| c + f * a + s * b);
        std::array::from_fn(|i| {
            let p = base[i % 4];
            Vector3::new(p.x, p.y, if i < 4 { 0.0 } else { self.height_m })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub pixel_sigma: f64,
    pub miss_rate: f64,
    pub confusion_rate: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        pixel_sigma: 0.0,
        miss_rate: 0.0,
        confusion_rate: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub cameras: Vec<CameraFile>,
    pub extent: MapExtent,
    pub agents: Vec<Agent>,
    pub noise: NoiseSpec,
    pub duration_s: f64,
    pub fps: f64,
}

impl Scenario {
    pub fn from_json(bytes: &[u8]) -> Result<Self, SimError> {
        let s: Self = serde_json::from_slice(bytes)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.cameras.is_empty() {
            return bad("at least one camera is required".into());
        }
        for c in &self.cameras {
            c.camera()?;
        }
        self.extent.validate().map_err(|e| SimError::Invalid(e.to_string()))?;
        let n = &self.noise;
        for (name, r) in [("miss_rate", n.miss_rate), ("confusion_rate", n.confusion_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        if !(n.pixel_sigma >= 0.0) || !n.pixel_sigma.is_finite() {
            return bad(format!("pixel_sigma {} must be non-negative", n.pixel_sigma));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) || !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad("fps must be positive and duration non-negative".into());
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !(a.height_m > 0.0 && a.footprint_w > 0.0 && a.footprint_l > 0.0) {
                return bad(format!("agent {i}: dimensions must be positive"));
            }
            if a.trajectory.is_empty() || a.trajectory.windows(2).any(|w| w[1].t < w[0].t) {
                return bad(format!("agent {i}: trajectory must be non-empty and time-ordered"));
            }
            if let Some(w) = a.trajectory.iter().find(|w| !self.extent.contains([w.x, w.y])) {
                return bad(format!("agent {i}: waypoint ({}, {}) outside the world extent", w.x, w.y));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps + 1e-9).floor() as usize
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    /// Image id of a (camera, frame) pair, starting at 1.
    pub fn image_id(&self, camera: usize, frame: usize) -> u64 {
        (camera * self.frame_count() + frame + 1) as u64
    }
}

/// Ground-truth location of one visible agent in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthObservation {
    /// Ground point imaged at the noiseless mask's footpoint.
    pub observation: GroundObservation,
    pub agent: usize,
    pub annotation_id: u64,
    /// Centre of the cuboid footprint.
    pub agent_xy: [f64; 2],
    pub yaw: f64,
    pub height_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub image_id: u64,
    pub camera: usize,
    pub frame: usize,
    pub ts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub ground_truth: Dataset,
    pub detections: Vec<Annotation>,
    pub truth: Vec<TruthObservation>,
    pub frames: Vec<FrameInfo>,
    /// Agents never fully inside any camera's image.
    pub never_visible: Vec<usize>,
}

impl SimOutput {
    /// Detections grouped per frame in frame order, with timestamps.
    pub fn detections_by_frame(&self) -> Vec<(FrameInfo, Vec<Annotation>)> {
        let mut by: std::collections::BTreeMap<u64, Vec<Annotation>> = std::collections::BTreeMap::new();
        for d in &self.detections {
            by.entry(d.image_id).or_default().push(d.clone());
        }
        self.frames.iter().map(|f| (*f, by.remove(&f.image_id).unwrap_or_default())).collect()
    }
}

/// Ground point projecting to `pixel`, found by Newton iteration on the
/// forward projection from `start`.
pub fn invert_ground_projection(camera: &CameraModel, pixel: Vector2<f64>, start: [f64; 2]) -> Result<[f64; 2], GeometryError> {
    let mut g = Vector2::from(start);
    let f = |g: &Vector2<f64>| camera.project(&Vector3::new(g.x, g.y, 0.0));
    for _ in 0..50 {
        let p = f(&g)?;
        let r = p - pixel;
        if r.norm() < 1e-11 {
            return Ok([g.x, g.y]);
        }
        let h = 1e-6 * g.norm().max(1.0);
        let jx = (f(&(g + Vector2::new(h, 0.0)))? - f(&(g - Vector2::new(h, 0.0)))?) / (2.0 * h);
        let jy = (f(&(g + Vector2::new(0.0, h)))? - f(&(g - Vector2::new(0.0, h)))?) / (2.0 * h);
        let j = Matrix2::from_columns(&[jx, jy]);
        let step = j
            .try_inverse()
            .ok_or_else(|| GeometryError::Degenerate("ground projection Jacobian is singular".into()))?
            * r;
        g -= step;
    }
    let r = (f(&g)? - pixel).norm();
    if r < 1e-8 {
        Ok([g.x, g.y])
    } else {
        Err(GeometryError::NotConverged { iterations: 50, cost: r * r })
    }
}

struct FrameDraws {
    miss: f64,
    confuse: f64,
    pick: f64,
    score: f64,
    noise: [[f64; 2]; NOISE_SLOTS],
}

fn draws(rng: &mut ChaCha8Rng) -> FrameDraws {
    FrameDraws {
        miss: rng.random(),
        confuse: rng.random(),
        pick: rng.random(),
        score: rng.random(),
        noise: std::array::from_fn(|_| [StandardNormal.sample(rng), StandardNormal.sample(rng)]),
    }
}

/// A confusable class: another class of the same super-category, or any other
/// class when the super-category has no other member.
fn confused_class(taxonomy: &Taxonomy, class_id: u32, u: f64) -> u32 {
    let sc = taxonomy.super_category(class_id);
    let mut pool: Vec<u32> = taxonomy
        .classes()
        .iter()
        .filter(|c| c.class_id != class_id && Some(c.super_category) == sc)
        .map(|c| c.class_id)
        .collect();
    if pool.is_empty() {
        pool = taxonomy.classes().iter().map(|c| c.class_id).filter(|&c| c != class_id).collect();
    }
    if pool.is_empty() {
        return class_id;
    }
    pool[((u * pool.len() as f64) as usize).min(pool.len() - 1)]
}

struct RenderedAgent {
    agent: usize,
    gt: Polygon,
    det: Option<(Polygon, u32, f64)>,
    truth: [f64; 2],
    xy: [f64; 2],
    yaw: f64,
}

fn render_frame(
    scenario: &Scenario,
    camera: &CameraModel,
    cam_index: usize,
    frame: usize,
    taxonomy: &Taxonomy,
) -> Result<Vec<RenderedAgent>, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(((cam_index as u64) << 32) | frame as u64);
    let t = scenario.frame_time(frame);
    let (w, h) = (f64::from(camera.image_size.0), f64::from(camera.image_size.1));
    let noise = scenario.noise;
    let mut out = Vec::new();
    for (k, agent) in scenario.agents.iter().enumerate() {
        // Draw for every agent so streams stay aligned across noise settings.
        let d = draws(&mut rng);
        let Some((xy, yaw)) = agent.state(t) else { continue };
        let mut px = Vec::with_capacity(8);
        for c in agent.corners(xy, yaw) {
            match camera.project(&c) {
                Ok(p) if camera.in_image(&p) => px.push(Point2::new(p.x, p.y)),
                _ => break,
            }
        }
        if px.len() < 8 {
            continue;
        }
        let hull = Polygon::new(convex_hull(&px));
        if hull.len() < 3 || hull.area() <= 0.0 {
            continue;
        }
        let probe = Annotation::from_polygons(0, 0, agent.class_id, vec![hull.clone()], None).expect("hull has a bbox");
        let foot = footpoint(&probe).expect("hull has vertices");
        let truth = invert_ground_projection(camera, foot, xy)?;
        let det = (d.miss >= noise.miss_rate).then(|| {
            let mut poly = Polygon::new(
                hull.vertices
                    .iter()
                    .zip(d.noise.iter())
                    .map(|(v, n)| Point2::new(v.x + noise.pixel_sigma * n[0], v.y + noise.pixel_sigma * n[1]))
                    .collect(),
            );
            poly.clamp_to(w, h);
            let class = if d.confuse < noise.confusion_rate {
                confused_class(taxonomy, agent.class_id, d.pick)
            } else {
                agent.class_id
            };
            (poly, class, 0.5 + 0.5 * d.score)
        });
        out.push(RenderedAgent {
            agent: k,
            gt: hull,
            det,
            truth,
            xy,
            yaw,
        });
    }
    Ok(out)
}

/// Projects every agent in every frame of every camera.
pub fn render_detections(scenario: &Scenario, taxonomy: &Taxonomy) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let cameras: Vec<CameraModel> = scenario.cameras.iter().map(|c| c.camera()).collect::<Result<_, _>>()?;
    let n_frames = scenario.frame_count();
    let jobs: Vec<(usize, usize)> = (0..cameras.len()).flat_map(|c| (0..n_frames).map(move |f| (c, f))).collect();
    let rendered: Vec<Vec<RenderedAgent>> = jobs
        .par_iter()
        .map(|&(c, f)| render_frame(scenario, &cameras[c], c, f, taxonomy))
        .collect::<Result<_, _>>()?;

    let mut ds = Dataset {
        categories: taxonomy.categories(),
        ..Dataset::default()
    };
    let mut detections = Vec::new();
    let mut truth = Vec::new();
    let mut frames = Vec::with_capacity(jobs.len());
    let mut seen = vec![false; scenario.agents.len()];
    let (mut gt_id, mut det_id) = (1u64, 1u64);
    for (&(c, f), agents) in jobs.iter().zip(rendered) {
        let image_id = scenario.image_id(c, f);
        let ts = scenario.frame_time(f);
        let cam = &cameras[c];
        let mut img = ImageRecord::new(image_id, format!("cam{c}/frame_{f:06}.jpg"), cam.image_size.0, cam.image_size.1);
        img.extra.insert("scene".into(), json!(format!("cam{c}")));
        img.extra.insert("ts".into(), json!(ts));
        ds.images.push(img);
        frames.push(FrameInfo {
            image_id,
            camera: c,
            frame: f,
            ts,
        });
        for r in agents {
            seen[r.agent] = true;
            let agent = &scenario.agents[r.agent];
            let mut extra = Map::new();
            extra.insert("agent".into(), Value::from(r.agent));
            let mut gt = Annotation::from_polygons(gt_id, image_id, agent.class_id, vec![r.gt], None).expect("hull has a bbox");
            gt.extra = extra.clone();
            ds.annotations.push(gt);
            truth.push(TruthObservation {
                observation: GroundObservation {
                    ts,
                    image_id,
                    class_id: agent.class_id,
                    x: r.truth[0],
                    y: r.truth[1],
                    score: 1.0,
                    source_id: c as u32,
                },
                agent: r.agent,
                annotation_id: gt_id,
                agent_xy: r.xy,
                yaw: r.yaw,
                height_m: agent.height_m,
            });
            gt_id += 1;
            if let Some((poly, class, score)) = r.det {
                if let Some(mut d) = Annotation::from_polygons(det_id, image_id, class, vec![poly], Some(score)) {
                    d.extra = extra;
                    detections.push(d);
                    det_id += 1;
                }
            }
        }
    }
    let never_visible: Vec<usize> = seen.iter().enumerate().filter(|(_, s)| !**s).map(|(k, _)| k).collect();
    for k in &never_visible {
        log::warn!("agent {k} is outside every camera view for the whole scenario");
    }
    Ok(SimOutput {
        ground_truth: ds,
        detections,
        truth,
        frames,
        never_visible,
    })
}

/// A place users gather at, such as steps or a fountain edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attractor {
    pub name: String,
    pub xy: [f64; 2],
}

/// Dwellers stay within this distance of the attractor.
pub const DWELL_RADIUS_M: f64 = 1.0;
pub const WALKING_SPEED_MPS: f64 = 1.3;
pub const CYCLING_SPEED_MPS: f64 = 4.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScenarioSpec {
    pub extent: MapExtent,
    pub attractor: Option<Attractor>,
    pub dwellers: usize,
    pub through_traffic: usize,
    pub duration_s: f64,
    pub fps: f64,
    pub seed: u64,
}

fn pedestrian(taxonomy: &Taxonomy, rng: &mut ChaCha8Rng, trajectory: Vec<Waypoint>, dwelling: bool) -> Agent {
    let class_id = taxonomy
        .class_by_name(if dwelling { "sitter" } else { "pedestrian" })
        .or_else(|| taxonomy.class_by_name("pedestrian"))
        .map_or(1, |c| c.class_id);
    let height: f64 = 1.70 + 0.07 * Distribution::<f64>::sample(&StandardNormal, rng);
    Agent {
        class_id,
        height_m: height.clamp(1.4, 2.0),
        footprint_w: PEDESTRIAN_FOOTPRINT.0,
        footprint_l: PEDESTRIAN_FOOTPRINT.1,
        trajectory,
        rest_yaw: rng.random_range(-PI..PI),
        dwelling,
    }
}

/// Straight walk along the extent's length at a uniform lateral offset,
/// entering at a uniform phase so long-run occupancy is flat.
fn through_walker(spec: &EdgeScenarioSpec, rng: &mut ChaCha8Rng) -> Vec<Waypoint> {
    let e = &spec.extent;
    let lateral = rng.random_range(0.0..=e.width_m);
    let (a, b) = if rng.random_bool(0.5) { (0.0, e.length_m) } else { (e.length_m, 0.0) };
    let travel = e.length_m / WALKING_SPEED_MPS;
    let start = rng.random_range(-travel..spec.duration_s.max(1e-9));
    let p0 = e.to_world([lateral, a]);
    let p1 = e.to_world([lateral, b]);
    vec![
        Waypoint {
            t: start,
            x: p0[0],
            y: p0[1],
        },
        Waypoint {
            t: start + travel,
            x: p1[0],
            y: p1[1],
        },
    ]
}

/// Agents for a density probe: dwellers parked within [`DWELL_RADIUS_M`] of the
/// attractor for the whole run, plus through-traffic. Without an attractor
/// every agent is through-traffic.
pub fn edge_agents(spec: &EdgeScenarioSpec, taxonomy: &Taxonomy) -> Vec<Agent> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut agents = Vec::new();
    if let Some(att) = &spec.attractor {
        for _ in 0..spec.dwellers {
            let p = loop {
                let r = (0.4 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).abs().min(DWELL_RADIUS_M);
                let th = rng.random_range(-PI..PI);
                let p = [att.xy[0] + r * th.cos(), att.xy[1] + r * th.sin()];
                if spec.extent.contains(p) {
                    break p;
                }
            };
            let traj = vec![Waypoint { t: 0.0, x: p[0], y: p[1] }, Waypoint {
                t: spec.duration_s,
                x: p[0],
                y: p[1],
            }];
            agents.push(pedestrian(taxonomy, &mut rng, traj, true));
        }
    }
    for _ in 0..spec.through_traffic {
        let traj = through_walker(spec, &mut rng);
        agents.push(pedestrian(taxonomy, &mut rng, traj, false));
    }
    agents
}

pub fn edge_scenario(spec: &EdgeScenarioSpec, cameras: Vec<CameraFile>, noise: NoiseSpec, taxonomy: &Taxonomy) -> Scenario {
    Scenario {
        seed: spec.seed,
        cameras,
        extent: spec.extent,
        agents: edge_agents(spec, taxonomy),
        noise,
        duration_s: spec.duration_s,
        fps: spec.fps,
    }
}

fn look_at_camera(intr: Intrinsics, dist: Distortion, eye: Vector3<f64>, target: Vector3<f64>, size: (u32, u32)) -> Result<CameraModel, GeometryError> {
    CameraModel::new(intr, dist, Pose::look_at(eye, target)?, size)
}

/// Near edge of the plaza region, metres ahead of the camera.
pub const PLAZA_NEAR_M: f64 = 6.0;
/// Plaza region depth and width, metres.
pub const PLAZA_DEPTH_M: f64 = 14.0;
pub const PLAZA_WIDTH_M: f64 = 16.0;

/// Plaza camera (1108 x 832 px, 4-8 m high) and the plaza region it
/// surveys: a [`PLAZA_WIDTH_M`] x [`PLAZA_DEPTH_M`] rectangle starting
/// [`PLAZA_NEAR_M`] ahead, its length running along the camera heading.
pub fn cullen_rig(seed: u64) -> (CameraModel, MapExtent) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height = rng.random_range(4.0..=8.0);
    let heading: f64 = rng.random_range(-PI..PI);
    let reach = rng.random_range(12.0..18.0);
    let intr = Intrinsics::new(820.0, 820.0, 554.0, 416.0);
    let dist = Distortion {
        k1: -0.08,
        k2: 0.01,
        k3: 0.0,
        p1: 2e-4,
        p2: -1e-4,
    };
    let (sh, ch) = heading.sin_cos();
    let target = Vector3::new(reach * ch, reach * sh, 0.0);
    let cam = look_at_camera(intr, dist, Vector3::new(0.0, 0.0, height), target, (1108, 832)).expect("rig geometry is valid");
    let origin = [PLAZA_NEAR_M * ch - 0.5 * PLAZA_WIDTH_M * sh, PLAZA_NEAR_M * sh + 0.5 * PLAZA_WIDTH_M * ch];
    let extent = MapExtent::new(origin, PLAZA_WIDTH_M, PLAZA_DEPTH_M, heading - 0.5 * PI).expect("positive extent");
    (cam, extent)
}

/// Surveyed ground references: uniform points of `extent` that the camera
/// sees, with exact pixels.
pub fn ground_references(camera: &CameraModel, extent: &MapExtent, count: usize, seed: u64) -> Vec<Correspondence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count && tries < 10_000 * count.max(1) {
        tries += 1;
        let p = extent.to_world([rng.random_range(0.0..=extent.width_m), rng.random_range(0.0..=extent.length_m)]);
        let g = Vector3::new(p[0], p[1], 0.0);
        match camera.project(&g) {
            Ok(px) if camera.in_image(&px) => out.push(Correspondence::new(g, px)),
            _ => {}
        }
    }
    out
}

/// Greenway camera: 1280 x 720 px, 6.5 m high on the path's centre line and
/// 10 m behind the near edge of a 4.5 m x 32 m extent, which it sees whole.
pub fn dequindre_rig() -> (CameraModel, MapExtent) {
    let intr = Intrinsics::new(1000.0, 1000.0, 640.0, 360.0);
    let dist = Distortion::radial(-0.05, 0.0, 0.0);
    let cam = look_at_camera(intr, dist, Vector3::new(0.0, -6.0, 6.5), Vector3::new(0.0, 18.0, 0.0), (1280, 720)).expect("rig geometry is valid");
    let extent = MapExtent::new([-2.25, 4.0], 4.5, 32.0, 0.0).expect("positive extent");
    (cam, extent)
}

/// Four cyclists riding the length of the greenway extent plus `pedestrians`
/// walkers, all inside the extent.
pub fn dequindre_scenario(pedestrians: usize, noise: NoiseSpec, seed: u64, taxonomy: &Taxonomy) -> Scenario {
    let (cam, extent) = dequindre_rig();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cyclist = taxonomy.class_by_name("cyclist").map_or(1, |c| c.class_id);
    let duration = extent.length_m / CYCLING_SPEED_MPS;
    let mut agents = Vec::new();
    for k in 0..4 {
        let lateral = 0.6 + 1.1 * k as f64;
        let northbound = k % 2 == 0;
        let (a, b) = if northbound { (0.9, extent.length_m - 0.9) } else { (extent.length_m - 0.9, 0.9) };
        let p0 = extent.to_world([lateral, a]);
        let p1 = extent.to_world([lateral, b]);
        agents.push(Agent {
            class_id: cyclist,
            height_m: rng.random_range(1.6..1.8),
            footprint_w: CYCLIST_FOOTPRINT.0,
            footprint_l: CYCLIST_FOOTPRINT.1,
            trajectory: vec![Waypoint { t: 0.0, x: p0[0], y: p0[1] }, Waypoint {
                t: duration,
                x: p1[0],
                y: p1[1],
            }],
            rest_yaw: 0.0,
            dwelling: false,
        });
    }
    let spec = EdgeScenarioSpec {
        extent,
        attractor: None,
        dwellers: 0,
        through_traffic: 0,
        duration_s: duration,
        fps: 5.0,
        seed,
    };
    for _ in 0..pedestrians {
        let lateral = rng.random_range(0.5..4.0);
        let along = rng.random_range(1.0..extent.length_m - 1.0);
        let end = (along + WALKING_SPEED_MPS * duration).min(extent.length_m - 0.5);
        let p0 = extent.to_world([lateral, along]);
        let p1 = extent.to_world([lateral, end]);
        let traj = vec![Waypoint { t: 0.0, x: p0[0], y: p0[1] }, Waypoint {
            t: duration,
            x: p1[0],
            y: p1[1],
        }];
        agents.push(pedestrian(taxonomy, &mut rng, traj, false));
    }
    Scenario {
        seed,
        cameras: vec![CameraFile::from_camera(&cam)],
        extent: spec.extent,
        agents,
        noise,
        duration_s: duration,
        fps: spec.fps,
    }
}

/// Stationary pedestrians and cyclists scattered over the part of the extent
/// seen by `camera`, for localization studies. A single frame at t = 0.
pub fn scatter_scenario(camera: &CameraModel, extent: MapExtent, count: usize, noise: NoiseSpec, seed: u64, taxonomy: &Taxonomy) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cyclist = taxonomy.class_by_name("cyclist").map_or(1, |c| c.class_id);
    let mut agents = Vec::with_capacity(count);
    let mut guard = 0;
    while agents.len() < count && guard < 1000 * count.max(1) {
        guard += 1;
        let p = extent.to_world([rng.random_range(0.0..extent.width_m), rng.random_range(0.0..extent.length_m)]);
        let is_cyclist = rng.random_bool(0.3);
        let mut a = pedestrian(taxonomy, &mut rng, vec![Waypoint { t: 0.0, x: p[0], y: p[1] }], false);
        if is_cyclist {
            a.class_id = cyclist;
            a.footprint_w = CYCLIST_FOOTPRINT.0;
            a.footprint_l = CYCLIST_FOOTPRINT.1;
        }
        // Keep agents fully in view and clear of each other.
        let visible = a
            .corners(p, a.rest_yaw)
            .iter()
            .all(|c| camera.project(c).is_ok_and(|px| camera.in_image(&px)));
        let clear = agents.iter().all(|b: &Agent| {
            let q = b.trajectory[0];
            (q.x - p[0]).hypot(q.y - p[1]) > 2.0
        });
        if visible && clear {
            agents.push(a);
        }
    }
    Scenario {
        seed,
        cameras: vec![CameraFile::from_camera(camera)],
        extent,
        agents,
        noise,
        duration_s: 1.0,
        fps: 1.0,
    }
}
