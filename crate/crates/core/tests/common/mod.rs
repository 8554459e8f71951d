//! Pipelines shared by several test targets.
#![allow(dead_code)]

pub mod coco_reference;
pub mod eval_fixtures;

use possense::camera::io::CameraFile;
use possense::coco::Annotation;
use possense::density::{accumulate, kde_density, Bandwidth, DensityFilter, DensityRaster, ObservationStore, DEFAULT_CELL_SIZE_M};
use possense::mapping::{map_frames, MapContext};
use possense::sim::*;
use possense::taxonomy::{Taxonomy, TreatmentMode};

pub struct EdgeProbe {
    pub raster: DensityRaster,
    pub attractor: [f64; 2],
    pub frames_kept: usize,
}

/// Plaza rig with fountain steps near the far edge: render, map every frame,
/// decimate to 1 fps and render a density at `bandwidth`.
pub fn edge_probe(seed: u64, sigma: f64, bandwidth: Bandwidth) -> EdgeProbe {
    let t = Taxonomy::opos();
    let (cam, extent) = cullen_rig(seed);
    let attractor = extent.to_world([0.5 * extent.width_m, extent.length_m - 1.5]);
    let spec = EdgeScenarioSpec {
        extent,
        attractor: Some(Attractor {
            name: "fountain steps".into(),
            xy: attractor,
        }),
        dwellers: 12,
        through_traffic: 12,
        duration_s: 60.0,
        fps: 5.0,
        seed,
    };
    let noise = NoiseSpec {
        pixel_sigma: sigma,
        ..NoiseSpec::NONE
    };
    let scenario = edge_scenario(&spec, vec![CameraFile::from_camera(&cam)], noise, &t);
    let out = render_detections(&scenario, &t).unwrap();
    let frames: Vec<(f64, Vec<Annotation>)> = out.detections_by_frame().into_iter().map(|(f, d)| (f.ts, d)).collect();
    let ctx = MapContext {
        camera: &cam,
        taxonomy: &t,
        treatment: t.treatment(TreatmentMode::Merging),
        extent: Some(extent),
        priors: None,
        source_id: 0,
    };
    let mut store = ObservationStore::new();
    for m in map_frames(&frames, &ctx) {
        accumulate(&mut store, &m.observations, 1.0).unwrap();
    }
    let raster = kde_density(&store, &DensityFilter::default(), &extent, DEFAULT_CELL_SIZE_M, bandwidth).unwrap();
    EdgeProbe {
        raster,
        attractor,
        frames_kept: store.frame_count(),
    }
}

impl EdgeProbe {
    pub fn argmax_distance(&self) -> f64 {
        let (i, j) = self.raster.argmax();
        let c = self.raster.cell_center(i, j);
        (c[0] - self.attractor[0]).hypot(c[1] - self.attractor[1])
    }
}
