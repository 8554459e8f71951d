//! Long-term observation store and kernel density rasters.
//!
//! Rasters hold fixed-point counts per cell (`2^32` ticks per count). Each
//! observation's kernel is rounded to ticks on its own, so rendering is exactly
//! linear over observation subsets and merging is bitwise commutative and
//! associative.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::statistics::{Data, OrderStatistics, Statistics};

use crate::mapping::{GroundObservation, MapExtent, MappingError};

/// Ticks per observation count.
pub const TICKS_PER_COUNT: f64 = 4_294_967_296.0;
pub const DEFAULT_CELL_SIZE_M: f64 = 0.25;
/// Kernel support in bandwidths; the tail beyond is below 1e-15.
const KERNEL_RADIUS_SIGMAS: f64 = 8.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DensityError {
    #[error("sampling rate must be positive and finite, got {0}")]
    InvalidFps(f64),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error(transparent)]
    Extent(#[from] MappingError),
    #[error("source {source_id}: timestamp {ts} precedes {previous}")]
    NonMonotoneTimestamp { source_id: u32, ts: f64, previous: f64 },
    #[error("observation has non-finite fields")]
    NonFinite,
    #[error("rasters differ in {0}")]
    GridMismatch(&'static str),
    #[error("raster cell count overflow")]
    Overflow,
    #[error("grid of {0} cells is too large")]
    GridTooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SourceState {
    last_ts: f64,
    window: i64,
    kept_image: u64,
}

/// Append-only observation log with per-source decimation state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationStore {
    observations: Vec<GroundObservation>,
    sources: BTreeMap<u32, SourceState>,
}

impl ObservationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observations(&self) -> &[GroundObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Distinct `(source, image)` frames held.
    pub fn frame_count(&self) -> usize {
        self.observations.iter().map(|o| (o.source_id, o.image_id)).collect::<BTreeSet<_>>().len()
    }

    /// Counts keyed by `(class, floor(ts / bucket_s))`.
    pub fn counts_by_class_bucket(&self, bucket_s: f64) -> BTreeMap<(u32, i64), usize> {
        let mut out = BTreeMap::new();
        for o in &self.observations {
            *out.entry((o.class_id, (o.ts / bucket_s).floor() as i64)).or_insert(0) += 1;
        }
        out
    }
}

/// Sampling window index of a timestamp; the epsilon absorbs `k / fps * fps`
/// rounding below an integer.
fn window_of(ts: f64, fps: f64) -> i64 {
    (ts * fps + 1e-9).floor() as i64
}

/// Appends observations, keeping per source only the first frame of each
/// `1 / fps` window. Timestamps must not decrease within a source.
pub fn accumulate(store: &mut ObservationStore, observations: &[GroundObservation], sampling_fps: f64) -> Result<(), DensityError> {
    if !(sampling_fps > 0.0) || !sampling_fps.is_finite() {
        return Err(DensityError::InvalidFps(sampling_fps));
    }
    if observations.iter().any(|o| !(o.ts.is_finite() && o.x.is_finite() && o.y.is_finite())) {
        return Err(DensityError::NonFinite);
    }
    // Validate ordering before mutating so a rejected batch leaves the store intact.
    let mut last: HashMap<u32, f64> = store.sources.iter().map(|(k, s)| (*k, s.last_ts)).collect();
    for o in observations {
        if let Some(&prev) = last.get(&o.source_id) {
            if o.ts < prev {
                return Err(DensityError::NonMonotoneTimestamp {
                    source_id: o.source_id,
                    ts: o.ts,
                    previous: prev,
                });
            }
        }
        last.insert(o.source_id, o.ts);
    }
    for o in observations {
        let w = window_of(o.ts, sampling_fps);
        let keep = match store.sources.get_mut(&o.source_id) {
            None => {
                store.sources.insert(
                    o.source_id,
                    SourceState {
                        last_ts: o.ts,
                        window: w,
                        kept_image: o.image_id,
                    },
                );
                true
            }
            Some(s) => {
                s.last_ts = o.ts;
                if w > s.window {
                    s.window = w;
                    s.kept_image = o.image_id;
                    true
                } else {
                    o.image_id == s.kept_image
                }
            }
        };
        if keep {
            store.observations.push(*o);
        }
    }
    Ok(())
}

/// Observation selection for rendering. The time window is half-open.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<BTreeSet<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_window: Option<[f64; 2]>,
}

impl DensityFilter {
    pub fn accepts(&self, o: &GroundObservation) -> bool {
        self.classes.as_ref().is_none_or(|c| c.contains(&o.class_id))
            && self.time_window.is_none_or(|[t0, t1]| o.ts >= t0 && o.ts < t1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed(f64),
    Auto,
}

impl std::str::FromStr for Bandwidth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        s.parse::<f64>()
            .map(Self::Fixed)
            .map_err(|_| format!("bandwidth must be a number of meters or \"auto\", got {s:?}"))
    }
}

/// Silverman's rule for a 2D Gaussian kernel: per axis
/// `min(std, IQR / 1.349) * n^(-1/6)`, combined by geometric mean and floored
/// at `floor_m`.
pub fn silverman_bandwidth(points: &[[f64; 2]], floor_m: f64) -> f64 {
    if points.len() < 2 {
        return floor_m;
    }
    let n = points.len() as f64;
    let axis = |k: usize| {
        let v: Vec<f64> = points.iter().map(|p| p[k]).collect();
        let sd = v.as_slice().std_dev();
        let mut data = Data::new(v);
        let iqr = data.interquartile_range();
        let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
        spread * n.powf(-1.0 / 6.0)
    };
    let h = (axis(0) * axis(1)).sqrt();
    if h.is_finite() && h > floor_m {
        h
    } else {
        floor_m
    }
}

/// Gridded density over a map extent. Cell `(i, j)` covers
/// `[i, i+1) x [j, j+1)` cell sizes in extent-local coordinates, row-major by `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRaster {
    pub extent: MapExtent,
    pub cell_size: f64,
    pub bandwidth: f64,
    pub nx: usize,
    pub ny: usize,
    ticks: Vec<u64>,
    pub total_count: u64,
    pub out_of_extent: u64,
    pub classes: Option<BTreeSet<u32>>,
    pub time_window: Option<[f64; 2]>,
}

const MAX_CELLS: usize = 1 << 26;

fn grid_dims(extent: &MapExtent, cell_size: f64) -> Result<(usize, usize), DensityError> {
    extent.validate()?;
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(DensityError::InvalidCellSize(cell_size));
    }
    let nx = (extent.width_m / cell_size - 1e-9).ceil().max(1.0);
    let ny = (extent.length_m / cell_size - 1e-9).ceil().max(1.0);
    let cells = nx * ny;
    if cells > MAX_CELLS as f64 {
        return Err(DensityError::GridTooLarge(cells as usize));
    }
    Ok((nx as usize, ny as usize))
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Kernel mass per cell along one axis over the cells within the kernel
/// support; returns the first cell index and the masses.
fn axis_masses(mu: f64, sigma: f64, cell: f64, n: usize) -> (usize, Vec<f64>) {
    let r = KERNEL_RADIUS_SIGMAS * sigma;
    let lo = ((mu - r) / cell).floor().max(0.0) as usize;
    let hi = (((mu + r) / cell).ceil().max(0.0) as usize).min(n);
    let lo = lo.min(hi);
    let mut prev = normal_cdf((lo as f64 * cell - mu) / sigma);
    let masses = (lo..hi)
        .map(|i| {
            let next = normal_cdf(((i + 1) as f64 * cell - mu) / sigma);
            let m = next - prev;
            prev = next;
            m
        })
        .collect();
    (lo, masses)
}

impl DensityRaster {
    /// All-zero raster; the identity for [`merge_rasters`].
    pub fn zero(extent: MapExtent, cell_size: f64, bandwidth: f64) -> Result<Self, DensityError> {
        let (nx, ny) = grid_dims(&extent, cell_size)?;
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(DensityError::InvalidBandwidth(bandwidth));
        }
        Ok(Self {
            extent,
            cell_size,
            bandwidth,
            nx,
            ny,
            ticks: vec![0; nx * ny],
            total_count: 0,
            out_of_extent: 0,
            classes: None,
            time_window: None,
        })
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    /// Raw fixed-point cell masses.
    pub fn ticks(&self) -> &[u64] {
        &self.ticks
    }

    /// Expected count in each cell.
    pub fn counts(&self) -> Vec<f64> {
        self.ticks.iter().map(|&t| t as f64 / TICKS_PER_COUNT).collect()
    }

    /// Density in counts per square meter.
    pub fn values(&self) -> Vec<f64> {
        let a = self.cell_area();
        self.ticks.iter().map(|&t| t as f64 / TICKS_PER_COUNT / a).collect()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.ticks[j * self.nx + i] as f64 / TICKS_PER_COUNT / self.cell_area()
    }

    /// Integral of the density over the grid, in counts.
    pub fn mass(&self) -> f64 {
        self.ticks.iter().map(|&t| t as f64).sum::<f64>() / TICKS_PER_COUNT
    }

    /// Cell with the highest density (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, &t) in self.ticks.iter().enumerate() {
            if t > self.ticks[best] {
                best = k;
            }
        }
        (best % self.nx, best / self.nx)
    }

    /// World coordinates of a cell centre.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        self.extent
            .to_world([(i as f64 + 0.5) * self.cell_size, (j as f64 + 0.5) * self.cell_size])
    }

    fn add_kernel(&self, grid: &mut [u64], local: [f64; 2]) -> Result<(), DensityError> {
        let (x0, mx) = axis_masses(local[0], self.bandwidth, self.cell_size, self.nx);
        let (y0, my) = axis_masses(local[1], self.bandwidth, self.cell_size, self.ny);
        let total = mx.iter().sum::<f64>() * my.iter().sum::<f64>();
        if !(total > 1e-300) {
            // Kernel far narrower than a cell with no representable mass: the
            // containing cell takes the whole count.
            let i = ((local[0] / self.cell_size) as usize).min(self.nx - 1);
            let j = ((local[1] / self.cell_size) as usize).min(self.ny - 1);
            let cell = &mut grid[j * self.nx + i];
            *cell = cell.checked_add(TICKS_PER_COUNT as u64).ok_or(DensityError::Overflow)?;
            return Ok(());
        }
        let scale = TICKS_PER_COUNT / total;
        for (dj, wy) in my.iter().enumerate() {
            let row = (y0 + dj) * self.nx;
            for (di, wx) in mx.iter().enumerate() {
                let t = (wx * wy * scale).round() as u64;
                if t > 0 {
                    let cell = &mut grid[row + x0 + di];
                    *cell = cell.checked_add(t).ok_or(DensityError::Overflow)?;
                }
            }
        }
        Ok(())
    }
}

/// Renders a Gaussian KDE of the filtered observations. Each in-extent
/// observation contributes exactly one count, renormalized over the grid;
/// observations outside the extent are tallied and left out.
pub fn kde_density(
    store: &ObservationStore,
    filter: &DensityFilter,
    extent: &MapExtent,
    cell_size: f64,
    bandwidth: Bandwidth,
) -> Result<DensityRaster, DensityError> {
    kde_from_observations(store.observations(), filter, extent, cell_size, bandwidth)
}

pub fn kde_from_observations(
    observations: &[GroundObservation],
    filter: &DensityFilter,
    extent: &MapExtent,
    cell_size: f64,
    bandwidth: Bandwidth,
) -> Result<DensityRaster, DensityError> {
    grid_dims(extent, cell_size)?;
    let mut out_of_extent = 0u64;
    let mut local = Vec::new();
    for o in observations.iter().filter(|o| filter.accepts(o)) {
        if extent.contains(o.xy()) {
            let [a, b] = extent.to_local(o.xy());
            local.push([a, b]);
        } else {
            out_of_extent += 1;
        }
    }
    let bw = match bandwidth {
        Bandwidth::Fixed(h) => {
            if !(h > 0.0) || !h.is_finite() {
                return Err(DensityError::InvalidBandwidth(h));
            }
            h
        }
        Bandwidth::Auto => silverman_bandwidth(&local, cell_size),
    };
    let mut raster = DensityRaster::zero(*extent, cell_size, bw)?;
    raster.out_of_extent = out_of_extent;
    raster.classes = filter.classes.clone();
    raster.time_window = filter.time_window;
    raster.total_count = local.len() as u64;
    let cells = raster.ticks.len();
    let grid = local
        .par_chunks(256)
        .map(|chunk| {
            let mut g = vec![0u64; cells];
            for p in chunk {
                raster.add_kernel(&mut g, *p)?;
            }
            Ok::<_, DensityError>(g)
        })
        .try_reduce(
            || vec![0u64; cells],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = x.checked_add(y).ok_or(DensityError::Overflow)?;
                }
                Ok(a)
            },
        )?;
    raster.ticks = grid;
    Ok(raster)
}

/// Cellwise sum of two rasters on the same grid and bandwidth.
pub fn merge_rasters(a: &DensityRaster, b: &DensityRaster) -> Result<DensityRaster, DensityError> {
    if a.extent != b.extent {
        return Err(DensityError::GridMismatch("extent"));
    }
    if a.cell_size.to_bits() != b.cell_size.to_bits() {
        return Err(DensityError::GridMismatch("cell size"));
    }
    if a.bandwidth.to_bits() != b.bandwidth.to_bits() {
        return Err(DensityError::GridMismatch("bandwidth"));
    }
    let ticks = a
        .ticks
        .iter()
        .zip(&b.ticks)
        .map(|(x, y)| x.checked_add(*y).ok_or(DensityError::Overflow))
        .collect::<Result<Vec<_>, _>>()?;
    let classes = match (&a.classes, &b.classes) {
        (Some(x), Some(y)) => Some(x.union(y).copied().collect()),
        _ => None,
    };
    let time_window = match (a.time_window, b.time_window) {
        (Some([a0, a1]), Some([b0, b1])) => Some([a0.min(b0), a1.max(b1)]),
        _ => None,
    };
    Ok(DensityRaster {
        extent: a.extent,
        cell_size: a.cell_size,
        bandwidth: a.bandwidth,
        nx: a.nx,
        ny: a.ny,
        ticks,
        total_count: a.total_count + b.total_count,
        out_of_extent: a.out_of_extent + b.out_of_extent,
        classes,
        time_window,
    })
}

/// Georeference and provenance written next to a raster grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub extent: MapExtent,
    pub cell_size: f64,
    pub bandwidth: f64,
    pub nx: usize,
    pub ny: usize,
    pub total_count: u64,
    pub out_of_extent: u64,
    pub time_window: Option<[f64; 2]>,
    pub classes: Option<BTreeSet<u32>>,
    pub units: String,
    /// Grid rows in the CSV run along increasing extent-local length.
    pub row_order: String,
}

impl DensityRaster {
    pub fn header(&self) -> RasterHeader {
        RasterHeader {
            extent: self.extent,
            cell_size: self.cell_size,
            bandwidth: self.bandwidth,
            nx: self.nx,
            ny: self.ny,
            total_count: self.total_count,
            out_of_extent: self.out_of_extent,
            time_window: self.time_window,
            classes: self.classes.clone(),
            units: "counts/m^2".into(),
            row_order: "increasing_length".into(),
        }
    }

    /// One CSV line per row `j`, densities separated by commas.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for j in 0..self.ny {
            let row: Vec<String> = (0..self.nx).map(|i| format!("{:.9e}", self.value(i, j))).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Binary 8-bit PGM scaled to the maximum cell, first image row at the
    /// far end of the extent.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let max = self.ticks.iter().copied().max().unwrap_or(0).max(1) as f64;
        write!(w, "P5\n{} {}\n255\n", self.nx, self.ny)?;
        let mut bytes = Vec::with_capacity(self.ticks.len());
        for j in (0..self.ny).rev() {
            for i in 0..self.nx {
                bytes.push((self.ticks[j * self.nx + i] as f64 / max * 255.0).round() as u8);
            }
        }
        w.write_all(&bytes)
    }
}
