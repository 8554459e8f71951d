//! Ground-plane behavioral mapping for calibrated monocular surveillance
//! cameras: class taxonomy and treatments, COCO/LabelMe I/O, pinhole camera
//! calibration and back-projection, per-frame user mapping, long-term density
//! rasters, COCO-style detector evaluation with error diagnosis, and a
//! synthetic scene simulator used as a ground-truth oracle.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod coco;
pub mod density;
pub mod eval;
pub mod mapping;
pub mod polygon;
pub mod sim;
pub mod taxonomy;
