//! Box and mask overlap.

use crate::polygon::{BBox, Polygon};

use super::EvalError;

/// Intersection over union of two boxes.
pub fn iou_bbox(a: &BBox, b: &BBox) -> Result<f64, EvalError> {
    if !a.is_valid() || !b.is_valid() {
        return Err(EvalError::DegenerateBox);
    }
    Ok(iou_bbox_unchecked(a, b))
}

pub(crate) fn iou_bbox_unchecked(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    // Edge differences can exceed a box's own extent by an ulp.
    let inter = iw.min(a.w).min(b.w) * ih.min(a.h).min(b.h);
    inter / (a.area() + b.area() - inter)
}

/// Horizontal run of filled pixels `[x0, x1)` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Span {
    y: u32,
    x0: u32,
    x1: u32,
}

/// Binary mask at image resolution stored as sorted, disjoint row spans.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpanMask {
    spans: Vec<Span>,
}

impl SpanMask {
    /// Union of the even-odd fills of the parts. A pixel is filled when its
    /// centre lies inside; pixels outside `width x height` are dropped.
    pub fn rasterize(parts: &[Polygon], width: u32, height: u32) -> Result<Self, EvalError> {
        let (w, h) = (f64::from(width), f64::from(height));
        let mut spans = Vec::new();
        let mut crossings = Vec::new();
        for part in parts {
            let Some(bb) = part.bbox() else {
                return Err(EvalError::DegeneratePolygon);
            };
            if bb.right() < 0.0 || bb.bottom() < 0.0 || bb.x > w || bb.y > h {
                return Err(EvalError::PolygonOutsideImage);
            }
            let v = &part.vertices;
            let y_start = (bb.y - 0.5).ceil().max(0.0) as u32;
            let y_end = ((bb.bottom() - 0.5).floor() + 1.0).clamp(0.0, h) as u32;
            for y in y_start..y_end {
                let yc = f64::from(y) + 0.5;
                crossings.clear();
                for k in 0..v.len() {
                    let p = v[k];
                    let q = v[(k + 1) % v.len()];
                    if (p.y <= yc) != (q.y <= yc) {
                        crossings.push(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
                    }
                }
                crossings.sort_by(f64::total_cmp);
                for pair in crossings.chunks_exact(2) {
                    let x0 = (pair[0] - 0.5).ceil().clamp(0.0, w) as u32;
                    let x1 = (pair[1] - 0.5).ceil().clamp(0.0, w) as u32;
                    if x1 > x0 {
                        spans.push(Span { y, x0, x1 });
                    }
                }
            }
        }
        spans.sort_unstable();
        let mut merged: Vec<Span> = Vec::with_capacity(spans.len());
        for s in spans {
            match merged.last_mut() {
                Some(last) if last.y == s.y && s.x0 <= last.x1 => last.x1 = last.x1.max(s.x1),
                _ => merged.push(s),
            }
        }
        Ok(Self { spans: merged })
    }

    pub fn area(&self) -> u64 {
        self.spans.iter().map(|s| u64::from(s.x1 - s.x0)).sum()
    }

    pub fn intersection_area(&self, other: &Self) -> u64 {
        let (a, b) = (&self.spans, &other.spans);
        let (mut i, mut j, mut total) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let (sa, sb) = (a[i], b[j]);
            if sa.y != sb.y {
                if sa.y < sb.y {
                    i += 1;
                } else {
                    j += 1;
                }
                continue;
            }
            let lo = sa.x0.max(sb.x0);
            let hi = sa.x1.min(sb.x1);
            if hi > lo {
                total += u64::from(hi - lo);
            }
            if sa.x1 < sb.x1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }

    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// IoU of the rasterized masks of two polygon sets.
pub fn iou_mask(a: &[Polygon], b: &[Polygon], image_size: (u32, u32)) -> Result<f64, EvalError> {
    let ma = SpanMask::rasterize(a, image_size.0, image_size.1)?;
    let mb = SpanMask::rasterize(b, image_size.0, image_size.1)?;
    Ok(ma.iou(&mb))
}
