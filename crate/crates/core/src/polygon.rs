//! Planar polygon helpers shared by the annotation, mapping and evaluation code.
//!
//! All coordinates are pixels with a top-left origin, +x right and +y down.

use serde::{Deserialize, Serialize};

/// A pixel-space point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box in COCO `[x, y, w, h]` layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Largest absolute coordinate difference between two boxes' corners.
    pub fn max_corner_deviation(&self, other: &BBox) -> f64 {
        [
            (self.x - other.x).abs(),
            (self.y - other.y).abs(),
            (self.right() - other.right()).abs(),
            (self.bottom() - other.bottom()).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// A simple closed polygon given by its vertices in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Self {
        Self { vertices }
    }

    /// Builds a polygon from COCO's flat `[x1, y1, x2, y2, ...]` layout.
    /// Returns `None` when the list has odd length.
    pub fn from_flat(coords: &[f64]) -> Option<Self> {
        if !coords.len().is_multiple_of(2) {
            return None;
        }
        Some(Self::new(
            coords.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect(),
        ))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn rectangle(b: BBox) -> Self {
        Self::new(vec![
            Point2::new(b.x, b.y),
            Point2::new(b.right(), b.y),
            Point2::new(b.right(), b.bottom()),
            Point2::new(b.x, b.bottom()),
        ])
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Signed shoelace area; positive for counter-clockwise order in a y-up frame.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a.x * b.y - b.x * a.y;
        }
        0.5 * acc
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                (b.x - a.x).hypot(b.y - a.y)
            })
            .sum()
    }

    pub fn bbox(&self) -> Option<BBox> {
        bbox_of_points(self.vertices.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.vertices.iter().all(|p| p.x.is_finite() && p.y.is_finite())
    }

    /// Clamps every vertex into `[0, width] x [0, height]`; returns whether
    /// anything moved.
    pub fn clamp_to(&mut self, width: f64, height: f64) -> bool {
        let mut moved = false;
        for p in &mut self.vertices {
            let cx = p.x.clamp(0.0, width);
            let cy = p.y.clamp(0.0, height);
            moved |= cx != p.x || cy != p.y;
            p.x = cx;
            p.y = cy;
        }
        moved
    }
}

/// Sum of part areas for a multi-part segmentation.
pub fn total_area(parts: &[Polygon]) -> f64 {
    parts.iter().map(Polygon::area).sum()
}

/// Tight axis-aligned hull over all parts.
pub fn hull_bbox(parts: &[Polygon]) -> Option<BBox> {
    bbox_of_points(parts.iter().flat_map(|p| p.vertices.iter().copied()))
}

fn bbox_of_points(points: impl Iterator<Item = Point2>) -> Option<BBox> {
    let mut any = false;
    let (mut x0, mut y0, mut x1, mut y1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in points {
        any = true;
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    any.then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
}

/// Convex hull (Andrew's monotone chain), counter-clockwise in a y-up frame,
/// without repeated endpoint.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point2, a: Point2, b: Point2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut lower: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shoelace_rectangle() {
        let p = Polygon::rectangle(BBox::new(10.0, 20.0, 10.0, 30.0));
        assert_eq!(p.area(), 300.0);
        assert_eq!(p.perimeter(), 80.0);
        assert_eq!(p.bbox(), Some(BBox::new(10.0, 20.0, 10.0, 30.0)));
    }

    #[test]
    fn orientation_does_not_change_area() {
        let mut p = Polygon::from_flat(&[0.0, 0.0, 4.0, 0.0, 0.0, 3.0]).unwrap();
        let a = p.area();
        p.vertices.reverse();
        assert_eq!(p.area(), a);
        assert_eq!(a, 6.0);
    }

    #[test]
    fn odd_flat_list_rejected() {
        assert!(Polygon::from_flat(&[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn hull_drops_interior_points() {
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(2.0, 2.0),
            Point2::new(0.0, 2.0),
        ];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert_eq!(Polygon::new(h).area(), 4.0);
    }
}
