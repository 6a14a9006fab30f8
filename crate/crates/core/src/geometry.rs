//! Planar polygon helpers in projected (meter) coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Extent;

pub type Point = (f64, f64);

/// Simple polygon with optional holes. Rings are stored open (the closing
/// vertex is not repeated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    #[serde(default)]
    pub holes: Vec<Vec<Point>>,
}

fn open_ring(mut ring: Vec<Point>) -> Vec<Point> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

fn ring_signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    let mut s = 0.0;
    for i in 0..n {
        let (x0, y0) = ring[i];
        let (x1, y1) = ring[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s
}

fn ring_edges(ring: &[Point]) -> impl Iterator<Item = (Point, Point)> + '_ {
    let n = ring.len();
    (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Closed-segment intersection test.
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Euclidean distance from a point to a closed segment.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

fn segment_distance(a: Point, b: Point, c: Point, d: Point) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

fn ring_contains(ring: &[Point], p: Point) -> bool {
    let mut inside = false;
    for (a, b) in ring_edges(ring) {
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) / (b.1 - a.1) * (b.0 - a.0);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    inside
}

impl Polygon {
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Self {
        Polygon {
            exterior: open_ring(exterior),
            holes: holes.into_iter().map(open_ring).collect(),
        }
    }

    /// Axis-aligned rectangle.
    pub fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Polygon::new(
            vec![(min_x, min_y), (max_x, min_y), (max_x, max_y), (min_x, max_y)],
            vec![],
        )
    }

    pub fn rings(&self) -> impl Iterator<Item = &Vec<Point>> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings().flat_map(|r| ring_edges(r))
    }

    pub fn area(&self) -> f64 {
        ring_signed_area(&self.exterior).abs()
            - self.holes.iter().map(|h| ring_signed_area(h).abs()).sum::<f64>()
    }

    /// Area centroid of the exterior ring minus holes.
    pub fn centroid(&self) -> Point {
        let mut a_tot = 0.0;
        let (mut cx, mut cy) = (0.0, 0.0);
        for (k, ring) in self.rings().enumerate() {
            let a = ring_signed_area(ring);
            let sign = if k == 0 { a.signum() } else { -a.signum() };
            let mut sx = 0.0;
            let mut sy = 0.0;
            for (p, q) in ring_edges(ring) {
                let cross = p.0 * q.1 - q.0 * p.1;
                sx += (p.0 + q.0) * cross;
                sy += (p.1 + q.1) * cross;
            }
            cx += sign * sx / 6.0;
            cy += sign * sy / 6.0;
            a_tot += sign * a;
        }
        (cx / a_tot, cy / a_tot)
    }

    pub fn bbox(&self) -> Extent {
        let mut e = Extent {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for &(x, y) in &self.exterior {
            e.min_x = e.min_x.min(x);
            e.min_y = e.min_y.min(y);
            e.max_x = e.max_x.max(x);
            e.max_y = e.max_y.max(y);
        }
        e
    }

    /// Even-odd containment; points exactly on an edge may fall either way.
    pub fn contains(&self, p: Point) -> bool {
        ring_contains(&self.exterior, p) && !self.holes.iter().any(|h| ring_contains(h, p))
    }

    /// Distance from a point to the polygon (0 inside or on the boundary).
    pub fn distance_to_point(&self, p: Point) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Boundary-to-boundary distance; 0 when the polygons touch, overlap or nest.
    pub fn distance_to_polygon(&self, other: &Polygon) -> f64 {
        if self.contains(other.exterior[0]) || other.contains(self.exterior[0]) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for (a, b) in self.edges() {
            for (c, d) in other.edges() {
                let dist = segment_distance(a, b, c, d);
                if dist < best {
                    best = dist;
                    if best == 0.0 {
                        return 0.0;
                    }
                }
            }
        }
        best
    }

    /// Rejects rings with fewer than three vertices, zero area, non-finite
    /// coordinates or self-intersections.
    pub fn validate(&self) -> Result<()> {
        for ring in self.rings() {
            if ring.len() < 3 {
                return Err(Error::InvalidGeometry(format!(
                    "ring has {} vertices, need at least 3",
                    ring.len()
                )));
            }
            if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(Error::InvalidGeometry("non-finite coordinate".into()));
            }
            if ring_signed_area(ring) == 0.0 {
                return Err(Error::InvalidGeometry("degenerate ring with zero area".into()));
            }
            let n = ring.len();
            for i in 0..n {
                let (a, b) = (ring[i], ring[(i + 1) % n]);
                for j in i + 1..n {
                    // adjacent edges share a vertex
                    if j == i + 1 || (i == 0 && j == n - 1) {
                        continue;
                    }
                    let (c, d) = (ring[j], ring[(j + 1) % n]);
                    if segments_intersect(a, b, c, d) {
                        return Err(Error::InvalidGeometry("self-intersecting ring".into()));
                    }
                }
            }
        }
        if self.area() <= 0.0 {
            return Err(Error::InvalidGeometry("non-positive area".into()));
        }
        Ok(())
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        let mv = |r: &Vec<Point>| r.iter().map(|(x, y)| (x + dx, y + dy)).collect();
        Polygon {
            exterior: mv(&self.exterior),
            holes: self.holes.iter().map(mv).collect(),
        }
    }
}

/// Lower bound on the distance between two polygons from their bounding boxes.
pub fn bbox_distance(a: &Extent, b: &Extent) -> f64 {
    let dx = (a.min_x - b.max_x).max(b.min_x - a.max_x).max(0.0);
    let dy = (a.min_y - b.max_y).max(b.min_y - a.max_y).max(0.0);
    (dx * dx + dy * dy).sqrt()
}
