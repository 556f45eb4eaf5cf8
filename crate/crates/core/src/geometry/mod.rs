//! Planar geometry: rectangles, discs, Voronoi diagrams, smallest enclosing
//! circles and Monte-Carlo region intersection.

mod enclosing;
mod intersection;
mod voronoi;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
pub use crate::model::Location;

pub use enclosing::smallest_enclosing_circle;
pub use intersection::{region_intersection, RegionIntersection, MIN_RESOLUTION};
pub use voronoi::{voronoi_diagram, VoronoiCell, VoronoiDiagram, COINCIDENT_JITTER};

pub fn euclidean_distance(a: &Location, b: &Location) -> f64 {
    a.distance(b)
}

/// Axis-aligned rectangle, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        let r = Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        };
        if ![min_x, min_y, max_x, max_y].iter().all(|v| v.is_finite()) {
            return Err(invalid("rectangle bounds must be finite"));
        }
        if min_x > max_x || min_y > max_y {
            return Err(invalid(format!("inverted rectangle {r:?}")));
        }
        Ok(r)
    }

    /// World rectangle anchored at the origin.
    pub fn world(width: f64, height: f64) -> Result<Self> {
        Rect::new(0.0, 0.0, width, height)
    }

    /// Smallest rectangle containing every point; `None` for an empty slice.
    pub fn bounding(points: &[Location]) -> Option<Self> {
        let first = points.first()?;
        let mut r = Rect {
            min_x: first.x,
            min_y: first.y,
            max_x: first.x,
            max_y: first.y,
        };
        for p in &points[1..] {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        Some(r)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn centroid(&self) -> Location {
        Location::new(0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn contains(&self, p: &Location) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn contains_with_tolerance(&self, p: &Location, tol: f64) -> bool {
        p.x >= self.min_x - tol && p.x <= self.max_x + tol && p.y >= self.min_y - tol && p.y <= self.max_y + tol
    }

    /// Minkowski sum with a square of half-width `by`.
    pub fn inflate(&self, by: f64) -> Rect {
        Rect {
            min_x: self.min_x - by,
            min_y: self.min_y - by,
            max_x: self.max_x + by,
            max_y: self.max_y + by,
        }
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            min_x: self.min_x.max(other.min_x),
            min_y: self.min_y.max(other.min_y),
            max_x: self.max_x.min(other.max_x),
            max_y: self.max_y.min(other.max_y),
        };
        (r.min_x <= r.max_x && r.min_y <= r.max_y).then_some(r)
    }

    pub fn overlap_area(&self, other: &Rect) -> f64 {
        self.intersection(other).map_or(0.0, |r| r.area())
    }

    /// Distance from `p` to the closest point of the rectangle (zero inside).
    pub fn nearest_distance(&self, p: &Location) -> f64 {
        let dx = (self.min_x - p.x).max(0.0).max(p.x - self.max_x);
        let dy = (self.min_y - p.y).max(0.0).max(p.y - self.max_y);
        dx.hypot(dy)
    }

    /// Distance from `p` to the farthest corner of the rectangle.
    pub fn farthest_distance(&self, p: &Location) -> f64 {
        let dx = (p.x - self.min_x).abs().max((p.x - self.max_x).abs());
        let dy = (p.y - self.min_y).abs().max((p.y - self.max_y).abs());
        dx.hypot(dy)
    }

    pub fn corners(&self) -> [Location; 4] {
        [
            Location::new(self.min_x, self.min_y),
            Location::new(self.max_x, self.min_y),
            Location::new(self.max_x, self.max_y),
            Location::new(self.min_x, self.max_y),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub center: Location,
    pub radius: f64,
}

impl Disc {
    pub fn new(center: Location, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) || !center.is_finite() {
            return Err(invalid(format!("invalid disc radius {radius}")));
        }
        Ok(Disc { center, radius })
    }

    pub fn contains(&self, p: &Location) -> bool {
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }

    pub fn bounding_rect(&self) -> Rect {
        Rect {
            min_x: self.center.x - self.radius,
            min_y: self.center.y - self.radius,
            max_x: self.center.x + self.radius,
            max_y: self.center.y + self.radius,
        }
    }
}

/// Shoelace area of a simple polygon (absolute value).
pub fn polygon_area(polygon: &[Location]) -> f64 {
    if polygon.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for (i, a) in polygon.iter().enumerate() {
        let b = &polygon[(i + 1) % polygon.len()];
        twice += a.x * b.y - b.x * a.y;
    }
    0.5 * twice.abs()
}

/// Point-in-convex-polygon test for a counter-clockwise polygon, with a small
/// tolerance on the edges.
pub fn convex_polygon_contains(polygon: &[Location], p: &Location, tol: f64) -> bool {
    match polygon.len() {
        0 => false,
        1 => polygon[0].distance(p) <= tol,
        2 => segment_distance(&polygon[0], &polygon[1], p) <= tol,
        n => (0..n).all(|i| {
            let a = &polygon[i];
            let b = &polygon[(i + 1) % n];
            let ex = b.x - a.x;
            let ey = b.y - a.y;
            let len = ex.hypot(ey);
            if len == 0.0 {
                return true;
            }
            // signed distance of p to the left of edge a->b
            (ex * (p.y - a.y) - ey * (p.x - a.x)) / len >= -tol
        }),
    }
}

fn segment_distance(a: &Location, b: &Location, p: &Location) -> f64 {
    let ex = b.x - a.x;
    let ey = b.y - a.y;
    let len2 = ex * ex + ey * ey;
    if len2 == 0.0 {
        return a.distance(p);
    }
    let t = (((p.x - a.x) * ex + (p.y - a.y) * ey) / len2).clamp(0.0, 1.0);
    Location::new(a.x + t * ex, a.y + t * ey).distance(p)
}
