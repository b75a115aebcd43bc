use super::Point;
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Closed ring with counterclockwise vertices; the closing edge is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

impl Polygon {
    /// Validates a simple counterclockwise ring of at least three vertices.
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::DegenerateInput(format!(
                "polygon needs >= 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::DegenerateInput("non-finite polygon vertex".into()));
        }
        let poly = Polygon { vertices };
        if !(poly.signed_area() > 0.0) {
            return Err(Error::DegenerateInput(
                "polygon must have positive (counterclockwise) area".into(),
            ));
        }
        let n = poly.vertices.len();
        for i in 0..n {
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = poly.edge(i);
                let (c, d) = poly.edge(j);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::DegenerateInput("polygon is self-intersecting".into()));
                }
            }
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    fn edge(&self, i: usize) -> (Point, Point) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let (a, b) = self.edge(i);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area()
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len();
        let (mut cx, mut cy) = (0.0, 0.0);
        // shift to the first vertex to limit cancellation
        let o = self.vertices[0];
        for i in 0..n {
            let (a, b) = self.edge(i);
            let (ax, ay, bx, by) = (a.x - o.x, a.y - o.y, b.x - o.x, b.y - o.y);
            let w = ax * by - bx * ay;
            cx += (ax + bx) * w;
            cy += (ay + by) * w;
        }
        let a6 = 6.0 * self.signed_area();
        Point::new(o.x + cx / a6, o.y + cy / a6)
    }

    /// (xmin, ymin, xmax, ymax)
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(self, p)
    }

    /// Convex hull of the polygon dilated by `distance` (vertex circles
    /// approximated by 32-gons). `distance = 0` returns a clone.
    pub fn buffered(&self, distance: f64) -> Result<Polygon> {
        if distance == 0.0 {
            return Ok(self.clone());
        }
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "buffer must be >= 0, got {distance}"
            )));
        }
        // Circumscribe the 32-gon so the true buffer is covered.
        let k = 32;
        let r = distance / (std::f64::consts::PI / k as f64).cos();
        let pts: Vec<Point> = self
            .vertices
            .iter()
            .flat_map(|v| {
                (0..k).map(move |i| {
                    let a = std::f64::consts::TAU * i as f64 / k as f64;
                    Point::new(v.x + r * a.cos(), v.y + r * a.sin())
                })
            })
            .collect();
        convex_hull(&pts)
    }
}

/// Convex hull by monotone chain. Collinear hull points are dropped.
pub fn convex_hull(points: &[Point]) -> Result<Polygon> {
    let mut pts: Vec<Point> = points.iter().copied().filter(|p| p.is_finite()).collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "convex hull needs >= 3 distinct points, got {}",
            pts.len()
        )));
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() + 1);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(Error::DegenerateInput("all points are collinear".into()));
    }
    Polygon::new(hull)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    let scale = 1.0f64.max(a.x.abs()).max(a.y.abs()).max(b.x.abs()).max(b.y.abs());
    let tol = 1e-12 * scale;
    let len = a.dist(b);
    if len == 0.0 {
        return p.dist(a) <= tol;
    }
    let dist = cross(a, b, p).abs() / len;
    if dist > tol {
        return false;
    }
    let t = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / (len * len);
    (-tol / len..=1.0 + tol / len).contains(&t)
}

/// Ray-crossing test; points on the boundary count as inside.
pub fn point_in_polygon(poly: &Polygon, p: Point) -> bool {
    let v = &poly.vertices;
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if on_segment(a, b, p) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// `n` i.i.d. uniform points by rejection from the bounding box.
pub fn sample_uniform_in_polygon(poly: &Polygon, n: usize, rng: &mut Rng) -> Vec<Point> {
    sample_uniform_in_polygon_counted(poly, n, rng).0
}

/// As [`sample_uniform_in_polygon`], also returning the number of proposals.
pub fn sample_uniform_in_polygon_counted(poly: &Polygon, n: usize, rng: &mut Rng) -> (Vec<Point>, usize) {
    let (x0, y0, x1, y1) = poly.bbox();
    let mut out = Vec::with_capacity(n);
    let mut proposals = 0;
    while out.len() < n {
        proposals += 1;
        let p = Point::new(rng.uniform_range(x0, x1), rng.uniform_range(y0, y1));
        if point_in_polygon(poly, p) {
            out.push(p);
        }
    }
    (out, proposals)
}
