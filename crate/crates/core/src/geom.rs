//! Planar geometry kernel.
//!
//! Everything here is a pure function over immutable values. Boxes and
//! polygons are validated on construction, so downstream code can rely on
//! finite coordinates, strictly positive extents and counter-clockwise
//! polygons.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default step between trajectory points, in seconds.
pub const DEFAULT_DT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2 { x: v[0], y: v[1] }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

/// Wrap an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Position plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Pose {
    pub position: Point2,
    pub heading: f64,
}

impl From<[f64; 3]> for Pose {
    fn from(v: [f64; 3]) -> Self {
        Pose { position: Point2::new(v[0], v[1]), heading: v[2] }
    }
}

impl From<Pose> for [f64; 3] {
    fn from(p: Pose) -> Self {
        [p.position.x, p.position.y, p.heading]
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose { position: Point2::new(x, y), heading }
    }

    /// Map a point expressed in this pose's local frame into the parent frame.
    pub fn to_parent(&self, local: Point2) -> Point2 {
        self.position + local.rotate(self.heading)
    }

    pub fn to_local(&self, parent: Point2) -> Point2 {
        (parent - self.position).rotate(-self.heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Point2,
    pub half_extents: [f64; 2],
    pub heading: f64,
}

impl OrientedBox {
    pub fn new(center: Point2, half_extents: [f64; 2], heading: f64) -> Result<Self> {
        if !center.is_finite() || !heading.is_finite() {
            return Err(Error::InvalidGeometry(format!("non-finite box pose {center:?} heading {heading}")));
        }
        if !(half_extents[0] > 0.0 && half_extents[1] > 0.0) || !half_extents.iter().all(|h| h.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "box half extents must be finite and > 0, got {half_extents:?}"
            )));
        }
        Ok(OrientedBox { center, half_extents, heading: normalize_angle(heading) })
    }

    pub fn at_pose(pose: Pose, half_extents: [f64; 2]) -> Result<Self> {
        Self::new(pose.position, half_extents, pose.heading)
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.center, self.half_extents, self.heading).map(|_| ())
    }

    /// Unit vectors of the box's local x and y axes.
    pub fn axes(&self) -> [Point2; 2] {
        let (s, c) = self.heading.sin_cos();
        [Point2::new(c, s), Point2::new(-s, c)]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Point2; 4] {
        let [ax, ay] = self.axes();
        let ex = ax.scale(self.half_extents[0]);
        let ey = ay.scale(self.half_extents[1]);
        let c = self.center;
        [c - ex - ey, c + ex - ey, c + ex + ey, c - ex + ey]
    }

    fn project(&self, axis: Point2) -> (f64, f64) {
        let [ax, ay] = self.axes();
        let mid = self.center.dot(axis);
        let r = self.half_extents[0] * ax.dot(axis).abs() + self.half_extents[1] * ay.dot(axis).abs();
        (mid - r, mid + r)
    }

    /// Closed-set containment.
    pub fn contains(&self, p: Point2) -> bool {
        let [ax, ay] = self.axes();
        let d = p - self.center;
        d.dot(ax).abs() <= self.half_extents[0] && d.dot(ay).abs() <= self.half_extents[1]
    }
}

/// Largest projected gap between the boxes over the four edge normals.
/// Positive means a separating axis exists; zero or negative means contact.
pub fn obb_separation(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (amin, amax) = a.project(axis);
        let (bmin, bmax) = b.project(axis);
        let gap = (bmin - amax).max(amin - bmax);
        best = best.max(gap);
    }
    best
}

/// Separating-axis overlap test; touching boundaries count as overlap.
pub fn obb_overlap(a: &OrientedBox, b: &OrientedBox) -> Result<bool> {
    a.validate()?;
    b.validate()?;
    Ok(obb_separation(a, b) <= 0.0)
}

fn segment_point_distance(a: Point2, b: Point2, p: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab.scale(t)).distance(p)
}

/// Euclidean distance between two boxes, zero when they overlap.
pub fn obb_distance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if obb_separation(a, b) <= 0.0 {
        return 0.0;
    }
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let (a0, a1) = (ca[i], ca[(i + 1) % 4]);
        for &q in &cb {
            best = best.min(segment_point_distance(a0, a1, q));
        }
        let (b0, b1) = (cb[i], cb[(i + 1) % 4]);
        for &q in &ca {
            best = best.min(segment_point_distance(b0, b1, q));
        }
    }
    best
}

/// A simple counter-clockwise polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polygon2 {
    vertices: Vec<Point2>,
}

impl TryFrom<Vec<Point2>> for Polygon2 {
    type Error = Error;
    fn try_from(v: Vec<Point2>) -> Result<Self> {
        Polygon2::new(v)
    }
}

impl From<Polygon2> for Vec<Point2> {
    fn from(p: Polygon2) -> Self {
        p.vertices
    }
}

fn signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum::<f64>() * 0.5
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

impl Polygon2 {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidGeometry(format!("polygon needs at least 3 vertices, got {n}")));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!("non-finite vertex {p:?}")));
        }
        let area = signed_area(&vertices);
        if !(area > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "polygon must be counter-clockwise with positive area, got {area}"
            )));
        }
        for i in 0..n {
            let (a0, a1) = (vertices[i], vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (b0, b1) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a0, a1, b0, b1) {
                    return Err(Error::InvalidGeometry(format!("polygon edges {i} and {j} intersect")));
                }
            }
        }
        Ok(Polygon2 { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn centroid(&self) -> Point2 {
        let v = &self.vertices;
        let n = v.len();
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let (p, q) = (v[i], v[(i + 1) % n]);
            let c = p.cross(q);
            cx += (p.x + q.x) * c;
            cy += (p.y + q.y) * c;
        }
        let a6 = 6.0 * self.area();
        Point2::new(cx / a6, cy / a6)
    }

    pub fn translated(&self, by: Point2) -> Polygon2 {
        Polygon2 { vertices: self.vertices.iter().map(|&p| p + by).collect() }
    }

    fn boundary_tolerance(&self) -> f64 {
        let scale = self.vertices.iter().map(|p| p.x.abs().max(p.y.abs())).fold(1.0, f64::max);
        1e-12 * scale
    }
}

/// Inside-or-on-boundary test by ray casting.
pub fn point_in_polygon(p: Point2, poly: &Polygon2) -> Result<bool> {
    if !p.is_finite() {
        return Err(Error::InvalidGeometry(format!("non-finite query point {p:?}")));
    }
    let v = poly.vertices();
    let n = v.len();
    let tol = poly.boundary_tolerance();
    for i in 0..n {
        if segment_point_distance(v[i], v[(i + 1) % n], p) <= tol {
            return Ok(true);
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    Ok(inside)
}

/// Time-indexed points in the ego frame, excluding the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Point2>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<Point2>, dt: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Shape("trajectory needs at least one point".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Argument(format!("trajectory dt must be > 0, got {dt}")));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite trajectory point".into()));
        }
        Ok(Trajectory { points, dt })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-step displacements; their running sum from an origin yields a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementSeq {
    pub deltas: Vec<Point2>,
    pub dt: f64,
}

impl IncrementSeq {
    pub fn new(deltas: Vec<Point2>, dt: f64) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::Shape("increment sequence must be non-empty".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Argument(format!("increment dt must be > 0, got {dt}")));
        }
        Ok(IncrementSeq { deltas, dt })
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Interleaved `[dx0, dy0, dx1, dy1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.deltas.iter().flat_map(|d| [d.x, d.y]).collect()
    }

    pub fn from_flat(flat: &[f64], dt: f64) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::Shape(format!("odd flat increment length {}", flat.len())));
        }
        IncrementSeq::new(flat.chunks(2).map(|c| Point2::new(c[0], c[1])).collect(), dt)
    }
}

pub fn integrate_increments(inc: &IncrementSeq, origin: Point2) -> Result<Trajectory> {
    if inc.is_empty() {
        return Err(Error::Shape("cannot integrate an empty increment sequence".into()));
    }
    let mut acc = origin;
    let points = inc
        .deltas
        .iter()
        .map(|&d| {
            acc = acc + d;
            acc
        })
        .collect();
    Trajectory::new(points, inc.dt)
}

/// Pick a delta `d` with `fl(prev + d) == target` when one exists within a
/// few ulps of the naive difference, else fall back to the naive difference.
fn exact_delta(prev: f64, target: f64) -> f64 {
    let naive = target - prev;
    if prev + naive == target {
        return naive;
    }
    let (mut up, mut down) = (naive, naive);
    for _ in 0..8 {
        up = up.next_up();
        down = down.next_down();
        if prev + up == target {
            return up;
        }
        if prev + down == target {
            return down;
        }
    }
    naive
}

/// Inverse of [`integrate_increments`]. Deltas are chosen so that
/// re-integration reproduces the points bit for bit whenever the floating
/// representation allows it. It always does when the points share a common
/// binary lattice; a point much closer to zero than its predecessor can sit
/// between the sums reachable from that predecessor, and then the nearest
/// reachable value is used.
pub fn differentiate(traj: &Trajectory, origin: Point2) -> IncrementSeq {
    let mut prev = origin;
    let deltas = traj
        .points
        .iter()
        .map(|&p| {
            let d = Point2::new(exact_delta(prev.x, p.x), exact_delta(prev.y, p.y));
            prev = prev + d;
            d
        })
        .collect();
    IncrementSeq { deltas, dt: traj.dt }
}

/// Axis-aligned raster over bird's-eye space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// World coordinates of the outer corner of cell (0, 0).
    pub origin: Point2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(origin: Point2, cell_size: f64, width: usize, height: usize) -> Result<Self> {
        let spec = GridSpec { origin, cell_size, width, height };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) || !self.origin.is_finite() {
            return Err(Error::InvalidGeometry(format!("bad grid spec {self:?}")));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGeometry("grid needs at least one cell".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    /// World coordinates of the center of cell (i, j).
    pub fn cell_center(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.cell_size,
            self.origin.y + (j as f64 + 0.5) * self.cell_size,
        )
    }

    /// Row-major cell index (`j * width + i`).
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCoord {
    pub i: usize,
    pub j: usize,
    pub frac_u: f64,
    pub frac_v: f64,
    pub clamped: bool,
}

fn split_axis(g: f64, n: usize) -> (usize, f64, bool) {
    if g.is_nan() || g < 0.0 {
        (0, 0.0, true)
    } else if g >= n as f64 {
        (n - 1, 1.0f64.next_down(), true)
    } else {
        let cell = (g.floor() as usize).min(n - 1);
        let frac = (g - cell as f64).clamp(0.0, 1.0f64.next_down());
        (cell, frac, false)
    }
}

/// Continuous grid coordinates split into cell index and in-cell fraction.
/// Points outside the grid clamp to the border cell and set `clamped`.
pub fn project_to_grid(p: Point2, spec: &GridSpec) -> GridCoord {
    let gx = (p.x - spec.origin.x) / spec.cell_size;
    let gy = (p.y - spec.origin.y) / spec.cell_size;
    let (i, frac_u, cx) = split_axis(gx, spec.width);
    let (j, frac_v, cy) = split_axis(gy, spec.height);
    GridCoord { i, j, frac_u, frac_v, clamped: cx || cy }
}
