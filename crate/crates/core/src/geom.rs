//! Rectangle and convex-polygon geometry.
//!
//! The frame is y-down (image convention). A positive `theta` rotates a box
//! clockwise on screen: the local x-axis maps to `(cos θ, sin θ)` and the
//! local y-axis to `(-sin θ, cos θ)`. Polygons are stored with positive
//! shoelace area in these coordinates, starting at the vertex with the
//! smallest `(y, x)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Error, Result};

/// Absolute tolerance for geometric predicates on unit-scale inputs.
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    /// Rotates about `center` by `angle` (clockwise on screen for positive angles).
    pub fn rotated_about(self, center: Point2, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        let d = self.sub(center);
        Point2::new(center.x + d.x * c - d.y * s, center.y + d.x * s + d.y * c)
    }
}

/// A rotated rectangle. Side labels are not sorted by length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    cx: f64,
    cy: f64,
    w_side: f64,
    h_side: f64,
    theta: f64,
}

/// Maps any finite angle into `[0, π)`.
pub fn canonical_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w_side: f64, h_side: f64, theta: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && theta.is_finite()) {
            return Err(invalid("box center and angle must be finite"));
        }
        if !(w_side.is_finite() && h_side.is_finite()) || w_side <= 0.0 || h_side <= 0.0 {
            return Err(invalid(format!(
                "box sides must be positive, got {w_side} x {h_side}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            w_side,
            h_side,
            theta: canonical_angle(theta),
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }
    pub fn w_side(&self) -> f64 {
        self.w_side
    }
    pub fn h_side(&self) -> f64 {
        self.h_side
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn area(&self) -> f64 {
        self.w_side * self.h_side
    }
    pub fn diagonal(&self) -> f64 {
        self.w_side.hypot(self.h_side)
    }

    /// Re-applies angle canonicalization. Idempotent.
    pub fn canonicalize(&self) -> Self {
        Self {
            theta: canonical_angle(self.theta),
            ..*self
        }
    }

    pub fn with_center(&self, cx: f64, cy: f64) -> Result<Self> {
        Self::new(cx, cy, self.w_side, self.h_side, self.theta)
    }

    /// Applies the similarity `p -> (p - origin) * scale` to the box.
    pub fn normalized(&self, origin: Point2, scale: f64) -> Result<Self> {
        Self::new(
            (self.cx - origin.x) * scale,
            (self.cy - origin.y) * scale,
            self.w_side * scale,
            self.h_side * scale,
            self.theta,
        )
    }

    /// Rotates the whole box about an arbitrary pivot.
    pub fn rotated_about(&self, pivot: Point2, angle: f64) -> Result<Self> {
        let c = self.center().rotated_about(pivot, angle);
        Self::new(c.x, c.y, self.w_side, self.h_side, self.theta + angle)
    }
}

/// Axis-aligned box given by center and extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizontalBox {
    pub xc: f64,
    pub yc: f64,
    pub w: f64,
    pub h: f64,
}

impl HorizontalBox {
    pub fn new(xc: f64, yc: f64, w: f64, h: f64) -> Result<Self> {
        if !(xc.is_finite() && yc.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(invalid("horizontal box fields must be finite"));
        }
        if w < 0.0 || h < 0.0 {
            return Err(invalid(format!("negative extent {w} x {h}")));
        }
        Ok(Self { xc, yc, w, h })
    }

    pub fn corners(&self) -> ConvexQuad {
        let (hw, hh) = (0.5 * self.w, 0.5 * self.h);
        ConvexQuad::from_ordered([
            Point2::new(self.xc - hw, self.yc - hh),
            Point2::new(self.xc + hw, self.yc - hh),
            Point2::new(self.xc + hw, self.yc + hh),
            Point2::new(self.xc - hw, self.yc + hh),
        ])
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }
}

/// Four vertices of a convex quadrilateral (possibly degenerate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexQuad {
    vertices: [Point2; 4],
}

/// Orders a 4-gon with positive shoelace area, starting at the smallest `(y, x)`.
pub fn canonical_order(mut pts: [Point2; 4]) -> [Point2; 4] {
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    let start = (0..4)
        .min_by(|&i, &j| {
            (pts[i].y, pts[i].x)
                .partial_cmp(&(pts[j].y, pts[j].x))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0);
    pts.rotate_left(start);
    pts
}

impl ConvexQuad {
    /// Builds a quad from vertices in either winding; rejects non-convex input.
    pub fn new(pts: [Point2; 4]) -> Result<Self> {
        if !pts.iter().all(Point2::is_finite) {
            return Err(invalid("quad vertices must be finite"));
        }
        let quad = Self::from_ordered(pts);
        let scale = quad.scale();
        let v = &quad.vertices;
        for i in 0..4 {
            let e0 = v[(i + 1) % 4].sub(v[i]);
            let e1 = v[(i + 2) % 4].sub(v[(i + 1) % 4]);
            if e0.cross(e1) < -GEOM_EPS * scale * scale {
                return Err(invalid("quad is not convex"));
            }
        }
        Ok(quad)
    }

    /// Trusted constructor for vertices already in cyclic order.
    pub(crate) fn from_ordered(pts: [Point2; 4]) -> Self {
        Self {
            vertices: canonical_order(pts),
        }
    }

    pub fn vertices(&self) -> &[Point2; 4] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    pub fn centroid(&self) -> Point2 {
        let (sx, sy) = self
            .vertices
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point2::new(0.25 * sx, 0.25 * sy)
    }

    fn scale(&self) -> f64 {
        let (lo, hi) = bounds(&self.vertices);
        (hi.x - lo.x).hypot(hi.y - lo.y).max(f64::MIN_POSITIVE)
    }

    /// Interprets the quad as a rectangle using its first two edges.
    pub fn to_rectangle(&self) -> Result<OrientedBox> {
        let v = &self.vertices;
        let e0 = v[1].sub(v[0]);
        let e1 = v[2].sub(v[1]);
        let (a, b) = (e0.x.hypot(e0.y), e1.x.hypot(e1.y));
        let tol = GEOM_EPS * 1e-3 * self.scale();
        if a <= tol || b <= tol {
            return Err(degenerate("quad has a zero-length side"));
        }
        let c = self.centroid();
        OrientedBox::new(c.x, c.y, a, b, e0.y.atan2(e0.x))
    }
}

/// Shapes that can be turned into a polygon for the IoU oracle.
pub trait Shape {
    fn polygon(&self) -> ConvexQuad;
}

impl Shape for OrientedBox {
    fn polygon(&self) -> ConvexQuad {
        vertices_of(self)
    }
}

impl Shape for ConvexQuad {
    fn polygon(&self) -> ConvexQuad {
        *self
    }
}

fn signed_area(pts: &[Point2]) -> f64 {
    let n = pts.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += pts[i].cross(pts[(i + 1) % n]);
    }
    0.5 * acc
}

fn bounds(pts: &[Point2]) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

pub fn vertices_of(b: &OrientedBox) -> ConvexQuad {
    let (s, c) = b.theta.sin_cos();
    let (hw, hh) = (0.5 * b.w_side, 0.5 * b.h_side);
    let corner = |lx: f64, ly: f64| Point2::new(b.cx + lx * c - ly * s, b.cy + lx * s + ly * c);
    ConvexQuad::from_ordered([
        corner(-hw, -hh),
        corner(hw, -hh),
        corner(hw, hh),
        corner(-hw, hh),
    ])
}

pub fn outer_hbb(b: &OrientedBox) -> HorizontalBox {
    let (lo, hi) = bounds(vertices_of(b).vertices());
    HorizontalBox {
        xc: 0.5 * (lo.x + hi.x),
        yc: 0.5 * (lo.y + hi.y),
        w: hi.x - lo.x,
        h: hi.y - lo.y,
    }
}

/// Clockwise rotation about the box center.
pub fn rotate(b: &OrientedBox, dtheta: f64) -> OrientedBox {
    OrientedBox {
        theta: canonical_angle(b.theta + dtheta),
        ..*b
    }
}

/// The two boxes obtained by scaling one side by `ratio`: `[w_side scaled, h_side scaled]`.
pub fn adjust_side(b: &OrientedBox, ratio: f64) -> Result<[OrientedBox; 2]> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(invalid(format!("side ratio must be positive, got {ratio}")));
    }
    Ok([
        OrientedBox::new(b.cx, b.cy, b.w_side * ratio, b.h_side, b.theta)?,
        OrientedBox::new(b.cx, b.cy, b.w_side, b.h_side * ratio, b.theta)?,
    ])
}

/// Clips `subject` by every edge half-plane of the positively oriented convex `clip`.
fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let edge = clip[(i + 1) % n].sub(a);
        let side = |p: Point2| edge.cross(p.sub(a));
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let nxt = input[(j + 1) % m];
            let (sc, sn) = (side(cur), side(nxt));
            if sc >= 0.0 {
                output.push(cur);
            }
            if (sc >= 0.0) != (sn >= 0.0) {
                let t = sc / (sc - sn);
                output.push(Point2::new(
                    cur.x + t * (nxt.x - cur.x),
                    cur.y + t * (nxt.y - cur.y),
                ));
            }
        }
    }
    output
}

pub fn intersection_area(a: &ConvexQuad, b: &ConvexQuad) -> f64 {
    if a.area() == 0.0 || b.area() == 0.0 {
        return 0.0;
    }
    let clipped = clip_convex(&a.vertices, &b.vertices);
    if clipped.len() < 3 {
        return 0.0;
    }
    signed_area(&clipped).abs().min(a.area().min(b.area()))
}

/// Polygon-clipping IoU; the reference every closed form is checked against.
pub fn iou_oracle<A: Shape + ?Sized, B: Shape + ?Sized>(a: &A, b: &B) -> Result<f64> {
    let (pa, pb) = (a.polygon(), b.polygon());
    let (aa, ab) = (pa.area(), pb.area());
    if aa == 0.0 && ab == 0.0 {
        return Err(Error::UndefinedIou);
    }
    let inter = intersection_area(&pa, &pb);
    let union = aa + ab - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Andrew's monotone chain; drops collinear points.
fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| {
        (a.x, a.y)
            .partial_cmp(&(b.x, b.y))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if b.sub(a).cross(p.sub(a)) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle by rotating calipers over the hull edges.
pub fn min_area_rect(points: &[Point2]) -> Result<OrientedBox> {
    if points.len() < 3 {
        return Err(degenerate("need at least 3 points"));
    }
    if !points.iter().all(Point2::is_finite) {
        return Err(invalid("points must be finite"));
    }
    let hull = convex_hull(points);
    let (lo, hi) = bounds(points);
    let scale = (hi.x - lo.x).hypot(hi.y - lo.y);
    if hull.len() < 3 || signed_area(&hull).abs() <= (GEOM_EPS * scale).powi(2) {
        return Err(degenerate("points are collinear"));
    }
    let origin = hull[0];
    let mut best: Option<(f64, Point2, [f64; 4])> = None;
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()].sub(hull[i]);
        let len = e.x.hypot(e.y);
        if len == 0.0 {
            continue;
        }
        let u = Point2::new(e.x / len, e.y / len);
        let v = Point2::new(-u.y, u.x);
        let mut ext = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for p in &hull {
            let d = p.sub(origin);
            let (pu, pv) = (d.x * u.x + d.y * u.y, d.x * v.x + d.y * v.y);
            ext[0] = ext[0].min(pu);
            ext[1] = ext[1].max(pu);
            ext[2] = ext[2].min(pv);
            ext[3] = ext[3].max(pv);
        }
        let area = (ext[1] - ext[0]) * (ext[3] - ext[2]);
        // near-ties keep the earlier hull edge
        if best.as_ref().is_none_or(|(a, _, _)| area < *a * (1.0 - 1e-12)) {
            best = Some((area, u, ext));
        }
    }
    let (_, u, ext) = best.ok_or_else(|| degenerate("empty hull"))?;
    let v = Point2::new(-u.y, u.x);
    let (mu, mv) = (0.5 * (ext[0] + ext[1]), 0.5 * (ext[2] + ext[3]));
    OrientedBox::new(
        origin.x + u.x * mu + v.x * mv,
        origin.y + u.y * mu + v.y * mv,
        ext[1] - ext[0],
        ext[3] - ext[2],
        u.y.atan2(u.x),
    )
    .map_err(|_| degenerate("enclosing rectangle has zero extent"))
}
