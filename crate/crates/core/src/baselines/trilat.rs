use serde::{Deserialize, Serialize};

use super::{BaselineError, Result};

/// Areas below this count as a single point when forming the feedback.
pub const AREA_FLOOR_M2: f64 = 1e-6;
/// Largest feedback value, reached at or below [`AREA_FLOOR_M2`].
pub const FEEDBACK_CAP: f64 = 1e6;

const MAX_ITERS: usize = 100;
const STEP_TOL_M: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    fn add(self, o: Point, s: f64) -> Point {
        Point::new(self.x + s * o.x, self.y + s * o.y)
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub position: Point,
    pub ranged_distance_m: f64,
}

impl Anchor {
    pub fn new(x: f64, y: f64, range_m: f64) -> Self {
        Self { position: Point::new(x, y), ranged_distance_m: range_m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResult {
    pub area_m2: f64,
    pub feedback: f64,
    pub estimate: Point,
}

fn validate(anchors: &[Anchor]) -> Result<()> {
    if anchors.len() < 3 {
        return Err(BaselineError::TooFewAnchors { need: 3, got: anchors.len() });
    }
    for a in anchors {
        if !(a.position.x.is_finite() && a.position.y.is_finite()) {
            return Err(BaselineError::InvalidInput("anchor coordinates must be finite".into()));
        }
        if !(a.ranged_distance_m.is_finite() && a.ranged_distance_m >= 0.0) {
            return Err(BaselineError::InvalidInput("ranges must be finite and non-negative".into()));
        }
    }
    let o = anchors[0].position;
    let scale = anchors.iter().map(|a| a.position.dist(o)).fold(0.0, f64::max);
    let mut spread: f64 = 0.0;
    for a in &anchors[1..] {
        for b in &anchors[1..] {
            spread = spread.max(cross(a.position.sub(o), b.position.sub(o)).abs());
        }
    }
    if spread <= 1e-12 * scale * scale {
        return Err(BaselineError::CollinearAnchors);
    }
    Ok(())
}

/// Sum of squared range residuals at `p`.
pub fn range_cost(anchors: &[Anchor], p: Point) -> f64 {
    anchors.iter().map(|a| (p.dist(a.position) - a.ranged_distance_m).powi(2)).sum()
}

/// Least-squares position: Gauss-Newton on `sum (|p - a_i| - r_i)^2`
/// started at the anchors' centroid, with step halving so the cost never
/// increases.
///
/// Inconsistent ranges leave large residuals, where plain Gauss-Newton only
/// converges linearly. The residual curvature `sum r_i (I - u_i u_i^T) / d_i`
/// is therefore added to the normal matrix whenever the sum stays positive
/// definite, which restores Newton convergence near the minimum.
pub fn trilaterate(anchors: &[Anchor]) -> Result<Point> {
    validate(anchors)?;
    let n = anchors.len() as f64;
    let mut p = Point::new(
        anchors.iter().map(|a| a.position.x).sum::<f64>() / n,
        anchors.iter().map(|a| a.position.y).sum::<f64>() / n,
    );
    let mut cost = range_cost(anchors, p);
    for _ in 0..MAX_ITERS {
        let (mut jxx, mut jxy, mut jyy, mut gx, mut gy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
        for a in anchors {
            let d = p.dist(a.position);
            if d == 0.0 {
                continue;
            }
            let (ux, uy) = ((p.x - a.position.x) / d, (p.y - a.position.y) / d);
            let r = d - a.ranged_distance_m;
            jxx += ux * ux;
            jxy += ux * uy;
            jyy += uy * uy;
            gx += ux * r;
            gy += uy * r;
            cxx += r * (1.0 - ux * ux) / d;
            cxy -= r * ux * uy / d;
            cyy += r * (1.0 - uy * uy) / d;
        }
        let (nxx, nxy, nyy) = (jxx + cxx, jxy + cxy, jyy + cyy);
        let (hxx, hxy, hyy) = if nxx > 0.0 && nxx * nyy - nxy * nxy > 1e-12 * (nxx + nyy).powi(2) {
            (nxx, nxy, nyy)
        } else {
            (jxx, jxy, jyy)
        };
        // A relative ridge keeps the 2x2 solve defined when rows align.
        let ridge = 1e-12 * (hxx + hyy);
        let (a11, a22) = (hxx + ridge, hyy + ridge);
        let det = a11 * a22 - hxy * hxy;
        if !(det > 0.0) {
            return Err(BaselineError::NoConvergence(MAX_ITERS));
        }
        let step = Point::new(-(a22 * gx - hxy * gy) / det, -(a11 * gy - hxy * gx) / det);
        let mut t = 1.0;
        let mut next = p.add(step, t);
        let mut next_cost = range_cost(anchors, next);
        while next_cost > cost && t > 1e-12 {
            t *= 0.5;
            next = p.add(step, t);
            next_cost = range_cost(anchors, next);
        }
        if next_cost > cost {
            return Ok(p);
        }
        let moved = p.dist(next);
        p = next;
        cost = next_cost;
        if moved <= STEP_TOL_M {
            return Ok(p);
        }
    }
    Err(BaselineError::NoConvergence(MAX_ITERS))
}

/// The representative point of a pair of range circles: the intersection
/// nearer `near`, or, when the circles do not meet, the midpoint of the
/// shortest segment between them.
fn pair_point(ci: Point, ri: f64, cj: Point, rj: f64, near: Point) -> Point {
    let d = ci.dist(cj);
    if d == 0.0 {
        let toward = near.sub(ci);
        let len = toward.x.hypot(toward.y);
        let u = if len > 0.0 { Point::new(toward.x / len, toward.y / len) } else { Point::new(1.0, 0.0) };
        return ci.add(u, 0.5 * (ri + rj));
    }
    let u = Point::new((cj.x - ci.x) / d, (cj.y - ci.y) / d);
    let midpoint = |a: Point, b: Point| Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
    if d >= ri + rj {
        return midpoint(ci.add(u, ri), cj.add(u, -rj));
    }
    if d <= (ri - rj).abs() {
        return if ri >= rj {
            midpoint(ci.add(u, ri), cj.add(u, rj))
        } else {
            midpoint(cj.add(u, -rj), ci.add(u, -ri))
        };
    }
    let a = (ri * ri - rj * rj + d * d) / (2.0 * d);
    let h = (ri * ri - a * a).max(0.0).sqrt();
    let base = ci.add(u, a);
    let perp = Point::new(-u.y, u.x);
    let (p1, p2) = (base.add(perp, h), base.add(perp, -h));
    if p2.dist(near) < p1.dist(near) {
        p2
    } else {
        p1
    }
}

/// Area of the convex hull of `pts` (monotone chain plus shoelace).
fn hull_area(pts: &[Point]) -> f64 {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return 0.0;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> =
            if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 1].sub(hull[hull.len() - 2]), q.sub(hull[hull.len() - 2])) <= 0.0
            {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let mut twice = 0.0;
    for i in 0..hull.len() {
        twice += cross(hull[i], hull[(i + 1) % hull.len()]);
    }
    0.5 * twice.abs()
}

/// Vertices of the error polygon: one [`pair_point`] per anchor pair,
/// relative to the trilaterated estimate.
pub fn error_polygon(anchors: &[Anchor]) -> Result<(Point, Vec<Point>)> {
    let est = trilaterate(anchors)?;
    let mut pts = Vec::new();
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            let (a, b) = (anchors[i], anchors[j]);
            pts.push(pair_point(a.position, a.ranged_distance_m, b.position, b.ranged_distance_m, est));
        }
    }
    Ok((est, pts))
}

/// Error area `A` of the range circles and the feedback `1 / A`, floored
/// and capped. With more than three anchors the area is that of the convex
/// hull of all pairwise points.
pub fn error_area(anchors: &[Anchor]) -> Result<FeedbackResult> {
    let (estimate, pts) = error_polygon(anchors)?;
    let area_m2 = hull_area(&pts);
    let feedback = (1.0 / area_m2.max(AREA_FLOOR_M2)).min(FEEDBACK_CAP);
    Ok(FeedbackResult { area_m2, feedback, estimate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_square_with_interior_point() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
        ];
        assert_eq!(hull_area(&pts), 4.0);
        assert_eq!(hull_area(&pts[..2]), 0.0);
    }

    #[test]
    fn pair_point_cases() {
        let o = Point::new(0.0, 0.0);
        let c = Point::new(4.0, 0.0);
        assert_eq!(pair_point(o, 1.0, c, 1.0, o), Point::new(2.0, 0.0));
        assert_eq!(pair_point(o, 5.0, Point::new(1.0, 0.0), 1.0, o), Point::new(3.5, 0.0));
        let p = pair_point(o, 2.5, c, 2.5, Point::new(2.0, -5.0));
        assert!((p.x - 2.0).abs() < 1e-12 && (p.y + 1.5).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        let line = [Anchor::new(0.0, 0.0, 1.0), Anchor::new(1.0, 0.0, 1.0), Anchor::new(2.0, 0.0, 1.0)];
        assert_eq!(trilaterate(&line), Err(BaselineError::CollinearAnchors));
        assert_eq!(trilaterate(&line[..2]), Err(BaselineError::TooFewAnchors { need: 3, got: 2 }));
        let bad = [Anchor::new(0.0, 0.0, -1.0), Anchor::new(1.0, 0.0, 1.0), Anchor::new(0.0, 1.0, 1.0)];
        assert!(matches!(trilaterate(&bad), Err(BaselineError::InvalidInput(_))));
    }
}
