//! Planar domains with exact boundaries.
//!
//! Every domain is stored as a closed curve of circular arcs and straight
//! segments. The distance to the boundary is the minimum of exact
//! point-to-piece distances, so it stays correct where the primitives making
//! up a domain overlap. Inside/outside is decided separately from the
//! primitives (union of disks and polygons), which gives two independent
//! descriptions of the same set that the tests cross-check.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid domain parameter: {0}")]
    InvalidParameter(String),
    #[error("point ({x}, {y}) is not strictly inside the domain")]
    NotInside { x: f64, y: f64 },
    #[error("boundary crossing from ({x}, {y}) along ({dx}, {dy}) could not be bracketed")]
    Unbracketed { x: f64, y: f64, dx: f64, dy: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Point2::new(radius * angle.cos(), radius * angle.sin())
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Parameters of the supported shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec {
    Ball {
        center: Point2,
        radius: f64,
    },
    /// Convex hull of two disks of equal radius.
    Stadium {
        centers: (Point2, Point2),
        radius: f64,
    },
    Square {
        center: Point2,
        half_side: f64,
    },
    /// Union of the disk of radius `1 + eps` about (-1, 0), the unit disk
    /// about (1, 0) and the trapezoid with vertices (-1, ±(1 + eps)), (1, ±1).
    SEps {
        eps: f64,
    },
}

impl DomainSpec {
    pub fn unit_ball() -> Self {
        DomainSpec::Ball {
            center: Point2::new(0.0, 0.0),
            radius: 1.0,
        }
    }

    /// The stadium that `SEps { eps: 0 }` reduces to.
    pub fn unit_stadium() -> Self {
        DomainSpec::Stadium {
            centers: (Point2::new(-1.0, 0.0), Point2::new(1.0, 0.0)),
            radius: 1.0,
        }
    }

    pub fn unit_square() -> Self {
        DomainSpec::Square {
            center: Point2::new(0.0, 0.0),
            half_side: 1.0,
        }
    }

    pub fn shape_name(&self) -> &'static str {
        match self {
            DomainSpec::Ball { .. } => "ball",
            DomainSpec::Stadium { .. } => "stadium",
            DomainSpec::Square { .. } => "square",
            DomainSpec::SEps { .. } => "s_eps",
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidParameter(msg));
        match *self {
            DomainSpec::Ball { center, radius } => {
                if !center.is_finite() {
                    return bad(format!("ball center {center} is not finite"));
                }
                if !(radius > 0.0 && radius.is_finite()) {
                    return bad(format!("ball radius must be positive, got {radius}"));
                }
            }
            DomainSpec::Stadium { centers, radius } => {
                if !centers.0.is_finite() || !centers.1.is_finite() {
                    return bad("stadium centers must be finite".into());
                }
                if !(radius > 0.0 && radius.is_finite()) {
                    return bad(format!("stadium radius must be positive, got {radius}"));
                }
            }
            DomainSpec::Square { center, half_side } => {
                if !center.is_finite() {
                    return bad(format!("square center {center} is not finite"));
                }
                if !(half_side > 0.0 && half_side.is_finite()) {
                    return bad(format!(
                        "square half side must be positive, got {half_side}"
                    ));
                }
            }
            DomainSpec::SEps { eps } => {
                if !(eps >= 0.0 && eps.is_finite()) {
                    return bad(format!("eps must be a finite number >= 0, got {eps}"));
                }
            }
        }
        Ok(())
    }
}

/// One piece of a piecewise boundary. Arcs run from `angle_start` to
/// `angle_end`, counter-clockwise when `angle_end > angle_start`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryPiece {
    Arc {
        center: Point2,
        radius: f64,
        angle_start: f64,
        angle_end: f64,
    },
    Segment {
        a: Point2,
        b: Point2,
    },
}

impl BoundaryPiece {
    pub fn start(&self) -> Point2 {
        match *self {
            BoundaryPiece::Arc {
                center,
                radius,
                angle_start,
                ..
            } => center + Point2::from_polar(radius, angle_start),
            BoundaryPiece::Segment { a, .. } => a,
        }
    }

    pub fn end(&self) -> Point2 {
        match *self {
            BoundaryPiece::Arc {
                center,
                radius,
                angle_end,
                ..
            } => center + Point2::from_polar(radius, angle_end),
            BoundaryPiece::Segment { b, .. } => b,
        }
    }

    pub fn length(&self) -> f64 {
        match *self {
            BoundaryPiece::Arc {
                radius,
                angle_start,
                angle_end,
                ..
            } => radius * (angle_end - angle_start).abs(),
            BoundaryPiece::Segment { a, b } => a.dist(b),
        }
    }

    /// Point at arclength fraction `s` in [0, 1].
    pub fn point_at(&self, s: f64) -> Point2 {
        match *self {
            BoundaryPiece::Arc {
                center,
                radius,
                angle_start,
                angle_end,
            } => center + Point2::from_polar(radius, angle_start + s * (angle_end - angle_start)),
            BoundaryPiece::Segment { a, b } => a + (b - a) * s,
        }
    }

    pub fn distance(&self, p: Point2) -> f64 {
        match *self {
            BoundaryPiece::Arc {
                center,
                radius,
                angle_start,
                angle_end,
            } => {
                let rel = p - center;
                let r = rel.norm();
                if r > 0.0 && angle_in_sweep(rel.angle(), angle_start, angle_end) {
                    (r - radius).abs()
                } else {
                    p.dist(self.start()).min(p.dist(self.end()))
                }
            }
            BoundaryPiece::Segment { a, b } => {
                let ab = b - a;
                let len2 = ab.dot(ab);
                if len2 == 0.0 {
                    return p.dist(a);
                }
                let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
                p.dist(a + ab * t)
            }
        }
    }

    /// Contribution of this piece to the shoelace/Green area integral
    /// ½∮(x dy − y dx).
    fn green_area(&self) -> f64 {
        match *self {
            BoundaryPiece::Arc {
                center,
                radius,
                angle_start,
                angle_end,
            } => {
                let (c, r) = (center, radius);
                let sweep = angle_end - angle_start;
                0.5 * (r * r * sweep + r * c.x * (angle_end.sin() - angle_start.sin())
                    - r * c.y * (angle_end.cos() - angle_start.cos()))
            }
            BoundaryPiece::Segment { a, b } => 0.5 * a.cross(b),
        }
    }
}

fn angle_in_sweep(phi: f64, start: f64, end: f64) -> bool {
    let sweep = end - start;
    if sweep.abs() >= TAU {
        return true;
    }
    let rel = if sweep >= 0.0 {
        phi - start
    } else {
        start - phi
    };
    rel.rem_euclid(TAU) <= sweep.abs() + 1e-15
}

/// The set where the distance to the boundary is maximal.
#[derive(Debug, Clone, PartialEq)]
pub enum RidgeSet {
    SinglePoint { p: Point2 },
    Segment { a: Point2, b: Point2 },
    NodeSet { points: Vec<Point2> },
}

impl RidgeSet {
    /// Euclidean distance from `p` to the ridge.
    pub fn distance(&self, p: Point2) -> f64 {
        match self {
            RidgeSet::SinglePoint { p: q } => p.dist(*q),
            RidgeSet::Segment { a, b } => BoundaryPiece::Segment { a: *a, b: *b }.distance(p),
            RidgeSet::NodeSet { points } => points
                .iter()
                .map(|q| p.dist(*q))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Representative points: the point itself, both segment endpoints and
    /// the midpoint, or every node.
    pub fn points(&self) -> Vec<Point2> {
        match self {
            RidgeSet::SinglePoint { p } => vec![*p],
            RidgeSet::Segment { a, b } => vec![*a, (*a + *b) * 0.5, *b],
            RidgeSet::NodeSet { points } => points.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryExit {
    pub t: f64,
    pub q: Point2,
}

/// A built domain: parameters plus the exact piecewise boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub spec: DomainSpec,
    pub boundary: Vec<BoundaryPiece>,
    pub bbox: (Point2, Point2),
}

const EXIT_TOL: f64 = 1e-10;

impl Domain {
    pub fn build(spec: DomainSpec) -> Result<Domain, GeometryError> {
        spec.validate()?;
        let boundary = match spec {
            DomainSpec::Ball { center, radius } => vec![full_circle(center, radius)],
            DomainSpec::Stadium { centers, radius } => stadium_boundary(centers, radius),
            DomainSpec::Square { center, half_side } => square_boundary(center, half_side),
            DomainSpec::SEps { eps } => s_eps_boundary(eps),
        };
        let bbox = match spec {
            DomainSpec::Ball { center, radius } => (
                Point2::new(center.x - radius, center.y - radius),
                Point2::new(center.x + radius, center.y + radius),
            ),
            DomainSpec::Stadium {
                centers: (c1, c2),
                radius,
            } => (
                Point2::new(c1.x.min(c2.x) - radius, c1.y.min(c2.y) - radius),
                Point2::new(c1.x.max(c2.x) + radius, c1.y.max(c2.y) + radius),
            ),
            DomainSpec::Square { center, half_side } => (
                Point2::new(center.x - half_side, center.y - half_side),
                Point2::new(center.x + half_side, center.y + half_side),
            ),
            DomainSpec::SEps { eps } => (
                Point2::new(-2.0 - eps, -1.0 - eps),
                Point2::new(2.0, 1.0 + eps),
            ),
        };
        Ok(Domain {
            spec,
            boundary,
            bbox,
        })
    }

    /// Membership in the closed domain, decided from the defining primitives
    /// rather than from the boundary curve.
    pub fn contains(&self, p: Point2) -> bool {
        match self.spec {
            DomainSpec::Ball { center, radius } => p.dist(center) <= radius,
            DomainSpec::Stadium {
                centers: (c1, c2),
                radius,
            } => BoundaryPiece::Segment { a: c1, b: c2 }.distance(p) <= radius,
            DomainSpec::Square { center, half_side } => {
                (p.x - center.x).abs() <= half_side && (p.y - center.y).abs() <= half_side
            }
            DomainSpec::SEps { eps } => {
                p.dist(Point2::new(-1.0, 0.0)) <= 1.0 + eps
                    || p.dist(Point2::new(1.0, 0.0)) <= 1.0
                    || (p.x.abs() <= 1.0 && p.y.abs() <= s_eps_upper_line(eps, p.x))
            }
        }
    }

    /// Unsigned distance to the boundary curve.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        self.boundary
            .iter()
            .map(|piece| piece.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Signed distance to the boundary, negative inside.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        let d = self.boundary_distance(p);
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    /// Distance to the boundary, clamped to 0 outside the domain.
    pub fn delta(&self, p: Point2) -> f64 {
        (-self.signed_distance(p)).max(0.0)
    }

    /// Radius of the largest inscribed disk.
    pub fn inradius(&self) -> f64 {
        match self.spec {
            DomainSpec::Ball { radius, .. } | DomainSpec::Stadium { radius, .. } => radius,
            DomainSpec::Square { half_side, .. } => half_side,
            DomainSpec::SEps { eps } => 1.0 + eps,
        }
    }

    /// First infinity-eigenvalue: the reciprocal of the inradius.
    pub fn lambda(&self) -> f64 {
        1.0 / self.inradius()
    }

    /// Analytic set of maximizers of the distance function.
    pub fn high_ridge(&self) -> RidgeSet {
        match self.spec {
            DomainSpec::Ball { center, .. } | DomainSpec::Square { center, .. } => {
                RidgeSet::SinglePoint { p: center }
            }
            DomainSpec::Stadium {
                centers: (a, b), ..
            } => {
                if a == b {
                    RidgeSet::SinglePoint { p: a }
                } else {
                    RidgeSet::Segment { a, b }
                }
            }
            DomainSpec::SEps { eps } => {
                if eps > 0.0 {
                    RidgeSet::SinglePoint {
                        p: Point2::new(-1.0, 0.0),
                    }
                } else {
                    RidgeSet::Segment {
                        a: Point2::new(-1.0, 0.0),
                        b: Point2::new(1.0, 0.0),
                    }
                }
            }
        }
    }

    /// Enclosed area, from Green's theorem along the boundary pieces.
    pub fn area(&self) -> f64 {
        self.boundary
            .iter()
            .map(BoundaryPiece::green_area)
            .sum::<f64>()
            .abs()
    }

    pub fn perimeter(&self) -> f64 {
        self.boundary.iter().map(BoundaryPiece::length).sum()
    }

    /// First crossing of the boundary along the ray `p + t·dir`, `0 < t ≤ max_len`.
    ///
    /// The ray is scanned in at least 64 steps for a sign change of the signed
    /// distance, then the crossing is refined by bisection. Returns `None`
    /// when the whole arm stays inside.
    pub fn boundary_exit(
        &self,
        p: Point2,
        dir: Point2,
        max_len: f64,
    ) -> Result<Option<BoundaryExit>, GeometryError> {
        if self.signed_distance(p) >= 0.0 {
            return Err(GeometryError::NotInside { x: p.x, y: p.y });
        }
        let steps = 64usize.max((max_len / (0.25 * self.inradius())).ceil() as usize);
        let mut lo = 0.0;
        let mut hit = None;
        for s in 1..=steps {
            let t = max_len * s as f64 / steps as f64;
            let sd = self.signed_distance(p + dir * t);
            if sd >= 0.0 {
                hit = Some(t);
                break;
            }
            lo = t;
        }
        let Some(mut hi) = hit else {
            return Ok(None);
        };
        let at = |t: f64| p + dir * t;
        if self.signed_distance(at(hi)) == 0.0 {
            return Ok(Some(BoundaryExit { t: hi, q: at(hi) }));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.signed_distance(at(mid)) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 0.25 * EXIT_TOL {
                break;
            }
        }
        let q = at(hi);
        if self.signed_distance(q).abs() > EXIT_TOL {
            return Err(GeometryError::Unbracketed {
                x: p.x,
                y: p.y,
                dx: dir.x,
                dy: dir.y,
            });
        }
        Ok(Some(BoundaryExit { t: hi, q }))
    }

    /// Midpoint convexity test on random pairs of boundary points.
    ///
    /// Returns the number of pairs whose midpoint falls outside the closed
    /// domain by more than `slack`.
    pub fn convexity_violations<R: Rng>(&self, pairs: usize, slack: f64, rng: &mut R) -> usize {
        let perimeter = self.perimeter();
        let sample = |rng: &mut R| -> Point2 {
            let mut s = rng.gen::<f64>() * perimeter;
            for piece in &self.boundary {
                let len = piece.length();
                if s <= len {
                    return piece.point_at(s / len);
                }
                s -= len;
            }
            self.boundary[self.boundary.len() - 1].end()
        };
        (0..pairs)
            .filter(|_| {
                let (a, b) = (sample(rng), sample(rng));
                self.signed_distance((a + b) * 0.5) > slack
            })
            .count()
    }
}

fn full_circle(center: Point2, radius: f64) -> BoundaryPiece {
    BoundaryPiece::Arc {
        center,
        radius,
        angle_start: 0.0,
        angle_end: -TAU,
    }
}

// All boundaries are traversed clockwise.

fn stadium_boundary((c1, c2): (Point2, Point2), radius: f64) -> Vec<BoundaryPiece> {
    let axis = c2 - c1;
    let len = axis.norm();
    if len == 0.0 {
        return vec![full_circle(c1, radius)];
    }
    let u = axis * (1.0 / len);
    let n = Point2::new(-u.y, u.x);
    let up = n.angle();
    vec![
        BoundaryPiece::Segment {
            a: c1 + n * radius,
            b: c2 + n * radius,
        },
        BoundaryPiece::Arc {
            center: c2,
            radius,
            angle_start: up,
            angle_end: up - PI,
        },
        BoundaryPiece::Segment {
            a: c2 - n * radius,
            b: c1 - n * radius,
        },
        BoundaryPiece::Arc {
            center: c1,
            radius,
            angle_start: up - PI,
            angle_end: up - TAU,
        },
    ]
}

fn square_boundary(c: Point2, a: f64) -> Vec<BoundaryPiece> {
    let corners = [
        Point2::new(c.x - a, c.y + a),
        Point2::new(c.x + a, c.y + a),
        Point2::new(c.x + a, c.y - a),
        Point2::new(c.x - a, c.y - a),
    ];
    (0..4)
        .map(|i| BoundaryPiece::Segment {
            a: corners[i],
            b: corners[(i + 1) % 4],
        })
        .collect()
}

/// Upper edge of the trapezoid: the line through (-1, 1+eps) and (1, 1).
fn s_eps_upper_line(eps: f64, x: f64) -> f64 {
    1.0 + eps - 0.5 * eps * (x + 1.0)
}

/// Where the upper line leaves the disk of radius `1+eps` about (-1, 0).
///
/// With `s = x + 1` the line–circle equation reduces to
/// `s·((1 + eps²/4)·s − eps·(1+eps)) = 0`; the nonzero root is the transition.
pub(crate) fn s_eps_left_transition(eps: f64) -> Point2 {
    let s = eps * (1.0 + eps) / (1.0 + 0.25 * eps * eps);
    Point2::new(-1.0 + s, s_eps_upper_line(eps, -1.0 + s))
}

fn s_eps_boundary(eps: f64) -> Vec<BoundaryPiece> {
    let left = Point2::new(-1.0, 0.0);
    let right = Point2::new(1.0, 0.0);
    let top = s_eps_left_transition(eps);
    let bottom = Point2::new(top.x, -top.y);
    let theta = (top - left).angle();
    vec![
        BoundaryPiece::Arc {
            center: left,
            radius: 1.0 + eps,
            angle_start: -theta,
            angle_end: theta - TAU,
        },
        BoundaryPiece::Segment {
            a: top,
            b: Point2::new(1.0, 1.0),
        },
        BoundaryPiece::Arc {
            center: right,
            radius: 1.0,
            angle_start: FRAC_PI_2,
            angle_end: -FRAC_PI_2,
        },
        BoundaryPiece::Segment {
            a: Point2::new(1.0, -1.0),
            b: bottom,
        },
    ]
}
