use crate::error::{contract_err, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }

    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }
}

/// Reduces an angle into `[0, 2*pi)`.
pub fn wrap_angle<T: Scalar>(theta: T) -> T {
    let tau = T::TAU();
    let mut t = theta % tau;
    if t < T::zero() {
        t += tau;
    }
    if t >= tau {
        t = T::zero();
    }
    t
}

/// Rotated rectangle `(cx, cy, w, h, theta)` with a class label and score.
///
/// Construction canonicalizes to `w >= h` (swapping and adding `pi/2` when
/// needed) and `theta in [0, 2*pi)`; both spellings describe the same
/// rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox<T> {
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
    pub theta: T,
    pub class_id: usize,
    pub score: T,
}

impl<T: Scalar> OrientedBox<T> {
    pub fn new(cx: T, cy: T, w: T, h: T, theta: T, class_id: usize, score: T) -> Result<Self> {
        let vals = [cx, cy, w, h, theta, score];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(contract_err!("box fields must be finite"));
        }
        if !(w > T::zero() && h > T::zero()) {
            return Err(contract_err!("box extents must be positive, got {w} x {h}"));
        }
        if !(score >= T::zero() && score <= T::one()) {
            return Err(contract_err!("score {score} outside [0, 1]"));
        }
        let (w, h, theta) = if w < h {
            (h, w, theta + T::FRAC_PI_2())
        } else {
            (w, h, theta)
        };
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta: wrap_angle(theta),
            class_id,
            score,
        })
    }

    /// Ground-truth style box with score 1.
    pub fn truth(cx: T, cy: T, w: T, h: T, theta: T, class_id: usize) -> Result<Self> {
        Self::new(cx, cy, w, h, theta, class_id, T::one())
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    /// Whether `p` lies inside or on the boundary.
    pub fn contains(&self, p: Point<T>) -> bool {
        self.frame().contains(p)
    }

    /// Precomputed local frame for repeated containment tests.
    pub fn frame(&self) -> BoxFrame<T> {
        let (s, c) = self.theta.sin_cos();
        let half = T::lit(0.5);
        BoxFrame {
            cx: self.cx,
            cy: self.cy,
            sin: s,
            cos: c,
            half_w: half * self.w,
            half_h: half * self.h,
        }
    }

    /// The same box rotated rigidly by `angle` about `origin`.
    pub fn rotated_about(&self, origin: Point<T>, angle: T) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        let dx = self.cx - origin.x;
        let dy = self.cy - origin.y;
        Self::new(
            origin.x + dx * c - dy * s,
            origin.y + dx * s + dy * c,
            self.w,
            self.h,
            self.theta + angle,
            self.class_id,
            self.score,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxFrame<T> {
    cx: T,
    cy: T,
    sin: T,
    cos: T,
    half_w: T,
    half_h: T,
}

impl<T: Scalar> BoxFrame<T> {
    pub fn contains(&self, p: Point<T>) -> bool {
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        u.abs() <= self.half_w && v.abs() <= self.half_h
    }
}

/// Convex polygon with counter-clockwise vertices (positive shoelace area).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon<T> {
    vertices: Vec<Point<T>>,
}

impl<T: Scalar> ConvexPolygon<T> {
    /// Wraps vertices, reversing clockwise input. Convexity is the caller's
    /// responsibility.
    pub fn new(mut vertices: Vec<Point<T>>) -> Self {
        if signed_area(&vertices) < T::zero() {
            vertices.reverse();
        }
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    pub fn area(&self) -> T {
        signed_area(&self.vertices).abs()
    }

    pub fn centroid(&self) -> Point<T> {
        let n = T::lit(self.vertices.len() as f64);
        let sx: T = self.vertices.iter().map(|p| p.x).sum();
        let sy: T = self.vertices.iter().map(|p| p.y).sum();
        Point::new(sx / n, sy / n)
    }

    pub fn bounds(&self) -> (Point<T>, Point<T>) {
        let mut lo = Point::new(T::infinity(), T::infinity());
        let mut hi = Point::new(T::neg_infinity(), T::neg_infinity());
        for p in &self.vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

/// Shoelace formula; positive for counter-clockwise order.
pub fn signed_area<T: Scalar>(pts: &[Point<T>]) -> T {
    if pts.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        acc += a.cross(b);
    }
    acc * T::lit(0.5)
}

/// The four corners, counter-clockwise starting from local `(-w/2, -h/2)`.
pub fn box_to_polygon<T: Scalar>(b: &OrientedBox<T>) -> ConvexPolygon<T> {
    let (s, c) = b.theta.sin_cos();
    let hw = b.w * T::lit(0.5);
    let hh = b.h * T::lit(0.5);
    let corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
    ConvexPolygon::new(
        corners
            .iter()
            .map(|&(dx, dy)| Point::new(b.cx + dx * c - dy * s, b.cy + dx * s + dy * c))
            .collect(),
    )
}
