use std::cmp::Ordering;

use super::obb::{box_to_polygon, ConvexPolygon, OrientedBox, Point};
use crate::scalar::Scalar;

/// Clips `subject` against every edge of the convex `clip` polygon.
///
/// Touching or collinear edges yield a zero-area (possibly empty) result;
/// zero-length clip edges are skipped so no division by zero can occur.
pub fn clip_convex<T: Scalar>(subject: &ConvexPolygon<T>, clip: &ConvexPolygon<T>) -> ConvexPolygon<T> {
    let mut out: Vec<Point<T>> = subject.vertices().to_vec();
    let cv = clip.vertices();
    for i in 0..cv.len() {
        if out.is_empty() {
            break;
        }
        let a = cv[i];
        let b = cv[(i + 1) % cv.len()];
        let edge = b.sub(a);
        if edge.x == T::zero() && edge.y == T::zero() {
            continue;
        }
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = edge.cross(p.sub(a));
            let dq = edge.cross(q.sub(a));
            let p_in = dp >= T::zero();
            let q_in = dq >= T::zero();
            if p_in != q_in {
                let t = dp / (dp - dq);
                out.push(Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)));
            }
            if q_in {
                out.push(q);
            }
        }
    }
    ConvexPolygon::new(out)
}

fn box_order<T: Scalar>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> Ordering {
    [a.cx, a.cy, a.w, a.h, a.theta]
        .iter()
        .zip([b.cx, b.cy, b.w, b.h, b.theta].iter())
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Exact IoU of two oriented boxes by polygon clipping.
///
/// Arguments are put in a fixed order first, so the result is bitwise
/// symmetric.
pub fn rotated_iou<T: Scalar>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> T {
    let (a, b) = if box_order(a, b).is_gt() { (b, a) } else { (a, b) };
    let pa = box_to_polygon(a);
    let pb = box_to_polygon(b);
    let inter = clip_convex(&pa, &pb).area();
    let union = pa.area() + pb.area() - inter;
    if !(union > T::zero()) || !inter.is_finite() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}

/// Brute-force IoU: counts cell centres of a `grid x grid` lattice laid over
/// the joint bounding extent of both boxes.
pub fn raster_iou_oracle<T: Scalar>(a: &OrientedBox<T>, b: &OrientedBox<T>, grid: usize) -> T {
    let (la, ha) = box_to_polygon(a).bounds();
    let (lb, hb) = box_to_polygon(b).bounds();
    let x0 = la.x.min(lb.x).to_f64_lossy();
    let y0 = la.y.min(lb.y).to_f64_lossy();
    let x1 = ha.x.max(hb.x).to_f64_lossy();
    let y1 = ha.y.max(hb.y).to_f64_lossy();
    let (dx, dy) = ((x1 - x0) / grid as f64, (y1 - y0) / grid as f64);
    let (fa, fb) = (a.frame(), b.frame());
    let (mut both, mut either) = (0u64, 0u64);
    for r in 0..grid {
        let y = T::lit(y0 + (r as f64 + 0.5) * dy);
        for c in 0..grid {
            let p = Point::new(T::lit(x0 + (c as f64 + 0.5) * dx), y);
            let (ia, ib) = (fa.contains(p), fb.contains(p));
            both += (ia && ib) as u64;
            either += (ia || ib) as u64;
        }
    }
    if either == 0 {
        T::zero()
    } else {
        T::lit(both as f64 / either as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(cx: f64, cy: f64) -> OrientedBox<f64> {
        OrientedBox::truth(cx, cy, 1.0, 1.0, 0.0, 0).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let b = OrientedBox::<f64>::truth(2.0, 3.0, 4.0, 1.0, 0.7, 0).unwrap();
        assert!((rotated_iou(&b, &b) - 1.0).abs() < 1e-12);
        assert_eq!(rotated_iou(&sq(0.0, 0.0), &sq(5.0, 0.0)), 0.0);
        assert_eq!(raster_iou_oracle(&b, &b, 256), 1.0);
    }

    #[test]
    fn offset_squares_third() {
        let v = rotated_iou(&sq(0.0, 0.0), &sq(0.5, 0.0));
        assert!((v - 1.0 / 3.0).abs() <= 1e-9);
        let r = raster_iou_oracle(&sq(0.0, 0.0), &sq(0.5, 0.0), 1024);
        assert!((r - 1.0 / 3.0).abs() <= 5e-3);
    }

    #[test]
    fn touching_edges_have_zero_overlap() {
        assert_eq!(rotated_iou(&sq(0.0, 0.0), &sq(1.0, 0.0)), 0.0);
        assert_eq!(rotated_iou(&sq(0.0, 0.0), &sq(1.0, 1.0)), 0.0);
    }

    #[test]
    fn contained_box() {
        let big = OrientedBox::<f64>::truth(0.0, 0.0, 4.0, 4.0, 0.3, 0).unwrap();
        let small = OrientedBox::truth(0.0, 0.0, 2.0, 1.0, 1.1, 0).unwrap();
        assert!((rotated_iou(&big, &small) - 2.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let a = OrientedBox::<f32>::truth(0.0, 0.0, 1.0, 1.0, 0.0, 0).unwrap();
        let b = OrientedBox::<f32>::truth(0.5, 0.0, 1.0, 1.0, 0.0, 0).unwrap();
        assert!((rotated_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-6);
    }
}
