use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::iou::clip_convex;
use super::obb::{box_to_polygon, OrientedBox, Point};
use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// What to put on a synthetic canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Side lengths are drawn from `[min_size, max_size]` pixels.
    pub min_size: f64,
    pub max_size: f64,
    pub classes: usize,
    /// Keep every box at theta = 0.
    pub axis_aligned: bool,
    /// Background is uniform noise in `[0, noise)`.
    pub noise: f64,
    /// Placement attempts per object before giving up.
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            min_objects: 2,
            max_objects: 5,
            min_size: 12.0,
            max_size: 48.0,
            classes: 2,
            axis_aligned: false,
            noise: 0.2,
            max_attempts: 200,
        }
    }
}

impl SceneSpec {
    pub fn exact(objects: usize, classes: usize) -> Self {
        Self {
            min_objects: objects,
            max_objects: objects,
            classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_objects > self.max_objects {
            return Err(contract_err!("min_objects {} > max_objects {}", self.min_objects, self.max_objects));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size.is_finite()) {
            return Err(contract_err!("size range [{}, {}] is invalid", self.min_size, self.max_size));
        }
        if self.classes == 0 {
            return Err(contract_err!("scene needs at least one class"));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(contract_err!("noise {} outside [0, 1)", self.noise));
        }
        if self.max_attempts == 0 {
            return Err(contract_err!("max_attempts must be positive"));
        }
        Ok(())
    }

    /// Fill value for objects of `class_id`; always above the noise floor.
    pub fn intensity(&self, class_id: usize) -> f64 {
        0.4 + 0.6 * (class_id + 1) as f64 / self.classes as f64
    }
}

/// A rendered image of shape `(1, 1, H, W)` and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T: Scalar> {
    pub image: Tensor<T>,
    pub truth: Vec<OrientedBox<T>>,
}

fn overlaps(a: &OrientedBox<f64>, b: &OrientedBox<f64>) -> bool {
    // one pixel of clearance so rendered objects never touch
    let grow = |x: &OrientedBox<f64>| OrientedBox { w: x.w + 2.0, h: x.h + 2.0, ..*x };
    clip_convex(&box_to_polygon(&grow(a)), &box_to_polygon(&grow(b))).area() > 0.0
}

/// Draws a seeded scene. Identical inputs give bit-identical output.
///
/// Pixel `(r, c)` covers `[c, c+1) x [r, r+1)` and is filled when its centre
/// lies inside a box; x runs along columns, y along rows.
pub fn gen_scene<T: Scalar>(seed: u64, spec: &SceneSpec, canvas: (usize, usize)) -> Result<Scene<T>> {
    spec.validate()?;
    let (height, width) = canvas;
    if height == 0 || width == 0 {
        return Err(contract_err!("canvas must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut placed: Vec<OrientedBox<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let class_id = rng.gen_range(0..spec.classes);
        let mut found = None;
        for _ in 0..spec.max_attempts {
            let a = rng.gen_range(spec.min_size..=spec.max_size);
            let b = rng.gen_range(spec.min_size..=spec.max_size);
            let theta = if spec.axis_aligned {
                0.0
            } else {
                rng.gen_range(0.0..std::f64::consts::TAU)
            };
            let (w, h) = (a.max(b), a.min(b));
            let (s, c) = theta.sin_cos();
            let ex = 0.5 * (w * c.abs() + h * s.abs());
            let ey = 0.5 * (w * s.abs() + h * c.abs());
            if 2.0 * ex >= width as f64 || 2.0 * ey >= height as f64 {
                continue;
            }
            let cx = rng.gen_range(ex..width as f64 - ex);
            let cy = rng.gen_range(ey..height as f64 - ey);
            let cand = OrientedBox::truth(cx, cy, w, h, theta, class_id)?;
            if placed.iter().all(|p| !overlaps(p, &cand)) {
                found = Some(cand);
                break;
            }
        }
        match found {
            Some(b) => placed.push(b),
            None => {
                return Err(Error::Generation(format!(
                    "could not place object {} of {count} on a {height}x{width} canvas after {} attempts",
                    k + 1,
                    spec.max_attempts
                )))
            }
        }
    }

    let mut pixels = vec![0.0f64; height * width];
    if spec.noise > 0.0 {
        for v in pixels.iter_mut() {
            *v = rng.gen_range(0.0..spec.noise);
        }
    }
    for b in &placed {
        let fill = spec.intensity(b.class_id);
        let (lo, hi) = box_to_polygon(b).bounds();
        let r0 = lo.y.floor().max(0.0) as usize;
        let r1 = (hi.y.ceil() as usize).min(height);
        let c0 = lo.x.floor().max(0.0) as usize;
        let c1 = (hi.x.ceil() as usize).min(width);
        for r in r0..r1 {
            for c in c0..c1 {
                if b.contains(Point::new(c as f64 + 0.5, r as f64 + 0.5)) {
                    pixels[r * width + c] = fill;
                }
            }
        }
    }

    let image = Tensor::new(vec![1, 1, height, width], pixels.into_iter().map(T::lit).collect())?;
    let truth = placed
        .iter()
        .map(|b| OrientedBox::truth(T::lit(b.cx), T::lit(b.cy), T::lit(b.w), T::lit(b.h), T::lit(b.theta), b.class_id))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene { image, truth })
}
