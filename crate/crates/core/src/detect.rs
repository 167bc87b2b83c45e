//! Turning head outputs into oriented boxes.
//!
//! Every cell of a level with stride `s` carries `anchors` square anchors
//! centred on the cell, anchor `a` having side `scale * s * 2^(a / anchors)`.
//! Per anchor the box channels `(dcx, dcy, dw, dh, x, y)` decode as
//!
//! ```text
//! cx = ax + dcx * side        w = side * exp(dw)
//! cy = ay + dcy * side        h = side * exp(dh)
//! theta = angle of the normalized code (x, y)
//! ```
//!
//! and class scores are the sigmoid of the logits.

use crate::eaem::{self, Omega};
use crate::error::{contract_err, shape_err, Result};
use crate::geometry::{batched_rotated_nms, OrientedBox};
use crate::pyramid::{HeadOutputs, BOX_CHANNELS, LEVEL_STRIDES};
use crate::scalar::Scalar;
use crate::tensor::kernels::sigmoid_scalar;
use crate::tensor::Tensor;

/// Size deltas are clamped to this magnitude before exponentiation.
pub const MAX_SIZE_DELTA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig<T> {
    pub omega: Omega<T>,
    pub anchors: usize,
    pub anchor_scale: T,
    pub score_threshold: T,
    pub nms_threshold: T,
    pub max_detections: usize,
}

impl<T: Scalar> Default for DecodeConfig<T> {
    fn default() -> Self {
        Self {
            omega: Omega::default(),
            anchors: 1,
            anchor_scale: T::lit(4.0),
            score_threshold: T::lit(0.05),
            nms_threshold: T::lit(0.5),
            max_detections: 100,
        }
    }
}

impl<T: Scalar> DecodeConfig<T> {
    /// Side of anchor `a` on a level with the given stride.
    pub fn anchor_side(&self, stride: usize, a: usize) -> T {
        self.anchor_scale * T::lit(stride as f64) * T::lit(2f64.powf(a as f64 / self.anchors as f64))
    }

    fn validate(&self) -> Result<()> {
        if self.anchors == 0 || !(self.anchor_scale > T::zero()) {
            return Err(contract_err!("anchors and anchor scale must be positive"));
        }
        for (name, v) in [("score", self.score_threshold), ("nms", self.nms_threshold)] {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(contract_err!("{name} threshold {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Raw regression values for one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDeltas<T> {
    pub dcx: T,
    pub dcy: T,
    pub dw: T,
    pub dh: T,
    pub x: T,
    pub y: T,
}

/// Decodes one anchor; a degenerate angle code falls back to theta = 0.
pub fn decode_box<T: Scalar>(
    anchor: (T, T, T),
    d: &BoxDeltas<T>,
    omega: Omega<T>,
    class_id: usize,
    score: T,
) -> Result<OrientedBox<T>> {
    let (ax, ay, side) = anchor;
    let lim = T::lit(MAX_SIZE_DELTA);
    let theta = eaem::normalize(d.x, d.y, omega)
        .and_then(|c| eaem::decode(&c))
        .unwrap_or(T::zero());
    OrientedBox::new(
        ax + d.dcx * side,
        ay + d.dcy * side,
        side * d.dw.max(-lim).min(lim).exp(),
        side * d.dh.max(-lim).min(lim).exp(),
        theta,
        class_id,
        score,
    )
}

/// Inverse of [`decode_box`] for targets whose size deltas are within the clamp.
pub fn encode_box<T: Scalar>(anchor: (T, T, T), b: &OrientedBox<T>, omega: Omega<T>) -> Result<BoxDeltas<T>> {
    let (ax, ay, side) = anchor;
    let period = omega.period();
    let mut theta = b.theta % period;
    if theta < T::zero() {
        theta += period;
    }
    let code = eaem::encode(theta, omega)?;
    Ok(BoxDeltas {
        dcx: (b.cx - ax) / side,
        dcy: (b.cy - ay) / side,
        dw: (b.w / side).ln(),
        dh: (b.h / side).ln(),
        x: code.x(),
        y: code.y(),
    })
}

/// All boxes scoring at least the threshold on one level, per image.
pub fn decode_level<T: Scalar>(
    logits: &Tensor<T>,
    boxes: &Tensor<T>,
    stride: usize,
    cfg: &DecodeConfig<T>,
) -> Result<Vec<Vec<OrientedBox<T>>>> {
    cfg.validate()?;
    let [n, lc, h, w] = logits.dims4()?;
    let [bn, bc, bh, bw] = boxes.dims4()?;
    if lc % cfg.anchors != 0 || lc == 0 {
        return Err(shape_err!("{lc} logit channels do not split over {} anchors", cfg.anchors));
    }
    if (bn, bc, bh, bw) != (n, cfg.anchors * BOX_CHANNELS, h, w) {
        return Err(shape_err!(
            "box tensor {:?} does not match logits {:?} with {} anchors",
            boxes.dims(),
            logits.dims(),
            cfg.anchors
        ));
    }
    let classes = lc / cfg.anchors;
    let mut out = vec![Vec::new(); n];
    for (img, dets) in out.iter_mut().enumerate() {
        for a in 0..cfg.anchors {
            let side = cfg.anchor_side(stride, a);
            for r in 0..h {
                for c in 0..w {
                    let ch = |k: usize| boxes.at4(img, a * BOX_CHANNELS + k, r, c);
                    let d = BoxDeltas {
                        dcx: ch(0),
                        dcy: ch(1),
                        dw: ch(2),
                        dh: ch(3),
                        x: ch(4),
                        y: ch(5),
                    };
                    let ax = T::lit((c as f64 + 0.5) * stride as f64);
                    let ay = T::lit((r as f64 + 0.5) * stride as f64);
                    for k in 0..classes {
                        let score = sigmoid_scalar(logits.at4(img, a * classes + k, r, c));
                        if score >= cfg.score_threshold {
                            dets.push(decode_box((ax, ay, side), &d, cfg.omega, k, score)?);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Decodes all levels, applies per-class rotated NMS and keeps the top
/// `max_detections` per image.
pub fn postprocess<T: Scalar>(heads: &HeadOutputs<T>, cfg: &DecodeConfig<T>) -> Result<Vec<Vec<OrientedBox<T>>>> {
    let mut per_image: Vec<Vec<OrientedBox<T>>> = Vec::new();
    for (l, stride) in LEVEL_STRIDES.iter().enumerate() {
        let level = decode_level(&heads.logits[l], &heads.boxes[l], *stride, cfg)?;
        if per_image.is_empty() {
            per_image = level;
        } else {
            for (acc, dets) in per_image.iter_mut().zip(level) {
                acc.extend(dets);
            }
        }
    }
    Ok(per_image
        .into_iter()
        .map(|dets| {
            let mut kept = batched_rotated_nms(&dets, cfg.nms_threshold);
            kept.truncate(cfg.max_detections);
            kept
        })
        .collect())
}
