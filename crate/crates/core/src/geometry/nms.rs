use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::iou::rotated_iou;
use super::obb::OrientedBox;
use crate::scalar::Scalar;

fn cmp<T: Scalar>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Score descending, then class, cx, cy ascending.
pub fn detection_order<T: Scalar>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> Ordering {
    cmp(b.score, a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then(cmp(a.cx, b.cx))
        .then(cmp(a.cy, b.cy))
}

/// Indices of the boxes kept by greedy suppression, in visiting order.
/// A box is dropped when its IoU with an already kept box exceeds
/// `iou_threshold`.
pub fn rotated_nms_indices<T: Scalar>(boxes: &[OrientedBox<T>], iou_threshold: T) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| detection_order(&boxes[i], &boxes[j]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| rotated_iou(&boxes[k], &boxes[i]) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}

/// Class-agnostic rotated NMS.
pub fn rotated_nms<T: Scalar>(boxes: &[OrientedBox<T>], iou_threshold: T) -> Vec<OrientedBox<T>> {
    rotated_nms_indices(boxes, iou_threshold)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

/// Runs NMS independently per class and merges the survivors in detection order.
pub fn batched_rotated_nms<T: Scalar>(boxes: &[OrientedBox<T>], iou_threshold: T) -> Vec<OrientedBox<T>> {
    let mut by_class: BTreeMap<usize, Vec<OrientedBox<T>>> = BTreeMap::new();
    for b in boxes {
        by_class.entry(b.class_id).or_default().push(*b);
    }
    let mut out: Vec<OrientedBox<T>> = by_class
        .values()
        .flat_map(|v| rotated_nms(v, iou_threshold))
        .collect();
    out.sort_by(detection_order);
    out
}
