use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::iou::rotated_iou;
use super::obb::OrientedBox;
use crate::error::{contract_err, Result};
use crate::scalar::Scalar;

/// Per-class average precision and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    /// AP for every class that has at least one ground-truth box.
    pub per_class: BTreeMap<usize, f64>,
    /// Mean over `per_class`; 0 when no class has ground truth.
    pub map: f64,
    /// Matching thresholds that were averaged (a single entry unless swept).
    pub iou_thresholds: Vec<f64>,
}

/// Area under the all-point interpolated precision/recall curve. Points must
/// be in order of non-decreasing recall.
pub fn all_point_ap(recall: &[f64], precision: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (r, p) in recall.iter().zip(&envelope) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// Precision/recall points for one class. Predictions with equal scores are
/// scored as a block, so the curve does not depend on input order.
pub fn pr_curve<T: Scalar>(
    preds: &[Vec<OrientedBox<T>>],
    truth: &[Vec<OrientedBox<T>>],
    class_id: usize,
    iou_thresh: T,
) -> (Vec<f64>, Vec<f64>) {
    let gts: Vec<Vec<&OrientedBox<T>>> = truth
        .iter()
        .map(|img| img.iter().filter(|b| b.class_id == class_id).collect())
        .collect();
    let npos: usize = gts.iter().map(Vec::len).sum();
    let mut dets: Vec<(usize, &OrientedBox<T>)> = preds
        .iter()
        .enumerate()
        .flat_map(|(i, img)| img.iter().filter(|b| b.class_id == class_id).map(move |b| (i, b)))
        .collect();
    dets.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap_or(Ordering::Equal));

    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut recall, mut precision) = (Vec::new(), Vec::new());
    for (k, &(img, det)) in dets.iter().enumerate() {
        // each prediction is judged against its best-overlapping truth; a
        // truth that is already claimed turns later claimants into false positives
        let best = gts[img]
            .iter()
            .enumerate()
            .map(|(j, g)| (j, rotated_iou(det, g)))
            .fold(None, |acc: Option<(usize, T)>, (j, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((j, v)),
            });
        match best {
            Some((j, v)) if v >= iou_thresh && v > T::zero() && !taken[img][j] => {
                taken[img][j] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        let block_ends = dets.get(k + 1).is_none_or(|next| next.1.score != det.score);
        if block_ends {
            recall.push(tp as f64 / npos.max(1) as f64);
            precision.push(tp as f64 / (tp + fp) as f64);
        }
    }
    (recall, precision)
}

fn check_inputs<T: Scalar>(preds: &[Vec<OrientedBox<T>>], truth: &[Vec<OrientedBox<T>>]) -> Result<()> {
    if preds.len() != truth.len() {
        return Err(contract_err!(
            "{} prediction lists for {} images",
            preds.len(),
            truth.len()
        ));
    }
    Ok(())
}

fn classes_in<T: Scalar>(truth: &[Vec<OrientedBox<T>>]) -> Vec<usize> {
    let mut c: Vec<usize> = truth.iter().flatten().map(|b| b.class_id).collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// Single-threshold mAP. Classes without ground truth are left out of the mean.
pub fn eval_map<T: Scalar>(
    preds: &[Vec<OrientedBox<T>>],
    truth: &[Vec<OrientedBox<T>>],
    iou_thresh: T,
) -> Result<MapReport> {
    if !(iou_thresh >= T::zero() && iou_thresh <= T::one()) {
        return Err(contract_err!("IoU threshold {iou_thresh} outside [0, 1]"));
    }
    check_inputs(preds, truth)?;
    let per_class: BTreeMap<usize, f64> = classes_in(truth)
        .into_iter()
        .map(|c| {
            let (r, p) = pr_curve(preds, truth, c, iou_thresh);
            (c, all_point_ap(&r, &p))
        })
        .collect();
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(MapReport {
        per_class,
        map,
        iou_thresholds: vec![iou_thresh.to_f64_lossy()],
    })
}

/// The 0.50:0.05:0.95 threshold sweep, averaged per class and overall.
pub fn eval_map_coco<T: Scalar>(
    preds: &[Vec<OrientedBox<T>>],
    truth: &[Vec<OrientedBox<T>>],
) -> Result<MapReport> {
    check_inputs(preds, truth)?;
    let thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let mut per_class: BTreeMap<usize, f64> = BTreeMap::new();
    for &t in &thresholds {
        for (c, ap) in eval_map(preds, truth, T::lit(t))?.per_class {
            *per_class.entry(c).or_insert(0.0) += ap;
        }
    }
    for ap in per_class.values_mut() {
        *ap /= thresholds.len() as f64;
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(MapReport {
        per_class,
        map,
        iou_thresholds: thresholds,
    })
}
