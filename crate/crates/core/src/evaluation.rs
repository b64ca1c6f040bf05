//! Detection and segmentation quality metrics.
//!
//! Detection scoring follows the usual single-IoU-threshold protocol: greedy
//! matching in descending score order, each ground-truth box claimed at most
//! once, and average precision integrated from the precision envelope (or the
//! 11-point approximation). Segmentation scoring is pixel-wise F-measure with
//! an ignore mask that removes pixels from all counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::imaging::BinaryMask;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("mask dimensions disagree: {0}")]
    DimensionMismatch(String),
    #[error("detection score {0} is not a finite number")]
    BadScore(f64),
}

/// Axis-aligned box in pixel units, `(x, y)` top-left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

/// Intersection over union of two boxes. Degenerate boxes have zero area and
/// therefore zero IoU against everything.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub category: String,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub category: String,
    pub bbox: BBox,
}

/// Ground truth for a detection evaluation: the category vocabulary plus all
/// annotated boxes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub categories: Vec<String>,
    pub boxes: Vec<GroundTruthBox>,
}

/// How average precision integrates the precision/recall curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Area under the precision envelope, one step per true positive.
    AllPoints,
    /// Mean of the envelope sampled at recalls 0.0, 0.1, .., 1.0.
    ElevenPoint,
}

/// Average precision per category plus their mean.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionReport {
    /// AP per category that has at least one ground-truth box.
    pub per_category: BTreeMap<String, f64>,
    pub mean_ap: f64,
    /// Detection categories absent from the ground-truth vocabulary. Such
    /// detections are excluded from scoring rather than counted as errors.
    pub unknown_categories: Vec<String>,
}

/// Scores detections against ground truth at a single IoU threshold.
///
/// Detections are processed in descending score order, ties broken by input
/// order. Each detection greedily claims the unmatched same-image,
/// same-category box with the highest IoU, provided it reaches `iou_thresh`;
/// everything else is a false positive. Returns an error if any score is not
/// finite.
pub fn average_precision(
    detections: &[Detection],
    gt: &GroundTruth,
    iou_thresh: f64,
    mode: ApMode,
) -> Result<DetectionReport, EvalError> {
    for d in detections {
        if !d.score.is_finite() {
            return Err(EvalError::BadScore(d.score));
        }
    }

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));

    let mut gt_matched = vec![false; gt.boxes.len()];
    // Per category: (tp flags in score order, number of gt boxes).
    let mut flags: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    let mut gt_count: BTreeMap<&str, usize> = BTreeMap::new();
    for b in &gt.boxes {
        *gt_count.entry(b.category.as_str()).or_default() += 1;
    }
    let mut unknown: Vec<String> = Vec::new();

    for &di in &order {
        let det = &detections[di];
        if !gt.categories.iter().any(|c| c == &det.category) {
            if !unknown.contains(&det.category) {
                unknown.push(det.category.clone());
            }
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (gi, gtb) in gt.boxes.iter().enumerate() {
            if gt_matched[gi]
                || gtb.image_id != det.image_id
                || gtb.category != det.category
            {
                continue;
            }
            let iou = bbox_iou(&det.bbox, &gtb.bbox);
            // Strict comparison keeps the earliest box on IoU ties.
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        let tp = match best {
            Some((gi, iou)) if iou >= iou_thresh => {
                gt_matched[gi] = true;
                true
            }
            _ => false,
        };
        flags.entry(det.category.as_str()).or_default().push(tp);
    }

    let mut per_category = BTreeMap::new();
    for (&cat, &count) in &gt_count {
        let tps = flags.get(cat).map(Vec::as_slice).unwrap_or(&[]);
        per_category.insert(cat.to_string(), ap_from_flags(tps, count, mode));
    }
    let mean_ap = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().sum::<f64>() / per_category.len() as f64
    };
    Ok(DetectionReport {
        per_category,
        mean_ap,
        unknown_categories: unknown,
    })
}

/// AP from true-positive flags in descending score order.
fn ap_from_flags(tps: &[bool], num_gt: usize, mode: ApMode) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    // Precision and recall after each detection.
    let mut curve = Vec::with_capacity(tps.len());
    let mut tp_so_far = 0usize;
    for (k, &tp) in tps.iter().enumerate() {
        if tp {
            tp_so_far += 1;
        }
        let p = tp_so_far as f64 / (k + 1) as f64;
        let r = tp_so_far as f64 / num_gt as f64;
        curve.push((r, p));
    }
    // Precision envelope: best precision at this recall or beyond.
    let mut envelope = curve.clone();
    let mut best = 0.0f64;
    for point in envelope.iter_mut().rev() {
        best = best.max(point.1);
        point.1 = best;
    }
    match mode {
        ApMode::AllPoints => {
            // Each true positive raises recall by exactly 1/num_gt, so the
            // area is the sum of envelope precisions at those steps.
            let mut ap = 0.0;
            for (k, &tp) in tps.iter().enumerate() {
                if tp {
                    ap += envelope[k].1 / num_gt as f64;
                }
            }
            ap
        }
        ApMode::ElevenPoint => {
            let mut total = 0.0;
            for i in 0..=10 {
                let r = i as f64 / 10.0;
                let p = envelope
                    .iter()
                    .find(|&&(rec, _)| rec >= r - 1e-12)
                    .map_or(0.0, |&(_, p)| p);
                total += p;
            }
            total / 11.0
        }
    }
}

/// Pixel-wise counts and scores for one predicted mask.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PixelScore {
    #[serde(rename = "tp")]
    pub true_positives: u64,
    #[serde(rename = "fp")]
    pub false_positives: u64,
    #[serde(rename = "fn")]
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl PixelScore {
    /// Derives precision, recall, and F from raw counts. Empty denominators
    /// score a perfect 1.0 (nothing predicted means no false alarms; nothing
    /// to find means nothing missed), and F is 0 when both are empty of
    /// agreement.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f_measure = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PixelScore {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f_measure,
        }
    }
}

/// Pixel-wise F-measure of a predicted foreground mask against ground truth.
/// Pixels set in `ignore` are removed from every count.
pub fn f_measure(
    pred: &BinaryMask,
    gt: &BinaryMask,
    ignore: &BinaryMask,
) -> Result<PixelScore, EvalError> {
    if !pred.same_dims(gt) || !pred.same_dims(ignore) {
        return Err(EvalError::DimensionMismatch(format!(
            "pred {}x{}, gt {}x{}, ignore {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
            ignore.width(),
            ignore.height()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if ignore.get(x, y) {
                continue;
            }
            match (pred.get(x, y), gt.get(x, y)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(PixelScore::from_counts(tp, fp, fn_))
}
