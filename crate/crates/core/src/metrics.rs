//! Segmentation metrics and score-map helpers.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, LabelMap};

/// Per-class and mean intersection-over-union.
#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

fn check_sizes(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::shape(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// IoU over pixels whose ground truth is not the ignore id. Predictions
/// outside `0..num_classes` count as false negatives for the true class.
pub fn mean_iou(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<IouReport> {
    check_sizes(pred, gt)?;
    let mut inter = vec![0u64; num_classes];
    let mut pred_count = vec![0u64; num_classes];
    let mut gt_count = vec![0u64; num_classes];
    for (i, (&p, &g)) in pred.labels().iter().zip(gt.labels()).enumerate() {
        if gt.is_ignored(i) {
            continue;
        }
        let (p, g) = (p as usize, g as usize);
        if p < num_classes {
            pred_count[p] += 1;
        }
        if g < num_classes {
            gt_count[g] += 1;
        }
        if p == g && p < num_classes {
            inter[p] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let union = pred_count[c] + gt_count[c] - inter[c];
            (union > 0).then(|| inter[c] as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(IouReport { per_class, mean })
}

/// Fraction of non-ignored pixels labelled correctly.
pub fn pixel_accuracy(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    check_sizes(pred, gt)?;
    let mut total = 0usize;
    let mut hit = 0usize;
    for (i, (&p, &g)) in pred.labels().iter().zip(gt.labels()).enumerate() {
        if gt.is_ignored(i) {
            continue;
        }
        total += 1;
        hit += usize::from(p == g);
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Per-pixel argmax over channels; ties go to the lowest channel index.
pub fn argmax_labels(scores: &FeatureMap) -> LabelMap {
    let labels = (0..scores.num_pixels())
        .map(|i| {
            let px = scores.pixel(i);
            let mut best = 0;
            for (c, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    LabelMap::new(scores.height(), scores.width(), labels).expect("dimensions come from a valid map")
}

/// One-hot scores; ignored pixels get an all-zero vector.
pub fn one_hot(labels: &LabelMap, num_classes: usize) -> Result<FeatureMap> {
    let mut out = FeatureMap::zeros(labels.height(), labels.width(), num_classes);
    for (i, &l) in labels.labels().iter().enumerate() {
        if labels.is_ignored(i) {
            continue;
        }
        if l as usize >= num_classes {
            return Err(Error::param(format!("label {l} is not below the class count {num_classes}")));
        }
        out.pixel_mut(i)[l as usize] = 1.0;
    }
    Ok(out)
}
