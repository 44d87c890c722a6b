//! COCO-style mean average precision, used as the comparison baseline.

use rayon::prelude::*;
use serde::Serialize;

use crate::model::{AxisAlignedBox, Dataset, Detection, FrameId};
use crate::scalar::Scalar;

/// Number of recall sample points.
pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// IoU of two boxes given as `[x0, y0, x1, y1]` with inclusive pixel extents
/// (a box from 0 to 1 is two pixels wide).
pub fn iou_coords(a: [f64; 4], b: [f64; 4]) -> f64 {
    let side = |lo: f64, hi: f64| (hi - lo + 1.0).max(0.0);
    let area = |r: [f64; 4]| side(r[0], r[2]) * side(r[1], r[3]);
    let iw = side(a[0].max(b[0]), a[2].min(b[2]));
    let ih = side(a[1].max(b[1]), a[3].min(b[3]));
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn iou(a: &AxisAlignedBox, b: &AxisAlignedBox) -> f64 {
    iou_coords(a.coords(), b.coords())
}

/// Greedy matching outcome of one detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchRecord {
    pub class_id: usize,
    pub score: f64,
    pub is_tp: bool,
    pub frame: FrameId,
    /// Position in the submitted detection list.
    pub index: usize,
}

fn det_box<T: Scalar>(d: &Detection<T>) -> [f64; 4] {
    d.geometry().mean_box().map(|v| v.to_f64().unwrap_or(f64::NAN))
}

fn by_score_then_submission(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Matches class `class_id` detections frame by frame. Within a frame,
/// detections are visited by descending score (submission order on ties).
/// Each takes the ground truth of highest IoU among all objects of the class;
/// it is a true positive only if that IoU exceeds `iou_threshold` and the
/// object is still unmatched.
pub fn greedy_assign<T: Scalar>(
    dataset: &Dataset,
    dets: &[Detection<T>],
    class_id: usize,
    iou_threshold: f64,
) -> Vec<MatchRecord> {
    let mut records = Vec::new();
    let mut frames: Vec<_> = dataset.frames.iter().collect();
    frames.sort_by_key(|f| f.id);
    for frame in frames {
        let gts: Vec<[f64; 4]> = frame
            .objects
            .iter()
            .filter(|o| o.class_id == class_id)
            .map(|o| o.bbox.coords())
            .collect();
        let mut order: Vec<(f64, usize)> = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.frame() == frame.id && d.predicted_class() == class_id)
            .map(|(i, d)| (d.score().to_f64().unwrap_or(0.0), i))
            .collect();
        order.sort_by(by_score_then_submission);
        let mut matched = vec![false; gts.len()];
        for (score, i) in order {
            let b = det_box(&dets[i]);
            let mut best: Option<(usize, f64)> = None;
            for (g, gb) in gts.iter().enumerate() {
                let v = iou_coords(b, *gb);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            let is_tp = match best {
                Some((g, v)) if v > iou_threshold && !matched[g] => {
                    matched[g] = true;
                    true
                }
                _ => false,
            };
            records.push(MatchRecord {
                class_id,
                score,
                is_tp,
                frame: frame.id,
                index: i,
            });
        }
    }
    records
}

/// 101-point interpolated AP. `None` when the class has no ground truth.
pub fn average_precision(records: &[MatchRecord], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<(f64, usize, bool)> = records.iter().map(|r| (r.score, r.index, r.is_tp)).collect();
    order.sort_by(|a, b| by_score_then_submission(&(a.0, a.1), &(b.0, b.1)));
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (k, &(_, _, is_tp)) in order.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for i in 0..RECALL_POINTS {
        let r = i as f64 / 100.0;
        let k = recall.partition_point(|&x| x < r);
        if k < precision.len() {
            sum += precision[k];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub class_id: usize,
    /// Mean over IoU thresholds; `None` for classes without ground truth.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapReport {
    /// `None` when no class has ground truth.
    pub map: Option<f64>,
    pub per_class: Vec<ClassAp>,
}

/// Mean AP over IoU thresholds 0.50..0.95 and over classes with ground truth.
pub fn map_score<T: Scalar>(dataset: &Dataset, dets: &[Detection<T>]) -> MapReport {
    let num_classes = dataset.num_classes();
    let mut n_gt = vec![0usize; num_classes];
    for o in dataset.frames.iter().flat_map(|f| &f.objects) {
        if o.class_id < num_classes {
            n_gt[o.class_id] += 1;
        }
    }
    let thresholds = iou_thresholds();
    let per_class: Vec<ClassAp> = (0..num_classes)
        .into_par_iter()
        .map(|c| {
            let ap = if n_gt[c] == 0 {
                None
            } else {
                let total: f64 = thresholds
                    .iter()
                    .map(|&t| average_precision(&greedy_assign(dataset, dets, c, t), n_gt[c]).unwrap_or(0.0))
                    .sum();
                Some(total / thresholds.len() as f64)
            };
            ClassAp { class_id: c, ap }
        })
        .collect();
    let aps: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    let map = if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    };
    MapReport { map, per_class }
}
