//! Dataset-level PDQ and the component report.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::assign::{assign_frame, FrameAssignment};
use crate::model::{Dataset, Detection, FrameId};
use crate::quality::QualityError;
use crate::scalar::{CompensatedSum, Scalar};
use crate::spatial::{SpatialConfig, SpatialError};

/// Warning attached to reports over a dataset with no objects and no detections.
pub const EMPTY_EVALUATION_WARNING: &str = "no ground-truth objects and no detections; pdq reported as 1";

/// How the FG and BG columns are averaged.
pub const FG_BG_READING: &str = "mean over TPs of exp(-loss)";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("detection {detection} refers to unknown frame {frame}")]
    UnknownFrame { detection: usize, frame: FrameId },
    #[error("detection {detection} has {len} class probabilities, dataset has {num_classes} classes")]
    ClassIndexOutOfRange {
        detection: usize,
        len: usize,
        num_classes: usize,
    },
    #[error("label threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Quality(#[from] QualityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct EvalConfig<T: Scalar = f64> {
    pub spatial: SpatialConfig<T>,
    /// Exponent on spatial quality in pPDQ; label quality gets `1 - weight`.
    pub weight: T,
    /// Detections whose winning-class probability is below this are dropped.
    pub tau: T,
}

impl<T: Scalar> Default for EvalConfig<T> {
    fn default() -> Self {
        Self {
            spatial: SpatialConfig::default(),
            weight: T::lit(0.5),
            tau: T::zero(),
        }
    }
}

/// Keeps detections with `score >= tau`.
pub fn filter_by_threshold<T: Scalar>(dets: &[Detection<T>], tau: T) -> Vec<Detection<T>> {
    dets.iter().filter(|d| d.score() >= tau).cloned().collect()
}

/// Running totals for the final score. Frames may be added in any grouping;
/// merging accumulators in ascending frame order reproduces a single pass.
#[derive(Debug, Clone, Default)]
pub struct PdqAccumulator<T: Scalar = f64> {
    quality: CompensatedSum<T>,
    spatial: CompensatedSum<T>,
    label: CompensatedSum<T>,
    fg: CompensatedSum<T>,
    bg: CompensatedSum<T>,
    tp: usize,
    fp: usize,
    fn_: usize,
}

/// Aggregate numbers of a finished evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct PdqSummary<T: Scalar = f64> {
    pub pdq: T,
    pub avg_ppdq: T,
    pub avg_spatial: T,
    pub avg_label: T,
    pub avg_fg_quality: T,
    pub avg_bg_quality: T,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub empty: bool,
}

impl<T: Scalar> PdqAccumulator<T> {
    pub fn new() -> Self {
        Self {
            quality: CompensatedSum::new(),
            spatial: CompensatedSum::new(),
            label: CompensatedSum::new(),
            fg: CompensatedSum::new(),
            bg: CompensatedSum::new(),
            tp: 0,
            fp: 0,
            fn_: 0,
        }
    }

    pub fn add_frame(&mut self, frame: &FrameAssignment<T>) {
        for p in &frame.pairs {
            let q = &p.quality;
            self.quality.add(q.ppdq);
            self.spatial.add(q.spatial);
            self.label.add(q.label);
            self.fg.add((-q.fg_loss).exp());
            self.bg.add((-q.bg_loss).exp());
        }
        self.tp += frame.tp_count();
        self.fp += frame.fp_count();
        self.fn_ += frame.fn_count();
    }

    pub fn merge(&mut self, other: &Self) {
        self.quality.merge(&other.quality);
        self.spatial.merge(&other.spatial);
        self.label.merge(&other.label);
        self.fg.merge(&other.fg);
        self.bg.merge(&other.bg);
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn finish(&self) -> PdqSummary<T> {
        let total = self.tp + self.fp + self.fn_;
        let mean = |s: &CompensatedSum<T>| {
            if self.tp == 0 {
                T::zero()
            } else {
                s.value() / T::lit(self.tp as f64)
            }
        };
        let pdq = if total == 0 {
            T::one()
        } else {
            self.quality.value() / T::lit(total as f64)
        };
        PdqSummary {
            pdq,
            avg_ppdq: mean(&self.quality),
            avg_spatial: mean(&self.spatial),
            avg_label: mean(&self.label),
            avg_fg_quality: mean(&self.fg),
            avg_bg_quality: mean(&self.bg),
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            empty: total == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct EvaluationReport<T: Scalar = f64> {
    #[serde(flatten)]
    pub summary: PdqSummary<T>,
    pub tau: T,
    pub weight: T,
    pub warnings: Vec<String>,
    /// Detection indices refer to the submitted list, before thresholding.
    pub per_frame: Vec<FrameAssignment<T>>,
}

impl<T: Scalar> EvaluationReport<T> {
    pub fn pdq(&self) -> T {
        self.summary.pdq
    }
}

fn check_detections<T: Scalar>(dataset: &Dataset, dets: &[Detection<T>]) -> Result<(), ScoreError> {
    let num_classes = dataset.num_classes();
    for (i, d) in dets.iter().enumerate() {
        if dataset.frame(d.frame()).is_none() {
            return Err(ScoreError::UnknownFrame {
                detection: i,
                frame: d.frame(),
            });
        }
        if d.label_dist().len() != num_classes {
            return Err(ScoreError::ClassIndexOutOfRange {
                detection: i,
                len: d.label_dist().len(),
                num_classes,
            });
        }
    }
    Ok(())
}

/// Evaluates `dets` against `dataset`. Frames are processed in parallel and
/// reduced sequentially in ascending frame order, so the result does not
/// depend on the thread count.
pub fn evaluate<T: Scalar>(
    dataset: &Dataset,
    dets: &[Detection<T>],
    cfg: &EvalConfig<T>,
) -> Result<EvaluationReport<T>, ScoreError> {
    cfg.spatial.validate()?;
    if !(cfg.tau >= T::zero() && cfg.tau <= T::one()) {
        return Err(ScoreError::InvalidThreshold(cfg.tau.to_f64().unwrap_or(f64::NAN)));
    }
    if !(cfg.weight >= T::zero() && cfg.weight <= T::one()) {
        return Err(QualityError::InvalidWeight(cfg.weight.to_f64().unwrap_or(f64::NAN)).into());
    }
    check_detections(dataset, dets)?;

    let mut by_frame: HashMap<FrameId, Vec<usize>> = HashMap::new();
    for (i, d) in dets.iter().enumerate() {
        if d.score() >= cfg.tau {
            by_frame.entry(d.frame()).or_default().push(i);
        }
    }
    let mut frames: Vec<_> = dataset.frames.iter().collect();
    frames.sort_by_key(|f| f.id);

    let per_frame: Vec<FrameAssignment<T>> = frames
        .par_iter()
        .map(|frame| {
            let ids = by_frame.get(&frame.id).map(Vec::as_slice).unwrap_or(&[]);
            let local: Vec<&Detection<T>> = ids.iter().map(|&i| &dets[i]).collect();
            let mut a = assign_frame(
                frame.id,
                &frame.objects,
                &local,
                frame.dims,
                &cfg.spatial,
                cfg.weight,
            )?;
            for p in &mut a.pairs {
                p.det = ids[p.det];
            }
            for d in &mut a.fp_det {
                *d = ids[*d];
            }
            Ok(a)
        })
        .collect::<Result<_, ScoreError>>()?;

    let mut acc = PdqAccumulator::new();
    for a in &per_frame {
        acc.add_frame(a);
    }
    let summary = acc.finish();
    let mut warnings = Vec::new();
    if summary.empty {
        warnings.push(EMPTY_EVALUATION_WARNING.to_string());
    }
    Ok(EvaluationReport {
        summary,
        tau: cfg.tau,
        weight: cfg.weight,
        warnings,
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::AssignedPair;
    use crate::model::{AxisAlignedBox, Frame, Geometry, GroundTruthObject, ImageDims};
    use crate::quality::PairQuality;

    fn pair(ppdq: f64) -> AssignedPair<f64> {
        AssignedPair {
            gt: 0,
            det: 0,
            quality: PairQuality {
                fg_loss: 0.0,
                bg_loss: 0.0,
                spatial: 1.0,
                label: ppdq * ppdq,
                ppdq,
            },
        }
    }

    fn frame_assignment(id: u32, q: &[f64], fp: usize, fn_: usize) -> FrameAssignment<f64> {
        FrameAssignment {
            frame: FrameId(id),
            pairs: q.iter().map(|&v| pair(v)).collect(),
            fn_gt: (0..fn_).collect(),
            fp_det: (0..fp).collect(),
        }
    }

    #[test]
    fn eq6_arithmetic() {
        let mut acc = PdqAccumulator::new();
        acc.add_frame(&frame_assignment(0, &[0.8], 1, 1));
        let s = acc.finish();
        assert!((s.pdq - 0.8 / 3.0).abs() < 1e-15);
        assert!((s.pdq - 0.266_667).abs() < 1e-6);
        assert_eq!((s.tp, s.fp, s.fn_), (1, 1, 1));
        assert!(s.avg_ppdq >= s.pdq);
    }

    #[test]
    fn no_tp_gives_zero_and_empty_gives_one() {
        let mut acc = PdqAccumulator::<f64>::new();
        acc.add_frame(&frame_assignment(0, &[], 2, 3));
        assert_eq!(acc.finish().pdq, 0.0);
        let s = PdqAccumulator::<f64>::new().finish();
        assert_eq!(s.pdq, 1.0);
        assert!(s.empty);
    }

    #[test]
    fn merge_matches_single_pass() {
        let frames: Vec<_> = (0..10)
            .map(|i| frame_assignment(i, &[0.1 * i as f64, 0.3], i as usize % 3, 1))
            .collect();
        let mut single = PdqAccumulator::new();
        frames.iter().for_each(|f| single.add_frame(f));
        let mut a = PdqAccumulator::new();
        let mut b = PdqAccumulator::new();
        frames[..4].iter().for_each(|f| a.add_frame(f));
        frames[4..].iter().for_each(|f| b.add_frame(f));
        a.merge(&b);
        assert_eq!(a.finish(), single.finish());
    }

    fn det(frame: u32, dist: Vec<f64>) -> Detection<f64> {
        Detection::new(
            FrameId(frame),
            Geometry::ConventionalBox(AxisAlignedBox::new(2, 2, 5, 5).unwrap()),
            dist,
        )
    }

    #[test]
    fn threshold_is_inclusive() {
        let dets = vec![det(0, vec![0.9, 0.1]), det(0, vec![0.4, 0.35])];
        assert_eq!(filter_by_threshold(&dets, 0.5).len(), 1);
        assert_eq!(filter_by_threshold(&dets, 0.0).len(), 2);
        let low = vec![det(0, vec![0.05, 0.01]), det(0, vec![0.05, 0.02])];
        assert_eq!(filter_by_threshold(&low, 0.05).len(), 2);
    }

    fn one_object_dataset() -> Dataset {
        let dims = ImageDims::new(10, 10).unwrap();
        let b = AxisAlignedBox::new(2, 2, 5, 5).unwrap();
        Dataset {
            frames: vec![Frame {
                id: FrameId(0),
                dims,
                objects: vec![GroundTruthObject::from_box(FrameId(0), b, 0)],
            }],
            class_names: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn duplicates_give_one_over_n() {
        let ds = one_object_dataset();
        for n in 1..=4 {
            let dets: Vec<_> = (0..n).map(|_| det(0, vec![1.0, 0.0])).collect();
            let r = evaluate(&ds, &dets, &EvalConfig::default()).unwrap();
            assert!((r.pdq() - 1.0 / n as f64).abs() < 1e-12);
            assert_eq!((r.summary.tp, r.summary.fp), (1, n - 1));
        }
    }

    #[test]
    fn evaluate_errors() {
        let ds = one_object_dataset();
        let err = evaluate(&ds, &[det(7, vec![1.0, 0.0])], &EvalConfig::default()).unwrap_err();
        assert!(matches!(err, ScoreError::UnknownFrame { detection: 0, .. }));
        let err = evaluate(&ds, &[det(0, vec![1.0])], &EvalConfig::default()).unwrap_err();
        assert!(matches!(err, ScoreError::ClassIndexOutOfRange { len: 1, num_classes: 2, .. }));
    }

    #[test]
    fn empty_dataset_warns() {
        let ds = Dataset {
            frames: vec![],
            class_names: vec!["a".into()],
        };
        let r = evaluate::<f64>(&ds, &[], &EvalConfig::default()).unwrap();
        assert_eq!(r.pdq(), 1.0);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn thresholded_indices_refer_to_submission() {
        let ds = one_object_dataset();
        let dets = vec![det(0, vec![0.3, 0.3]), det(0, vec![1.0, 0.0])];
        let cfg = EvalConfig {
            tau: 0.5,
            ..EvalConfig::default()
        };
        let r = evaluate(&ds, &dets, &cfg).unwrap();
        assert_eq!(r.per_frame[0].pairs[0].det, 1);
        assert_eq!(r.summary.fp, 0);
    }
}
