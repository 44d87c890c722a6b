//! Pairwise quality between one ground-truth object and one detection.

use serde::Serialize;
use thiserror::Error;

use crate::model::{AxisAlignedBox, Detection, GroundTruthObject, ImageDims};
use crate::scalar::{CompensatedSum, Scalar};
use crate::spatial::{build_probability_map, ProbabilityMap, SpatialConfig, SpatialError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QualityError {
    #[error("class index {class_id} out of range for a label distribution of length {len}")]
    ClassIndexOutOfRange { class_id: usize, len: usize },
    #[error("ground-truth segment is empty")]
    EmptySegment,
    #[error("spatial weight must lie in [0, 1], got {0}")]
    InvalidWeight(f64),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

/// Qualities and losses of one ground-truth / detection pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct PairQuality<T: Scalar = f64> {
    #[serde(rename = "fg_loss")]
    pub fg_loss: T,
    #[serde(rename = "bg_loss")]
    pub bg_loss: T,
    #[serde(rename = "sp")]
    pub spatial: T,
    #[serde(rename = "lbl")]
    pub label: T,
    pub ppdq: T,
}

/// A detection's probability map together with its total background penalty
/// `sum -ln(1 - p)` over the whole support, reused across all ground-truth
/// objects in a frame.
#[derive(Debug, Clone)]
pub struct PreparedDetection<T: Scalar = f64> {
    map: ProbabilityMap<T>,
    total_bg: T,
}

impl<T: Scalar> PreparedDetection<T> {
    pub fn new(map: ProbabilityMap<T>) -> Self {
        let total_bg = map
            .support()
            .map(|(_, _, p)| -(T::one() - p).ln())
            .collect::<CompensatedSum<T>>()
            .value();
        Self { map, total_bg }
    }

    /// Builds the map; a detection without support gets an empty map.
    pub fn build(
        det: &Detection<T>,
        dims: ImageDims,
        cfg: &SpatialConfig<T>,
    ) -> Result<Self, SpatialError> {
        match build_probability_map(det, dims, cfg) {
            Ok(map) => Ok(Self::new(map)),
            Err(SpatialError::EmptySupport) => Ok(Self::new(ProbabilityMap::empty(dims, cfg.epsilon))),
            Err(e) => Err(e),
        }
    }

    pub fn map(&self) -> &ProbabilityMap<T> {
        &self.map
    }
}

/// `-ln` of the clamp floor: the loss of a pixel the detection misses entirely.
fn max_pixel_loss<T: Scalar>(pmap: &ProbabilityMap<T>) -> T {
    -pmap.epsilon().ln()
}

/// Mean negative log-probability over the ground-truth segment. Pixels off the
/// support count as `eps`. Infinite when the map has no support at all.
pub fn foreground_loss<T: Scalar>(gt: &GroundTruthObject, pmap: &ProbabilityMap<T>) -> T {
    let n = gt.segment.len();
    if n == 0 {
        return T::zero();
    }
    if pmap.is_empty() {
        return T::infinity();
    }
    let mut sum = CompensatedSum::new();
    let mut covered = 0usize;
    let overlap = pmap
        .region()
        .zip(gt.segment.bounds())
        .and_then(|(r, s)| r.intersection(&s));
    if let Some(ib) = overlap {
        for y in ib.y0..=ib.y1 {
            let Some((rx0, row)) = pmap.region_row(y) else {
                continue;
            };
            for x in ib.x0..=ib.x1 {
                if !gt.segment.contains(x, y) {
                    continue;
                }
                let p = row[(x - rx0) as usize];
                if p > T::zero() {
                    sum.add(-p.ln());
                    covered += 1;
                }
            }
        }
    }
    let missed = T::lit((n - covered) as f64);
    sum.add(missed * max_pixel_loss(pmap));
    sum.value() / T::lit(n as f64)
}

/// Sum of `-ln(1 - p)` over support pixels outside `bbox`.
fn background_sum<T: Scalar>(pmap: &ProbabilityMap<T>, bbox: &AxisAlignedBox) -> T {
    let mut sum = CompensatedSum::new();
    let Some(r) = pmap.region() else {
        return T::zero();
    };
    for y in r.y0..=r.y1 {
        let Some((rx0, row)) = pmap.region_row(y) else {
            continue;
        };
        let row_in_box = y >= bbox.y0 && y <= bbox.y1;
        for (i, &p) in row.iter().enumerate() {
            let x = rx0 + i as i64;
            if p > T::zero() && !(row_in_box && x >= bbox.x0 && x <= bbox.x1) {
                sum.add(-(T::one() - p).ln());
            }
        }
    }
    sum.value()
}

/// Penalty for support pixels outside the ground-truth box, normalised by the
/// segment size.
pub fn background_loss<T: Scalar>(gt: &GroundTruthObject, pmap: &ProbabilityMap<T>) -> T {
    let n = gt.segment.len();
    if n == 0 {
        return T::zero();
    }
    background_sum(pmap, &gt.bbox) / T::lit(n as f64)
}

pub fn spatial_quality<T: Scalar>(gt: &GroundTruthObject, pmap: &ProbabilityMap<T>) -> T {
    (-(foreground_loss(gt, pmap) + background_loss(gt, pmap))).exp()
}

/// Probability the detection gives the object's true class, whether or not it
/// is the winning class.
pub fn label_quality<T: Scalar>(
    gt: &GroundTruthObject,
    det: &Detection<T>,
) -> Result<T, QualityError> {
    det.label_dist()
        .get(gt.class_id)
        .copied()
        .ok_or(QualityError::ClassIndexOutOfRange {
            class_id: gt.class_id,
            len: det.label_dist().len(),
        })
}

/// Weighted geometric mean `spatial^w * label^(1-w)`, zero if either is zero.
pub fn combine_ppdq<T: Scalar>(spatial: T, label: T, weight: T) -> T {
    if !(spatial > T::zero()) || !(label > T::zero()) {
        return T::zero();
    }
    (weight * spatial.ln() + (T::one() - weight) * label.ln()).exp()
}

fn check_weight<T: Scalar>(weight: T) -> Result<(), QualityError> {
    if weight >= T::zero() && weight <= T::one() {
        Ok(())
    } else {
        Err(QualityError::InvalidWeight(weight.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Pair quality using a prepared detection map.
pub fn pair_quality_prepared<T: Scalar>(
    gt: &GroundTruthObject,
    det: &Detection<T>,
    prepared: &PreparedDetection<T>,
    weight: T,
) -> Result<PairQuality<T>, QualityError> {
    check_weight(weight)?;
    if gt.segment.is_empty() {
        return Err(QualityError::EmptySegment);
    }
    let label = label_quality(gt, det)?;
    let pmap = &prepared.map;
    let n = T::lit(gt.segment.len() as f64);
    let fg_loss = foreground_loss(gt, pmap);
    let disjoint = pmap
        .region()
        .is_none_or(|r| r.intersection(&gt.bbox).is_none());
    let bg_sum = if disjoint {
        prepared.total_bg
    } else {
        background_sum(pmap, &gt.bbox)
    };
    let bg_loss = bg_sum / n;
    let spatial = (-(fg_loss + bg_loss)).exp();
    Ok(PairQuality {
        fg_loss,
        bg_loss,
        spatial,
        label,
        ppdq: combine_ppdq(spatial, label, weight),
    })
}

/// Pair quality from scratch: builds the detection's map first.
pub fn pair_quality<T: Scalar>(
    gt: &GroundTruthObject,
    det: &Detection<T>,
    dims: ImageDims,
    cfg: &SpatialConfig<T>,
    weight: T,
) -> Result<PairQuality<T>, QualityError> {
    let prepared = PreparedDetection::build(det, dims, cfg)?;
    pair_quality_prepared(gt, det, &prepared, weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FrameId, GaussianCorner, Geometry, PixelSet};

    const LN_EPS: f64 = 32.236_191_301_916_64; // 14 ln 10

    fn dims() -> ImageDims {
        ImageDims::new(10, 10).unwrap()
    }

    fn bx(x0: i64, y0: i64, x1: i64, y1: i64) -> AxisAlignedBox {
        AxisAlignedBox::new(x0, y0, x1, y1).unwrap()
    }

    fn gt_box(b: AxisAlignedBox, class_id: usize) -> GroundTruthObject {
        GroundTruthObject::from_box(FrameId(0), b, class_id)
    }

    fn conventional(b: AxisAlignedBox, dist: Vec<f64>) -> Detection<f64> {
        Detection::new(FrameId(0), Geometry::ConventionalBox(b), dist)
    }

    fn uniform(b: AxisAlignedBox, p: f64) -> Detection<f64> {
        Detection::new(FrameId(0), Geometry::UniformBox { bbox: b, prob: p }, vec![1.0])
    }

    fn map(det: &Detection<f64>) -> ProbabilityMap<f64> {
        build_probability_map(det, dims(), &SpatialConfig::default()).unwrap()
    }

    #[test]
    fn fg_loss_examples() {
        let gt = gt_box(bx(2, 2, 5, 5), 0);
        let covering = map(&conventional(bx(1, 1, 6, 6), vec![1.0]));
        let fg = foreground_loss(&gt, &covering);
        assert!((fg - 1e-14).abs() < 1e-16);

        let small = gt_box(bx(2, 2, 3, 3), 0);
        let half = map(&uniform(bx(2, 2, 3, 3), 0.5));
        assert!((foreground_loss(&small, &half) - std::f64::consts::LN_2).abs() < 1e-15);

        let disjoint = map(&conventional(bx(7, 7, 9, 9), vec![1.0]));
        assert!((foreground_loss(&gt, &disjoint) - LN_EPS).abs() < 1e-12);
    }

    #[test]
    fn bg_loss_examples() {
        let gt = gt_box(bx(2, 2, 5, 5), 0);
        let inside = map(&conventional(bx(3, 3, 4, 4), vec![1.0]));
        assert_eq!(background_loss(&gt, &inside), 0.0);

        // Box [2,2,5,7] has 8 pixels below the ground-truth box; |segment| = 16.
        let tall = map(&conventional(bx(2, 2, 5, 7), vec![1.0]));
        let want = 8.0 / 16.0 * -(1.0f64 - (1.0 - 1e-14)).ln();
        assert!((background_loss(&gt, &tall) - want).abs() < 1e-12);
        assert!((want - 16.118).abs() < 1e-3);

        // 0.5 on two outside pixels, |segment| = 4.
        let seg = gt_box(bx(2, 2, 3, 3), 0);
        let spill = map(&uniform(bx(2, 2, 3, 4), 0.5));
        let want = 2.0 / 4.0 * std::f64::consts::LN_2;
        assert!((background_loss(&seg, &spill) - want).abs() < 1e-15);
        assert!((want - 0.346_574).abs() < 1e-6);
    }

    #[test]
    fn spatial_quality_examples() {
        let gt = gt_box(bx(2, 2, 5, 5), 0);
        let perfect = map(&conventional(bx(2, 2, 5, 5), vec![1.0]));
        let q = spatial_quality(&gt, &perfect);
        assert!(q < 1.0 && 1.0 - q < 1e-13);

        let small = gt_box(bx(2, 2, 3, 3), 0);
        let half = map(&uniform(bx(2, 2, 3, 3), 0.5));
        assert!((spatial_quality(&small, &half) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn confident_partial_box_scores_near_zero() {
        // Irregular object; a confident box covers 16% of its pixels.
        let dm = ImageDims::new(60, 60).unwrap();
        let pixels: Vec<(i64, i64)> = (0..50)
            .flat_map(|y| (0..50).map(move |x| (x, y)))
            .filter(|&(x, y)| (x - 25) * (x - 25) + (y - 25) * (y - 25) <= 625 || x < 5)
            .collect();
        let seg = PixelSet::from_pixels(pixels);
        let bbox = seg.bounds().unwrap();
        let gt = GroundTruthObject::new(FrameId(0), seg, bbox, 0);
        let n = gt.segment.len();
        // Grow a square box from the centre until it holds 16% of the pixels.
        let mut half = 0;
        let covered = |h: i64| {
            let b = bx(25 - h, 25 - h, 25 + h, 25 + h);
            gt.segment.iter().filter(|&(x, y)| b.contains(x, y)).count()
        };
        while (covered(half) as f64) < 0.16 * n as f64 {
            half += 1;
        }
        let det = conventional(bx(25 - half, 25 - half, 25 + half, 25 + half), vec![1.0]);
        let pq = pair_quality(&gt, &det, dm, &SpatialConfig::default(), 0.5).unwrap();
        // Oracle: direct per-pixel evaluation.
        let inside = covered(half) as f64;
        let fg = ((n as f64 - inside) * LN_EPS + inside * 1e-14) / n as f64;
        let oracle = (-fg).exp().sqrt();
        assert!((pq.ppdq - oracle).abs() < 1e-12 * oracle.max(1e-300));
        assert!(pq.ppdq < 1e-4, "{}", pq.ppdq);
    }

    #[test]
    fn label_quality_examples() {
        let gt = gt_box(bx(0, 0, 1, 1), 0);
        let b = bx(0, 0, 1, 1);
        assert_eq!(label_quality(&gt, &conventional(b, vec![1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(label_quality(&gt, &conventional(b, vec![0.25; 4])).unwrap(), 0.25);
        assert_eq!(label_quality(&gt, &conventional(b, vec![0.3, 0.7])).unwrap(), 0.3);
        let gt_bad = gt_box(b, 3);
        assert!(matches!(
            label_quality(&gt_bad, &conventional(b, vec![0.3, 0.7])),
            Err(QualityError::ClassIndexOutOfRange { class_id: 3, len: 2 })
        ));
    }

    #[test]
    fn ppdq_examples() {
        assert!((combine_ppdq(1.0f64, 0.25, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(combine_ppdq(0.0, 0.9, 0.5), 0.0);
        assert_eq!(combine_ppdq(0.9, 0.0, 0.5), 0.0);
        assert!((combine_ppdq(0.5, 0.9, 0.5) - 0.45f64.sqrt()).abs() < 1e-15);
        assert!((0.45f64.sqrt() - 0.670_820).abs() < 1e-6);
        assert!((combine_ppdq(0.5f64, 0.9, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pair_quality_assembles_components() {
        let gt = gt_box(bx(2, 2, 5, 5), 1);
        let det = conventional(bx(2, 2, 5, 5), vec![0.75, 0.25]);
        let pq = pair_quality(&gt, &det, dims(), &SpatialConfig::default(), 0.5).unwrap();
        assert_eq!(pq.label, 0.25);
        assert!((pq.ppdq - 0.5).abs() < 1e-13);
        assert!((pq.spatial - (-(pq.fg_loss + pq.bg_loss)).exp()).abs() < 1e-15);
        assert!(matches!(
            pair_quality(&gt, &det, dims(), &SpatialConfig::default(), 1.5),
            Err(QualityError::InvalidWeight(_))
        ));
    }

    #[test]
    fn empty_support_scores_zero() {
        let gt = gt_box(bx(2, 2, 5, 5), 0);
        let det = uniform(bx(2, 2, 5, 5), 1e-6);
        let pq = pair_quality(&gt, &det, dims(), &SpatialConfig::default(), 0.5).unwrap();
        assert_eq!(pq.spatial, 0.0);
        assert_eq!(pq.ppdq, 0.0);
    }

    #[test]
    fn prepared_disjoint_path_matches_direct_sum() {
        let gt = gt_box(bx(0, 0, 2, 2), 0);
        let det = Detection::new(
            FrameId(0),
            Geometry::ProbabilisticBox {
                top_left: GaussianCorner::isotropic([6.0, 6.0], 0.5),
                bottom_right: GaussianCorner::isotropic([8.0, 8.0], 0.5),
            },
            vec![1.0],
        );
        let prepared = PreparedDetection::build(&det, dims(), &SpatialConfig::default()).unwrap();
        let pq: PairQuality<f64> = pair_quality_prepared(&gt, &det, &prepared, 0.5).unwrap();
        assert!((pq.bg_loss - background_loss(&gt, prepared.map())).abs() < 1e-15);
    }
}
