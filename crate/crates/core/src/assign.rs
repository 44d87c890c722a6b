//! Optimal per-frame matching of detections to ground-truth objects.

use std::borrow::Borrow;

use rayon::prelude::*;
use serde::Serialize;

use crate::model::{Detection, FrameId, GroundTruthObject, ImageDims};
use crate::quality::{pair_quality_prepared, PairQuality, PreparedDetection, QualityError};
use crate::scalar::Scalar;
use crate::spatial::SpatialConfig;

/// pPDQ values below this are treated as exact zeros before matching.
pub const PPDQ_FLOOR: f64 = 1e-300;

/// Maximum-weight one-to-one assignment (Kuhn-Munkres with potentials).
///
/// `values` is row-major `n_rows x n_cols`. The matrix is zero-padded to
/// square, so every real row is matched to a real column when one is
/// available. Returns `(row, col)` pairs sorted by row; ties are broken by the
/// deterministic scan order (lowest index first).
pub fn hungarian_max<T: Scalar>(values: &[T], n_rows: usize, n_cols: usize) -> Vec<(usize, usize)> {
    assert_eq!(values.len(), n_rows * n_cols, "matrix shape mismatch");
    let n = n_rows.max(n_cols);
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -> T {
        if i < n_rows && j < n_cols {
            -values[i * n_cols + j]
        } else {
            T::zero()
        }
    };
    let inf = T::infinity();
    // 1-based potentials; column 0 is a sentinel.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut min_v = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] = u[owner[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    min_v[j] = min_v[j] - delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| owner[j] != 0 && owner[j] - 1 < n_rows && j - 1 < n_cols)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// A matched (true positive) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct AssignedPair<T: Scalar = f64> {
    pub gt: usize,
    pub det: usize,
    #[serde(flatten)]
    pub quality: PairQuality<T>,
}

/// Outcome of matching one frame. Indices refer to the ground-truth and
/// detection lists passed to [`assign_frame`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct FrameAssignment<T: Scalar = f64> {
    pub frame: FrameId,
    pub pairs: Vec<AssignedPair<T>>,
    pub fn_gt: Vec<usize>,
    pub fp_det: Vec<usize>,
}

impl<T: Scalar> FrameAssignment<T> {
    pub fn tp_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn fn_count(&self) -> usize {
        self.fn_gt.len()
    }

    pub fn fp_count(&self) -> usize {
        self.fp_det.len()
    }
}

/// Full pPDQ matrix (`gts x dets`, row-major) with the underflow floor applied.
pub fn quality_matrix<T: Scalar, D: Borrow<Detection<T>> + Sync>(
    gts: &[GroundTruthObject],
    dets: &[D],
    dims: ImageDims,
    cfg: &SpatialConfig<T>,
    weight: T,
) -> Result<Vec<PairQuality<T>>, QualityError> {
    let prepared: Vec<PreparedDetection<T>> = dets
        .par_iter()
        .map(|d| PreparedDetection::build(d.borrow(), dims, cfg))
        .collect::<Result<_, _>>()?;
    let floor = T::lit(PPDQ_FLOOR);
    let rows: Vec<Vec<PairQuality<T>>> = gts
        .par_iter()
        .map(|gt| {
            dets.iter()
                .zip(&prepared)
                .map(|(d, p)| {
                    let mut q = pair_quality_prepared(gt, d.borrow(), p, weight)?;
                    if q.ppdq < floor {
                        q.ppdq = T::zero();
                    }
                    Ok(q)
                })
                .collect::<Result<Vec<_>, QualityError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Matches detections to ground truth maximising total pPDQ. Matches with zero
/// pPDQ are dissolved into a false negative and a false positive.
pub fn assign_frame<T: Scalar, D: Borrow<Detection<T>> + Sync>(
    frame: FrameId,
    gts: &[GroundTruthObject],
    dets: &[D],
    dims: ImageDims,
    cfg: &SpatialConfig<T>,
    weight: T,
) -> Result<FrameAssignment<T>, QualityError> {
    let matrix = quality_matrix(gts, dets, dims, cfg, weight)?;
    let values: Vec<T> = matrix.iter().map(|q| q.ppdq).collect();
    let (n, m) = (gts.len(), dets.len());
    let mut gt_matched = vec![false; n];
    let mut det_matched = vec![false; m];
    let mut pairs = Vec::new();
    for (i, j) in hungarian_max(&values, n, m) {
        let q = matrix[i * m + j];
        if q.ppdq > T::zero() {
            gt_matched[i] = true;
            det_matched[j] = true;
            pairs.push(AssignedPair {
                gt: i,
                det: j,
                quality: q,
            });
        }
    }
    Ok(FrameAssignment {
        frame,
        pairs,
        fn_gt: (0..n).filter(|&i| !gt_matched[i]).collect(),
        fp_det: (0..m).filter(|&j| !det_matched[j]).collect(),
    })
}
