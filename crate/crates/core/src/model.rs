//! Domain types shared by every other module.
//!
//! Pixel coordinates have their origin at the top-left of the image, `x` to
//! the right and `y` downward. Boxes are inclusive: `[x0, y0, x1, y1]` covers
//! the integer pixels `x0..=x1` by `y0..=y1`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Index of a frame (image) within a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameId(pub u32);

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::EmptyImage);
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("box corners are inverted: [{0}, {1}, {2}, {3}]")]
    InvertedBox(i64, i64, i64, i64),
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
    #[error("covariance is not symmetric")]
    AsymmetricCovariance,
    #[error("covariance is not positive semi-definite (smallest eigenvalue {0})")]
    NonPsdCovariance(f64),
}

/// Inclusive integer pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AxisAlignedBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl AxisAlignedBox {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Self, ModelError> {
        let b = Self { x0, y0, x1, y1 };
        if b.is_well_ordered() {
            Ok(b)
        } else {
            Err(ModelError::InvertedBox(x0, y0, x1, y1))
        }
    }

    /// The box covering every pixel of an image.
    pub fn full(dims: ImageDims) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: dims.width as i64 - 1,
            y1: dims.height as i64 - 1,
        }
    }

    pub fn is_well_ordered(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> u64 {
        (self.width().max(0) * self.height().max(0)) as u64
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn contains_box(&self, other: &AxisAlignedBox) -> bool {
        self.contains(other.x0, other.y0) && self.contains(other.x1, other.y1)
    }

    pub fn intersection(&self, other: &AxisAlignedBox) -> Option<AxisAlignedBox> {
        let b = AxisAlignedBox {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        };
        b.is_well_ordered().then_some(b)
    }

    pub fn clip_to(&self, dims: ImageDims) -> Option<AxisAlignedBox> {
        self.intersection(&AxisAlignedBox::full(dims))
    }

    pub fn within(&self, dims: ImageDims) -> bool {
        self.is_well_ordered() && AxisAlignedBox::full(dims).contains_box(self)
    }

    /// Corner coordinates `[x0, y0, x1, y1]` in the scalar type.
    pub fn coords<T: Scalar>(&self) -> [T; 4] {
        [
            T::lit(self.x0 as f64),
            T::lit(self.y0 as f64),
            T::lit(self.x1 as f64),
            T::lit(self.y1 as f64),
        ]
    }
}

/// A set of pixels stored as a bitmap over its tight bounding box.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PixelSet {
    bounds: Option<AxisAlignedBox>,
    bits: Vec<bool>,
    count: usize,
}

impl PixelSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every pixel inside `b`.
    pub fn from_box(b: AxisAlignedBox) -> Self {
        if !b.is_well_ordered() {
            return Self::empty();
        }
        let n = b.area() as usize;
        Self {
            bounds: Some(b),
            bits: vec![true; n],
            count: n,
        }
    }

    pub fn from_pixels<I: IntoIterator<Item = (i64, i64)>>(pixels: I) -> Self {
        let pixels: Vec<(i64, i64)> = pixels.into_iter().collect();
        let Some(&(fx, fy)) = pixels.first() else {
            return Self::empty();
        };
        let mut b = AxisAlignedBox {
            x0: fx,
            y0: fy,
            x1: fx,
            y1: fy,
        };
        for &(x, y) in &pixels {
            b.x0 = b.x0.min(x);
            b.y0 = b.y0.min(y);
            b.x1 = b.x1.max(x);
            b.y1 = b.y1.max(y);
        }
        let w = b.width() as usize;
        let mut bits = vec![false; b.area() as usize];
        let mut count = 0;
        for (x, y) in pixels {
            let idx = (y - b.y0) as usize * w + (x - b.x0) as usize;
            if !bits[idx] {
                bits[idx] = true;
                count += 1;
            }
        }
        Self {
            bounds: Some(b),
            bits,
            count,
        }
    }

    /// Builds a set from a column-major raster (`index = x * height + y`).
    pub fn from_column_major(dims: ImageDims, raster: &[bool]) -> Self {
        let h = dims.height as usize;
        Self::from_pixels(
            raster
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(i, _)| ((i / h) as i64, (i % h) as i64)),
        )
    }

    /// Column-major raster of the set over a full image.
    pub fn to_column_major(&self, dims: ImageDims) -> Vec<bool> {
        let h = dims.height as usize;
        let mut raster = vec![false; dims.pixel_count()];
        for (x, y) in self.iter() {
            if dims.contains(x, y) {
                raster[x as usize * h + y as usize] = true;
            }
        }
        raster
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Tight bounding box, `None` when empty.
    pub fn bounds(&self) -> Option<AxisAlignedBox> {
        self.bounds
    }

    /// True when the set is every pixel of its bounding box.
    pub fn is_full_box(&self) -> bool {
        self.bounds.is_some_and(|b| b.area() as usize == self.count)
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        match self.bounds {
            Some(b) if b.contains(x, y) => {
                self.bits[(y - b.y0) as usize * b.width() as usize + (x - b.x0) as usize]
            }
            _ => false,
        }
    }

    /// Pixels in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let (b, w) = match self.bounds {
            Some(b) => (b, b.width() as usize),
            None => (AxisAlignedBox::new(0, 0, 0, 0).unwrap(), 1),
        };
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(move |(i, _)| (b.x0 + (i % w) as i64, b.y0 + (i / w) as i64))
    }
}

/// 2D Gaussian over a box corner, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GaussianCorner<T: Scalar = f64> {
    pub mean: [T; 2],
    /// Row-major 2x2 covariance, pixel².
    pub cov: [[T; 2]; 2],
}

/// Tolerance for covariance symmetry and eigenvalue sign checks.
pub const COVARIANCE_TOLERANCE: f64 = 1e-9;

impl<T: Scalar> GaussianCorner<T> {
    pub fn new(mean: [T; 2], cov: [[T; 2]; 2]) -> Result<Self, ModelError> {
        let c = Self { mean, cov };
        c.check()?;
        Ok(c)
    }

    pub fn isotropic(mean: [T; 2], variance: T) -> Self {
        Self {
            mean,
            cov: [[variance, T::zero()], [T::zero(), variance]],
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let tol = T::lit(COVARIANCE_TOLERANCE);
        if (self.cov[0][1] - self.cov[1][0]).abs() > tol {
            return Err(ModelError::AsymmetricCovariance);
        }
        let (lo, _) = self.eigenvalues();
        if !(lo >= -tol) {
            return Err(ModelError::NonPsdCovariance(lo.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(())
    }

    /// Eigenvalues `(smallest, largest)` of the symmetrised covariance.
    pub fn eigenvalues(&self) -> (T, T) {
        let a = self.cov[0][0];
        let d = self.cov[1][1];
        let b = (self.cov[0][1] + self.cov[1][0]) / T::lit(2.0);
        let half_tr = (a + d) / T::lit(2.0);
        let disc = (((a - d) / T::lit(2.0)).powi(2) + b * b).sqrt();
        (half_tr - disc, half_tr + disc)
    }

    pub fn is_diagonal(&self) -> bool {
        self.cov[0][1] == T::zero() && self.cov[1][0] == T::zero()
    }
}

/// Spatial part of a detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum Geometry<T: Scalar = f64> {
    /// Deterministic box: `1 - eps` inside, `eps` outside.
    ConventionalBox(AxisAlignedBox),
    /// Deterministic box carrying the same spatial probability on every
    /// pixel inside it.
    UniformBox { bbox: AxisAlignedBox, prob: T },
    /// Box whose corners are independent 2D Gaussians.
    ProbabilisticBox {
        top_left: GaussianCorner<T>,
        bottom_right: GaussianCorner<T>,
    },
}

impl<T: Scalar> Geometry<T> {
    /// Box used for IoU-based matching: the corner means for probabilistic boxes.
    pub fn mean_box(&self) -> [T; 4] {
        match self {
            Geometry::ConventionalBox(b) | Geometry::UniformBox { bbox: b, .. } => b.coords(),
            Geometry::ProbabilisticBox {
                top_left,
                bottom_right,
            } => [
                top_left.mean[0],
                top_left.mean[1],
                bottom_right.mean[0],
                bottom_right.mean[1],
            ],
        }
    }
}

/// One detection: spatial description plus a full label distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct Detection<T: Scalar = f64> {
    frame: FrameId,
    geometry: Geometry<T>,
    label_dist: Vec<T>,
    score: T,
    predicted_class: usize,
}

impl<T: Scalar> Detection<T> {
    /// The score and winning class are derived from `label_dist`; ties go to
    /// the lowest class index.
    pub fn new(frame: FrameId, geometry: Geometry<T>, label_dist: Vec<T>) -> Self {
        let mut score = T::zero();
        let mut predicted_class = 0;
        for (i, &p) in label_dist.iter().enumerate() {
            if i == 0 || p > score {
                score = p;
                predicted_class = i;
            }
        }
        Self {
            frame,
            geometry,
            label_dist,
            score,
            predicted_class,
        }
    }

    pub fn frame(&self) -> FrameId {
        self.frame
    }

    pub fn geometry(&self) -> &Geometry<T> {
        &self.geometry
    }

    pub fn label_dist(&self) -> &[T] {
        &self.label_dist
    }

    /// Winning-class probability.
    pub fn score(&self) -> T {
        self.score
    }

    pub fn predicted_class(&self) -> usize {
        self.predicted_class
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthObject {
    pub frame: FrameId,
    pub segment: PixelSet,
    pub bbox: AxisAlignedBox,
    pub class_id: usize,
}

impl GroundTruthObject {
    pub fn new(frame: FrameId, segment: PixelSet, bbox: AxisAlignedBox, class_id: usize) -> Self {
        Self {
            frame,
            segment,
            bbox,
            class_id,
        }
    }

    /// Box-only annotation: every pixel in the box is part of the segment.
    pub fn from_box(frame: FrameId, bbox: AxisAlignedBox, class_id: usize) -> Self {
        Self::new(frame, PixelSet::from_box(bbox), bbox, class_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub id: FrameId,
    pub dims: ImageDims,
    pub objects: Vec<GroundTruthObject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn frame(&self, id: FrameId) -> Option<&Frame> {
        self.frames.iter().find(|f| f.id == id)
    }

    pub fn num_objects(&self) -> usize {
        self.frames.iter().map(|f| f.objects.len()).sum()
    }
}

/// An invariant violation found by [`validate_dataset`] or [`validate_detections`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    DuplicateFrame { frame: FrameId },
    EmptyImage { frame: FrameId },
    ObjectFrameMismatch { frame: FrameId, object: usize },
    EmptySegment { frame: FrameId, object: usize },
    InvertedBox { frame: FrameId, object: usize },
    BoxOutsideImage { frame: FrameId, object: usize },
    SegmentOutsideBox { frame: FrameId, object: usize },
    ClassOutOfRange { frame: FrameId, object: usize, class_id: usize },
    UnknownFrame { detection: usize, frame: FrameId },
    LabelDistLength { detection: usize, expected: usize, found: usize },
    LabelProbOutOfRange { detection: usize, class_id: usize },
    LabelDistNotNormalized { detection: usize, sum: f64 },
    InvertedDetectionBox { detection: usize },
    CornersInverted { detection: usize },
    NonPsdCovariance { detection: usize },
    AsymmetricCovariance { detection: usize },
    InvalidSpatialProb { detection: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Tolerance on the label distribution sum.
pub const LABEL_SUM_TOLERANCE: f64 = 1e-6;

/// Lists every invariant violation in `dataset`; empty means valid.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for frame in &dataset.frames {
        let fid = frame.id;
        if !seen.insert(fid) {
            out.push(Violation::DuplicateFrame { frame: fid });
        }
        if frame.dims.width == 0 || frame.dims.height == 0 {
            out.push(Violation::EmptyImage { frame: fid });
        }
        for (i, gt) in frame.objects.iter().enumerate() {
            if gt.frame != fid {
                out.push(Violation::ObjectFrameMismatch { frame: fid, object: i });
            }
            if gt.segment.is_empty() {
                out.push(Violation::EmptySegment { frame: fid, object: i });
            }
            if !gt.bbox.is_well_ordered() {
                out.push(Violation::InvertedBox { frame: fid, object: i });
            } else if !gt.bbox.within(frame.dims) {
                out.push(Violation::BoxOutsideImage { frame: fid, object: i });
            }
            if let Some(sb) = gt.segment.bounds() {
                if !gt.bbox.contains_box(&sb) {
                    out.push(Violation::SegmentOutsideBox { frame: fid, object: i });
                }
            }
            if gt.class_id >= dataset.num_classes() {
                out.push(Violation::ClassOutOfRange {
                    frame: fid,
                    object: i,
                    class_id: gt.class_id,
                });
            }
        }
    }
    out
}

/// Lists every invariant violation in a detection list checked against `dataset`.
pub fn validate_detections<T: Scalar>(
    detections: &[Detection<T>],
    dataset: &Dataset,
) -> Vec<Violation> {
    let frames: HashSet<FrameId> = dataset.frames.iter().map(|f| f.id).collect();
    let mut out = Vec::new();
    for (j, det) in detections.iter().enumerate() {
        if !frames.contains(&det.frame()) {
            out.push(Violation::UnknownFrame {
                detection: j,
                frame: det.frame(),
            });
        }
        out.extend(detection_violations(j, det, dataset.num_classes()));
    }
    out
}

/// Violations of a single detection's own invariants.
pub fn detection_violations<T: Scalar>(
    index: usize,
    det: &Detection<T>,
    num_classes: usize,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let dist = det.label_dist();
    if dist.len() != num_classes {
        out.push(Violation::LabelDistLength {
            detection: index,
            expected: num_classes,
            found: dist.len(),
        });
    }
    for (c, &p) in dist.iter().enumerate() {
        if !(p >= T::zero() && p <= T::one()) {
            out.push(Violation::LabelProbOutOfRange {
                detection: index,
                class_id: c,
            });
        }
    }
    let sum: f64 = dist.iter().map(|p| p.to_f64().unwrap_or(f64::NAN)).sum();
    if !((sum - 1.0).abs() <= LABEL_SUM_TOLERANCE) {
        out.push(Violation::LabelDistNotNormalized {
            detection: index,
            sum,
        });
    }
    match det.geometry() {
        Geometry::ConventionalBox(b) => {
            if !b.is_well_ordered() {
                out.push(Violation::InvertedDetectionBox { detection: index });
            }
        }
        Geometry::UniformBox { bbox, prob } => {
            if !bbox.is_well_ordered() {
                out.push(Violation::InvertedDetectionBox { detection: index });
            }
            if !(*prob >= T::zero() && *prob <= T::one()) {
                out.push(Violation::InvalidSpatialProb { detection: index });
            }
        }
        Geometry::ProbabilisticBox {
            top_left,
            bottom_right,
        } => {
            if top_left.mean[0] > bottom_right.mean[0] || top_left.mean[1] > bottom_right.mean[1]
            {
                out.push(Violation::CornersInverted { detection: index });
            }
            for corner in [top_left, bottom_right] {
                match corner.check() {
                    Err(ModelError::AsymmetricCovariance) => {
                        out.push(Violation::AsymmetricCovariance { detection: index })
                    }
                    Err(_) => out.push(Violation::NonPsdCovariance { detection: index }),
                    Ok(()) => {}
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_frame_dataset() -> Dataset {
        let b = AxisAlignedBox::new(2, 2, 5, 5).unwrap();
        Dataset {
            frames: vec![Frame {
                id: FrameId(0),
                dims: ImageDims::new(10, 10).unwrap(),
                objects: vec![GroundTruthObject::from_box(FrameId(0), b, 0)],
            }],
            class_names: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn valid_dataset_has_no_violations() {
        assert!(validate_dataset(&one_frame_dataset()).is_empty());
    }

    #[test]
    fn segment_pixel_outside_box_is_reported() {
        let mut ds = one_frame_dataset();
        let gt = &mut ds.frames[0].objects[0];
        gt.segment = PixelSet::from_pixels([(3, 3), (7, 7)]);
        assert_eq!(
            validate_dataset(&ds),
            vec![Violation::SegmentOutsideBox {
                frame: FrameId(0),
                object: 0
            }]
        );
    }

    #[test]
    fn unnormalized_label_dist_is_reported() {
        let ds = one_frame_dataset();
        let b = AxisAlignedBox::new(2, 2, 5, 5).unwrap();
        let det = Detection::new(FrameId(0), Geometry::ConventionalBox(b), vec![0.5, 0.3]);
        let v = validate_detections(&[det], &ds);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::LabelDistNotNormalized { detection: 0, .. }));
    }

    #[test]
    fn other_violations_are_detected() {
        let mut ds = one_frame_dataset();
        ds.frames[0].objects[0].class_id = 5;
        ds.frames[0].objects.push(GroundTruthObject::new(
            FrameId(0),
            PixelSet::empty(),
            AxisAlignedBox { x0: 4, y0: 0, x1: 12, y1: 3 },
            0,
        ));
        let v = validate_dataset(&ds);
        assert!(v.contains(&Violation::ClassOutOfRange { frame: FrameId(0), object: 0, class_id: 5 }));
        assert!(v.contains(&Violation::EmptySegment { frame: FrameId(0), object: 1 }));
        assert!(v.contains(&Violation::BoxOutsideImage { frame: FrameId(0), object: 1 }));
    }

    #[test]
    fn score_is_max_with_lowest_index_tie_break() {
        let b = AxisAlignedBox::new(0, 0, 1, 1).unwrap();
        let d = Detection::new(FrameId(0), Geometry::ConventionalBox(b), vec![0.2, 0.4, 0.4]);
        assert_eq!(d.score(), 0.4);
        assert_eq!(d.predicted_class(), 1);
    }

    #[test]
    fn inverted_corners_and_bad_covariance() {
        let ds = one_frame_dataset();
        let tl = GaussianCorner::isotropic([5.0, 5.0], 1.0);
        let br = GaussianCorner {
            mean: [2.0, 6.0],
            cov: [[1.0, 2.0], [2.0, 1.0]],
        };
        let det = Detection::new(
            FrameId(0),
            Geometry::ProbabilisticBox { top_left: tl, bottom_right: br },
            vec![1.0, 0.0],
        );
        let v = validate_detections(&[det], &ds);
        assert!(v.contains(&Violation::CornersInverted { detection: 0 }));
        assert!(v.contains(&Violation::NonPsdCovariance { detection: 0 }));
    }

    #[test]
    fn eigenvalues_of_indefinite_covariance() {
        let c: GaussianCorner<f64> = GaussianCorner {
            mean: [0.0, 0.0],
            cov: [[1.0, 2.0], [2.0, 1.0]],
        };
        let (lo, hi) = c.eigenvalues();
        assert!((lo + 1.0).abs() < 1e-12);
        assert!((hi - 3.0).abs() < 1e-12);
        assert!(matches!(c.check(), Err(ModelError::NonPsdCovariance(_))));
    }

    #[test]
    fn pixel_set_round_trips_through_column_major_raster() {
        let dims = ImageDims::new(7, 5).unwrap();
        let set = PixelSet::from_pixels([(1, 1), (2, 1), (6, 4), (0, 3)]);
        let raster = set.to_column_major(dims);
        assert_eq!(PixelSet::from_column_major(dims, &raster), set);
        assert_eq!(set.len(), 4);
        assert!(set.contains(6, 4));
        assert!(!set.contains(1, 2));
    }

    #[test]
    fn box_intersection_and_clip() {
        let a = AxisAlignedBox::new(0, 0, 4, 4).unwrap();
        let b = AxisAlignedBox::new(3, 2, 9, 9).unwrap();
        assert_eq!(a.intersection(&b), AxisAlignedBox::new(3, 2, 4, 4).ok());
        let dims = ImageDims::new(6, 6).unwrap();
        assert_eq!(b.clip_to(dims), AxisAlignedBox::new(3, 2, 5, 5).ok());
        assert_eq!(a.area(), 25);
    }
}
