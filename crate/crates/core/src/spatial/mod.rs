//! Per-pixel spatial probability of a detection and its support mask.
//!
//! Pixel `(u, v)` covers the continuous square `[u - 0.5, u + 0.5] x
//! [v - 0.5, v + 0.5]`, so integer coordinates are pixel centres and a corner
//! mean of `(x0, y0)` sits on the centre of pixel `(x0, y0)`. A pixel is inside
//! a probabilistic box when the top-left corner lies above-left of its
//! far edge and the bottom-right corner lies below-right of its near edge:
//!
//! `P(u, v) = N0([-0.5, u + 0.5] x [-0.5, v + 0.5]) * N1([u - 0.5, W - 0.5] x [v - 0.5, H - 0.5])`
//!
//! Corner mass falling outside the image is excluded.

mod bvn;

pub use bvn::{bvn_cdf, bvn_rect_prob, bvn_upper, corner_rect_mass, interval_mass, normal_cdf};

use serde::Serialize;
use thiserror::Error;

use crate::model::{AxisAlignedBox, Detection, GaussianCorner, Geometry, ImageDims};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpatialError {
    #[error("covariance is not positive semi-definite (smallest eigenvalue {0})")]
    NonPsdCovariance(f64),
    #[error("no pixel reaches the support threshold")]
    EmptySupport,
    #[error("pixel ({0}, {1}) lies outside the image")]
    PixelOutsideImage(i64, i64),
    #[error("invalid spatial configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct SpatialConfig<T: Scalar = f64> {
    /// Probability clamp applied before any logarithm.
    pub epsilon: T,
    /// Pixels at or above this probability form the support mask.
    pub p_min: T,
    /// Required absolute accuracy of bivariate normal rectangle masses.
    pub bvn_tolerance: T,
}

/// Accuracy attained by the bivariate normal routine for each scalar type.
fn attained_bvn_accuracy<T: Scalar>() -> T {
    if T::epsilon() < T::lit(1e-10) {
        T::lit(1e-12)
    } else {
        T::lit(1e-5)
    }
}

impl<T: Scalar> Default for SpatialConfig<T> {
    fn default() -> Self {
        Self {
            epsilon: T::lit(T::DEFAULT_EPSILON),
            p_min: T::lit(1e-4),
            bvn_tolerance: T::lit(1e-7).max(attained_bvn_accuracy::<T>()),
        }
    }
}

impl<T: Scalar> SpatialConfig<T> {
    pub fn validate(&self) -> Result<(), SpatialError> {
        let eps = self.epsilon;
        if !(eps > T::zero() && eps < self.p_min && self.p_min < T::one()) {
            return Err(SpatialError::InvalidConfig(format!(
                "need 0 < epsilon < p_min < 1, got epsilon={} p_min={}",
                eps, self.p_min
            )));
        }
        if !(T::one() - eps < T::one()) {
            return Err(SpatialError::InvalidConfig(format!(
                "1 - epsilon rounds to 1 for epsilon={eps}"
            )));
        }
        if !(self.bvn_tolerance >= attained_bvn_accuracy::<T>()) {
            return Err(SpatialError::InvalidConfig(format!(
                "bvn_tolerance {} is below attainable accuracy {}",
                self.bvn_tolerance,
                attained_bvn_accuracy::<T>()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn clamp(&self, p: T) -> T {
        p.max(self.epsilon).min(T::one() - self.epsilon)
    }
}

#[inline]
fn near_edge<T: Scalar>(i: i64) -> T {
    T::lit(i as f64 - 0.5)
}

#[inline]
fn far_edge<T: Scalar>(i: i64) -> T {
    T::lit(i as f64 + 0.5)
}

fn check_corners<T: Scalar>(corners: [&GaussianCorner<T>; 2]) -> Result<(), SpatialError> {
    for c in corners {
        let (lo, _) = c.eigenvalues();
        if !(lo >= -T::lit(crate::model::COVARIANCE_TOLERANCE)) {
            return Err(SpatialError::NonPsdCovariance(lo.to_f64().unwrap_or(f64::NAN)));
        }
    }
    Ok(())
}

/// Unclamped probability that a probabilistic box contains pixel `(u, v)`.
#[inline]
fn pbox_pixel<T: Scalar>(
    top_left: &GaussianCorner<T>,
    bottom_right: &GaussianCorner<T>,
    u: i64,
    v: i64,
    dims: ImageDims,
) -> T {
    let m0 = corner_rect_mass(
        top_left,
        [near_edge(0), near_edge(0)],
        [far_edge(u), far_edge(v)],
    );
    let m1 = corner_rect_mass(
        bottom_right,
        [near_edge(u), near_edge(v)],
        [near_edge(dims.width as i64), near_edge(dims.height as i64)],
    );
    m0 * m1
}

/// Spatial probability of pixel `(u, v)` for a detection.
///
/// Conventional boxes give `1 - eps` inside and `eps` outside; uniform boxes
/// give their probability inside and `eps` outside; probabilistic boxes give
/// the unclamped product of the two corner masses.
pub fn pixel_probability<T: Scalar>(
    det: &Detection<T>,
    pixel: (i64, i64),
    dims: ImageDims,
    cfg: &SpatialConfig<T>,
) -> Result<T, SpatialError> {
    let (u, v) = pixel;
    if !dims.contains(u, v) {
        return Err(SpatialError::PixelOutsideImage(u, v));
    }
    Ok(match det.geometry() {
        Geometry::ConventionalBox(b) => {
            if b.contains(u, v) {
                T::one() - cfg.epsilon
            } else {
                cfg.epsilon
            }
        }
        Geometry::UniformBox { bbox, prob } => {
            if bbox.contains(u, v) {
                *prob
            } else {
                cfg.epsilon
            }
        }
        Geometry::ProbabilisticBox {
            top_left,
            bottom_right,
        } => {
            check_corners([top_left, bottom_right])?;
            pbox_pixel(top_left, bottom_right, u, v, dims)
        }
    })
}

/// Dense spatial probabilities over a bounded region of an image.
///
/// Values on the support are clamped to `[eps, 1 - eps]`; everything else
/// (inside or outside the region) is off-support and stored as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap<T: Scalar = f64> {
    dims: ImageDims,
    region: Option<AxisAlignedBox>,
    values: Vec<T>,
    support_len: usize,
    epsilon: T,
}

impl<T: Scalar> ProbabilityMap<T> {
    /// A map with empty support.
    pub fn empty(dims: ImageDims, epsilon: T) -> Self {
        Self {
            dims,
            region: None,
            values: Vec::new(),
            support_len: 0,
            epsilon,
        }
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Bounding rectangle of all stored values (contains the support).
    pub fn region(&self) -> Option<AxisAlignedBox> {
        self.region
    }

    pub fn support_len(&self) -> usize {
        self.support_len
    }

    pub fn is_empty(&self) -> bool {
        self.support_len == 0
    }

    /// Stored (clamped) value, zero off the support.
    #[inline]
    pub fn get(&self, x: i64, y: i64) -> T {
        match self.region {
            Some(r) if r.contains(x, y) => {
                self.values[(y - r.y0) as usize * r.width() as usize + (x - r.x0) as usize]
            }
            _ => T::zero(),
        }
    }

    #[inline]
    pub fn in_support(&self, x: i64, y: i64) -> bool {
        self.get(x, y) > T::zero()
    }

    /// Probability used inside log-losses: the stored value on the support and
    /// `eps` elsewhere.
    #[inline]
    pub fn loss_probability(&self, x: i64, y: i64) -> T {
        let p = self.get(x, y);
        if p > T::zero() {
            p
        } else {
            self.epsilon
        }
    }

    /// Support pixels with their clamped probability, row-major.
    pub fn support(&self) -> impl Iterator<Item = (i64, i64, T)> + '_ {
        let (r, w) = match self.region {
            Some(r) => (r, r.width() as usize),
            None => (AxisAlignedBox::new(0, 0, 0, 0).unwrap(), 1),
        };
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > T::zero())
            .map(move |(i, &p)| (r.x0 + (i % w) as i64, r.y0 + (i / w) as i64, p))
    }

    /// Row `y` of the stored region as `(first x, values)`.
    pub fn region_row(&self, y: i64) -> Option<(i64, &[T])> {
        let r = self.region?;
        if y < r.y0 || y > r.y1 {
            return None;
        }
        let w = r.width() as usize;
        let start = (y - r.y0) as usize * w;
        Some((r.x0, &self.values[start..start + w]))
    }

    fn from_region(
        dims: ImageDims,
        region: AxisAlignedBox,
        cfg: &SpatialConfig<T>,
        mut raw: impl FnMut(i64, i64) -> T,
    ) -> Result<Self, SpatialError> {
        let mut values = Vec::with_capacity(region.area() as usize);
        let mut support_len = 0;
        for y in region.y0..=region.y1 {
            for x in region.x0..=region.x1 {
                let p = raw(x, y);
                if p >= cfg.p_min {
                    values.push(cfg.clamp(p));
                    support_len += 1;
                } else {
                    values.push(T::zero());
                }
            }
        }
        if support_len == 0 {
            return Err(SpatialError::EmptySupport);
        }
        Ok(Self {
            dims,
            region: Some(region),
            values,
            support_len,
            epsilon: cfg.epsilon,
        })
    }
}

/// Relative slack on the marginal bound used to prune rows and columns.
const PRUNE_SLACK: f64 = 1e-9;

/// Builds the probability map and support mask of a detection.
///
/// Probabilistic boxes are evaluated only over the rows and columns whose
/// marginal containment probability reaches `p_min`; the joint probability is
/// bounded by either marginal, so pixels outside that rectangle cannot be on
/// the support.
pub fn build_probability_map<T: Scalar>(
    det: &Detection<T>,
    dims: ImageDims,
    cfg: &SpatialConfig<T>,
) -> Result<ProbabilityMap<T>, SpatialError> {
    match det.geometry() {
        Geometry::ConventionalBox(b) => {
            let region = b.clip_to(dims).ok_or(SpatialError::EmptySupport)?;
            ProbabilityMap::from_region(dims, region, cfg, |_, _| T::one() - cfg.epsilon)
        }
        Geometry::UniformBox { bbox, prob } => {
            let region = bbox.clip_to(dims).ok_or(SpatialError::EmptySupport)?;
            ProbabilityMap::from_region(dims, region, cfg, |_, _| *prob)
        }
        Geometry::ProbabilisticBox {
            top_left,
            bottom_right,
        } => {
            check_corners([top_left, bottom_right])?;
            build_pbox_map(top_left, bottom_right, dims, cfg)
        }
    }
}

/// Per-axis masses: `lower[i]` is the top-left corner's mass on
/// `[-0.5, i + 0.5]`, `upper[i]` the bottom-right corner's mass on
/// `[i - 0.5, extent - 0.5]`.
fn axis_masses<T: Scalar>(
    tl_mean: T,
    tl_var: T,
    br_mean: T,
    br_var: T,
    extent: u32,
) -> (Vec<T>, Vec<T>) {
    let n = extent as i64;
    let lower = (0..n)
        .map(|i| interval_mass(tl_mean, tl_var.max(T::zero()), near_edge(0), far_edge(i)))
        .collect();
    let upper = (0..n)
        .map(|i| interval_mass(br_mean, br_var.max(T::zero()), near_edge(i), near_edge(n)))
        .collect();
    (lower, upper)
}

fn active_range<T: Scalar>(lower: &[T], upper: &[T], p_min: T) -> Option<(i64, i64)> {
    let threshold = p_min * (T::one() - T::lit(PRUNE_SLACK));
    let mut first = None;
    let mut last = None;
    for (i, (&a, &b)) in lower.iter().zip(upper).enumerate() {
        if a * b >= threshold {
            first.get_or_insert(i as i64);
            last = Some(i as i64);
        }
    }
    Some((first?, last?))
}

fn build_pbox_map<T: Scalar>(
    top_left: &GaussianCorner<T>,
    bottom_right: &GaussianCorner<T>,
    dims: ImageDims,
    cfg: &SpatialConfig<T>,
) -> Result<ProbabilityMap<T>, SpatialError> {
    let (x_lo, x_hi) = axis_masses(
        top_left.mean[0],
        top_left.cov[0][0],
        bottom_right.mean[0],
        bottom_right.cov[0][0],
        dims.width,
    );
    let (y_lo, y_hi) = axis_masses(
        top_left.mean[1],
        top_left.cov[1][1],
        bottom_right.mean[1],
        bottom_right.cov[1][1],
        dims.height,
    );
    let (x0, x1) = active_range(&x_lo, &x_hi, cfg.p_min).ok_or(SpatialError::EmptySupport)?;
    let (y0, y1) = active_range(&y_lo, &y_hi, cfg.p_min).ok_or(SpatialError::EmptySupport)?;
    let region = AxisAlignedBox { x0, y0, x1, y1 };

    if top_left.is_diagonal() && bottom_right.is_diagonal() {
        // Same operation order as `corner_rect_mass` on diagonal corners, so
        // values agree bit for bit with `pixel_probability`.
        ProbabilityMap::from_region(dims, region, cfg, |x, y| {
            let (xu, yu) = (x as usize, y as usize);
            (x_lo[xu] * y_lo[yu]) * (x_hi[xu] * y_hi[yu])
        })
    } else {
        ProbabilityMap::from_region(dims, region, cfg, |x, y| {
            pbox_pixel(top_left, bottom_right, x, y, dims)
        })
    }
}
