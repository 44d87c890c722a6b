//! Normal and bivariate normal probabilities.
//!
//! The bivariate upper-orthant routine follows Genz's `BVND` (tvpack), which is
//! the Drezner-Wesolowsky Gauss-Legendre integration of the correlation
//! integral with a series correction for |r| close to one. Absolute error is
//! around 1e-15 in double precision.

use crate::model::{GaussianCorner, COVARIANCE_TOLERANCE};
use crate::scalar::Scalar;

const TWO_PI: f64 = std::f64::consts::TAU;

// (weight, node) pairs; the node's mirror image is used as well.
const GL_6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, -0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, -0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, -0.238_619_186_083_197),
];

const GL_12: [(f64, f64); 6] = [
    (0.047_175_336_386_511_77, -0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, -0.904_117_256_370_475),
    (0.160_078_328_543_346_4, -0.769_902_674_194_305),
    (0.203_167_426_723_065_9, -0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, -0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, -0.125_233_408_511_469_2),
];

const GL_20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, -0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, -0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, -0.912_234_428_251_326),
    (0.083_276_741_576_704_75, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.076_526_521_133_497_33),
];

fn quadrature(abs_r: f64) -> &'static [(f64, f64)] {
    if abs_r < 0.3 {
        &GL_6
    } else if abs_r < 0.75 {
        &GL_12
    } else {
        &GL_20
    }
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * (-x / T::lit(std::f64::consts::SQRT_2)).erfc()
}

/// Mass of `N(mean, variance)` on `[lo, hi]`. Zero variance collapses to the
/// indicator of `lo <= mean <= hi`.
#[inline]
pub fn interval_mass<T: Scalar>(mean: T, variance: T, lo: T, hi: T) -> T {
    if hi < lo {
        return T::zero();
    }
    if variance <= T::zero() {
        return if mean >= lo && mean <= hi {
            T::one()
        } else {
            T::zero()
        };
    }
    let s = variance.sqrt() * T::lit(std::f64::consts::SQRT_2);
    let a = (lo - mean) / s;
    let b = (hi - mean) / s;
    // Subtract in whichever tail keeps both terms small.
    let half = T::lit(0.5);
    let m = if a > T::zero() {
        half * (a.erfc() - b.erfc())
    } else if b < T::zero() {
        half * ((-b).erfc() - (-a).erfc())
    } else {
        T::one() - half * ((-a).erfc() + b.erfc())
    };
    m.max(T::zero()).min(T::one())
}

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `r`.
pub fn bvn_upper<T: Scalar>(h: T, k: T, r: T) -> T {
    if r <= -T::lit(0.925) {
        // P(X>h, Y>k) = P(X>h) - P(X>h, -Y>=-k), corr(X, -Y) = -r
        return (normal_cdf(-h) - bvn_upper(h, -k, -r)).max(T::zero());
    }
    let abs_r = r.abs();
    let quad = quadrature(abs_r.to_f64().unwrap_or(1.0));
    let hk = h * k;
    let two_pi = T::lit(TWO_PI);
    let mut bvn = T::zero();

    if abs_r < T::lit(0.925) {
        if abs_r > T::zero() {
            let hs = (h * h + k * k) / T::lit(2.0);
            let asr = r.asin() / T::lit(2.0);
            for &(w, x) in quad {
                for sign in [-1.0, 1.0] {
                    let sn = (asr * T::lit(sign * x + 1.0)).sin();
                    bvn = bvn + T::lit(w) * ((sn * hk - hs) / (T::one() - sn * sn)).exp();
                }
            }
            bvn = bvn * asr / two_pi;
        }
        return bvn + normal_cdf(-h) * normal_cdf(-k);
    }

    // r >= 0.925
    if r < T::one() {
        let a_s = (T::one() - r) * (T::one() + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (T::lit(4.0) - hk) / T::lit(8.0);
        let d = (T::lit(12.0) - hk) / T::lit(16.0);
        let five = T::lit(5.0);
        let three = T::lit(3.0);
        let asr = -(b_s / a_s + hk) / T::lit(2.0);
        if asr > -T::lit(100.0) {
            bvn = a
                * asr.exp()
                * (T::one() - c * (b_s - a_s) * (T::one() - d * b_s / five) / three
                    + c * d * a_s * a_s / five);
        }
        if -hk < T::lit(100.0) {
            let b = b_s.sqrt();
            bvn = bvn
                - (-hk / T::lit(2.0)).exp()
                    * two_pi.sqrt()
                    * normal_cdf(-b / a)
                    * b
                    * (T::one() - c * b_s * (T::one() - d * b_s / five) / three);
        }
        a = a / T::lit(2.0);
        for &(w, x) in quad {
            for sign in [-1.0, 1.0] {
                let xi = a * T::lit(sign * x + 1.0);
                let x_s = xi * xi;
                let r_s = (T::one() - x_s).sqrt();
                let asr = -(b_s / x_s + hk) / T::lit(2.0);
                if asr > -T::lit(100.0) {
                    bvn = bvn
                        + a * T::lit(w)
                            * asr.exp()
                            * ((-hk * (T::one() - r_s) / (T::lit(2.0) * (T::one() + r_s))).exp()
                                / r_s
                                - (T::one() + c * x_s * (T::one() + d * x_s)));
                }
            }
        }
        bvn = -bvn / two_pi;
    }
    (bvn + normal_cdf(-h.max(k))).max(T::zero()).min(T::one())
}

/// `P(X <= x, Y <= y)` for a standard bivariate normal with correlation `r`.
/// Infinite limits are allowed.
pub fn bvn_cdf<T: Scalar>(x: T, y: T, r: T) -> T {
    let inf = T::infinity();
    if x == -inf || y == -inf {
        return T::zero();
    }
    if x == inf {
        return if y == inf { T::one() } else { normal_cdf(y) };
    }
    if y == inf {
        return normal_cdf(x);
    }
    bvn_upper(-x, -y, r)
}

/// Mass of the corner Gaussian on the continuous rectangle `[lo, hi]`.
///
/// Diagonal (or degenerate) covariances factor into 1D interval masses, which
/// is exact; correlated corners use inclusion-exclusion on [`bvn_cdf`].
pub fn corner_rect_mass<T: Scalar>(corner: &GaussianCorner<T>, lo: [T; 2], hi: [T; 2]) -> T {
    if hi[0] < lo[0] || hi[1] < lo[1] {
        return T::zero();
    }
    let vx = corner.cov[0][0].max(T::zero());
    let vy = corner.cov[1][1].max(T::zero());
    let cxy = (corner.cov[0][1] + corner.cov[1][0]) / T::lit(2.0);
    if cxy == T::zero() || vx == T::zero() || vy == T::zero() {
        return interval_mass(corner.mean[0], vx, lo[0], hi[0])
            * interval_mass(corner.mean[1], vy, lo[1], hi[1]);
    }
    let sx = vx.sqrt();
    let sy = vy.sqrt();
    let r = (cxy / (sx * sy)).max(-T::one()).min(T::one());
    let ax = (lo[0] - corner.mean[0]) / sx;
    let bx = (hi[0] - corner.mean[0]) / sx;
    let ay = (lo[1] - corner.mean[1]) / sy;
    let by = (hi[1] - corner.mean[1]) / sy;
    let p = bvn_cdf(bx, by, r) - bvn_cdf(ax, by, r) - bvn_cdf(bx, ay, r) + bvn_cdf(ax, ay, r);
    p.max(T::zero()).min(T::one())
}

/// Checks the covariance and then computes [`corner_rect_mass`].
pub fn bvn_rect_prob<T: Scalar>(
    corner: &GaussianCorner<T>,
    lo: [T; 2],
    hi: [T; 2],
) -> Result<T, super::SpatialError> {
    let (min_eig, _) = corner.eigenvalues();
    if !(min_eig >= -T::lit(COVARIANCE_TOLERANCE)) {
        return Err(super::SpatialError::NonPsdCovariance(
            min_eig.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(corner_rect_mass(corner, lo, hi))
}
