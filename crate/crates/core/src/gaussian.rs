//! Scalar standard normal functions and the bivariate normal CDF.
//!
//! `std_cdf` goes through the complementary error function of `libm`
//! (the fdlibm `erfc`, accurate to under one ulp), so both tails keep full
//! relative precision. The quantile starts from Wichura's AS 241 rational
//! approximation and takes one Newton step. The bivariate CDF follows Genz's
//! refinement of the Drezner–Wesolowsky integral over the correlation path,
//! which stays within about 1e-15 absolute over the whole plane.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const TWO_PI: f64 = 2.0 * PI;

/// Standard normal density.
#[inline]
pub fn std_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
///
/// Values beyond about ±38.5 fall below the smallest subnormal and clamp
/// to exactly 0 or 1.
#[inline]
pub fn std_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
#[inline]
pub fn std_sf(x: f64) -> f64 {
    std_cdf(-x)
}

/// Inverse of [`std_cdf`]; maps 0 and 1 to the infinities.
pub fn std_quantile(p: f64) -> Result<f64> {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain {
            what: "std_quantile",
            value: p,
            expected: "0 <= p <= 1",
        });
    }
    if p == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    // 1 - p is exact for p in [0.5, 1], so the upper half reduces to the lower
    // tail where the Newton correction keeps relative precision.
    if p > 0.5 {
        Ok(-lower_quantile(1.0 - p))
    } else {
        Ok(lower_quantile(p))
    }
}

/// Same as [`std_quantile`] with the endpoints mapped to infinities and
/// no error path; callers have already validated `p`.
pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    std_quantile(p).expect("probability validated by caller")
}

fn lower_quantile(p: f64) -> f64 {
    let x = as241(p);
    let err = std_cdf(x) - p;
    x - err / std_pdf(x)
}

/// Wichura (1988), algorithm AS 241 (PPND16).
fn as241(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        133.141_667_891_784_377_45,
        1_971.590_950_306_551_442_7,
        13_731.693_765_509_461_125,
        45_921.953_931_549_871_457,
        67_265.770_927_008_700_853,
        33_430.575_583_588_128_105,
        2_509.080_928_730_122_672_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911_252,
        687.187_007_492_057_908_3,
        5_394.196_021_424_751_107_7,
        21_213.794_301_586_595_867,
        39_307.895_800_092_710_61,
        28_729.085_735_721_942_674,
        5_226.495_278_852_545_925,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        0.241_780_725_177_450_611_77,
        0.022_723_844_989_269_184_583_3,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        0.689_767_334_985_100_004_55,
        0.148_103_976_427_480_074_59,
        0.015_198_666_563_616_457_196_6,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        0.296_560_571_828_504_891_23,
        0.026_532_189_526_576_123_093,
        0.001_242_660_947_388_078_438_6,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_937_69,
        0.136_929_880_922_735_805_31,
        0.014_875_361_290_850_614_852_5,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn ratio(num: &[f64; 8], den: &[f64; 8], r: f64) -> f64 {
        let n = num.iter().rev().fold(0.0, |acc, &c| acc * r + c);
        let d = den.iter().rev().fold(0.0, |acc, &c| acc * r + c);
        n / d
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * ratio(&A, &B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        ratio(&C, &D, r)
    } else {
        r -= 5.0;
        ratio(&E, &F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Density of the standard bivariate normal with correlation `r`.
pub fn bivariate_pdf(x: f64, y: f64, r: f64) -> f64 {
    let one_minus = (1.0 - r) * (1.0 + r);
    let quad = (x * x - 2.0 * r * x * y + y * y) / one_minus;
    (-0.5 * quad).exp() / (TWO_PI * one_minus.sqrt())
}

/// `P[X <= x, Y <= y]` for a standard bivariate normal pair with correlation `r`.
///
/// Infinite arguments are accepted and reduce to the marginal or to zero.
pub fn bivariate_cdf(x: f64, y: f64, r: f64) -> Result<f64> {
    if r.is_nan() || r.abs() >= 1.0 {
        return Err(Error::Domain {
            what: "bivariate_cdf",
            value: r,
            expected: "-1 < r < 1",
        });
    }
    Ok(bivariate_cdf_unchecked(x, y, r))
}

pub(crate) fn bivariate_cdf_unchecked(x: f64, y: f64, r: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return std_cdf(y);
    }
    if y == f64::INFINITY {
        return std_cdf(x);
    }
    bvnd(-x, -y, r).clamp(0.0, 1.0)
}

// Gauss–Legendre half-rules (negative abscissae) with 6, 12 and 20 points.
const GL_W: [&[f64]; 3] = [
    &[
        0.171_324_492_379_170_5,
        0.360_761_573_048_138_4,
        0.467_913_934_572_690_4,
    ],
    &[
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
    ],
    &[
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ],
];
const GL_X: [&[f64]; 3] = [
    &[
        -0.932_469_514_203_152_2,
        -0.661_209_386_466_264_7,
        -0.238_619_186_083_197,
    ],
    &[
        -0.981_560_634_246_719_1,
        -0.904_117_256_370_475,
        -0.769_902_674_194_305,
        -0.587_317_954_286_617_1,
        -0.367_831_498_998_180_2,
        -0.125_233_408_511_469_2,
    ],
    &[
        -0.993_128_599_185_094_9,
        -0.963_971_927_277_913_8,
        -0.912_234_428_251_325_9,
        -0.839_116_971_822_218_8,
        -0.746_331_906_460_150_8,
        -0.636_053_680_726_515,
        -0.510_867_001_950_827_1,
        -0.373_706_088_715_419_6,
        -0.227_785_851_141_645_1,
        -0.076_526_521_133_497_33,
    ],
];

/// Genz's BVND: `P[X > dh, Y > dk]` for correlation `r`.
fn bvnd(dh: f64, dk: f64, r: f64) -> f64 {
    let ng = if r.abs() < 0.3 {
        0
    } else if r.abs() < 0.75 {
        1
    } else {
        2
    };
    let (w, xg) = (GL_W[ng], GL_X[ng]);
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let mut bvn = 0.0;

    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for (&wi, &xi) in w.iter().zip(xg) {
            let sn = (asr * (xi + 1.0) / 2.0).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            let sn = (asr * (-xi + 1.0) / 2.0).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return bvn * asr / (2.0 * TWO_PI) + std_cdf(-h) * std_cdf(-k);
    }

    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    let as_ = (1.0 - r) * (1.0 + r);
    let mut a = as_.sqrt();
    let bs = (h - k) * (h - k);
    let c = (4.0 - hk) / 8.0;
    let d = (12.0 - hk) / 16.0;
    bvn = a
        * (-(bs / as_ + hk) / 2.0).exp()
        * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
    if hk > -160.0 {
        let b = bs.sqrt();
        bvn -= (-hk / 2.0).exp()
            * TWO_PI.sqrt()
            * std_cdf(-b / a)
            * b
            * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    for (&wi, &xi) in w.iter().zip(xg) {
        let xs = (a * (xi + 1.0)).powi(2);
        let rs = (1.0 - xs).sqrt();
        bvn += a
            * wi
            * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
        let xs = as_ * (-xi + 1.0).powi(2) / 4.0;
        let rs = (1.0 - xs).sqrt();
        bvn += a
            * wi
            * (-(bs / xs + hk) / 2.0).exp()
            * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs - (1.0 + c * xs * (1.0 + d * xs)));
    }
    bvn = -bvn / TWO_PI;

    if r > 0.0 {
        bvn + std_cdf(-h.max(k))
    } else {
        let mut out = -bvn;
        if k > h {
            if h < 0.0 {
                out += std_cdf(k) - std_cdf(h);
            } else {
                out += std_cdf(-h) - std_cdf(-k);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_points() {
        assert_eq!(std_cdf(0.0), 0.5);
        assert!((std_cdf(-0.848_464_684_8) - 0.198_089_615).abs() < 1e-9);
        // adaptive quadrature of the density, see tests/oracles.rs
        assert!((std_cdf(1.0) - 0.841_344_746_068_543).abs() < 1e-15);
        assert_eq!(std_cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(std_cdf(-40.0), 0.0);
    }

    #[test]
    fn quantile_reference_points() {
        assert_eq!(std_quantile(0.5).unwrap(), 0.0);
        assert!((std_quantile(0.198_089_615).unwrap() + 0.848_464_6).abs() < 1e-7);
        assert!((std_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-13);
        assert_eq!(std_quantile(0.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(std_quantile(1.0).unwrap(), f64::INFINITY);
        assert!(std_quantile(-0.1).is_err());
        assert!(std_quantile(f64::NAN).is_err());
    }

    #[test]
    fn symmetry_on_grid() {
        for i in 0..=1600 {
            let x = -8.0 + i as f64 * 0.01;
            assert!((std_cdf(x) + std_cdf(-x) - 1.0).abs() <= 1e-15, "x = {x}");
        }
    }

    #[test]
    fn quantile_inverts_cdf_on_fine_grid() {
        let n = 10_000;
        let (lo, hi) = (1e-10_f64, 1.0 - 1e-10);
        for i in 0..n {
            // log-spaced in each half so both tails are covered
            let t = i as f64 / (n - 1) as f64;
            let p = if t < 0.5 {
                (lo.ln() + (0.5_f64.ln() - lo.ln()) * 2.0 * t).exp()
            } else {
                1.0 - (lo.ln() + (0.5_f64.ln() - lo.ln()) * 2.0 * (1.0 - t)).exp()
            };
            let p = p.clamp(lo, hi);
            let x = std_quantile(p).unwrap();
            assert!((std_cdf(x) - p).abs() <= 1e-12, "p = {p}");
        }
    }

    #[test]
    fn cdf_then_quantile_round_trip() {
        // For x > 0 the probability Φ(x) is only representable to half an ulp of 1,
        // which moves the recovered x by ε/φ(x); that floor is part of the bound.
        for i in 0..=1200 {
            let x = -6.0 + i as f64 * 0.01;
            let back = std_quantile(std_cdf(x)).unwrap();
            let floor = if x > 0.0 { f64::EPSILON / std_pdf(x) } else { 0.0 };
            assert!((back - x).abs() <= 1e-12 + floor, "x = {x}: {back}");
        }
    }

    #[test]
    fn bivariate_reference_values() {
        assert!((bivariate_cdf(0.0, 0.0, 0.0).unwrap() - 0.25).abs() < 1e-15);
        for r in [-0.95, -0.5, 0.3, 0.5, 0.8, 0.93, 0.99] {
            let expected = 0.25 + f64::asin(r) / TWO_PI;
            assert!((bivariate_cdf(0.0, 0.0, r).unwrap() - expected).abs() < 1e-14, "r = {r}");
        }
        for r in [-0.9, 0.0, 0.6, 0.97] {
            assert_eq!(bivariate_cdf(0.7, f64::INFINITY, r).unwrap(), std_cdf(0.7));
            assert_eq!(bivariate_cdf(f64::INFINITY, -1.2, r).unwrap(), std_cdf(-1.2));
            assert_eq!(bivariate_cdf(f64::NEG_INFINITY, 2.0, r).unwrap(), 0.0);
        }
        assert!(bivariate_cdf(0.0, 0.0, 1.0).is_err());
        assert!(bivariate_cdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn bivariate_independence_factorises() {
        for &x in &[-3.0, -0.4, 0.0, 1.1, 2.5] {
            for &y in &[-2.0, 0.3, 1.7] {
                let got = bivariate_cdf(x, y, 0.0).unwrap();
                assert!((got - std_cdf(x) * std_cdf(y)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bivariate_frechet_bounds_and_monotonicity() {
        let grid: Vec<f64> = (0..=16).map(|i| -4.0 + 0.5 * i as f64).collect();
        let rs: Vec<f64> = (-19..=19).map(|i| i as f64 * 0.05).chain([0.999, -0.999]).collect();
        for &r in &rs {
            for &x in &grid {
                let mut prev = 0.0;
                for &y in &grid {
                    let v = bivariate_cdf(x, y, r).unwrap();
                    let (fx, fy) = (std_cdf(x), std_cdf(y));
                    assert!(v >= (fx + fy - 1.0).max(0.0) - 1e-15);
                    assert!(v <= fx.min(fy) + 1e-15);
                    assert!(v >= prev - 1e-15, "not monotone in y at ({x},{y},{r})");
                    prev = v;
                }
            }
        }
        let mut sorted = rs.clone();
        sorted.sort_by(f64::total_cmp);
        for &x in &grid {
            for &y in &grid {
                let mut prev = 0.0;
                for &r in &sorted {
                    let v = bivariate_cdf(x, y, r).unwrap();
                    assert!(v >= prev - 1e-15, "not monotone in r at ({x},{y},{r})");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn correlation_derivative_is_the_density() {
        let h = 1e-5;
        for &(x, y) in &[(0.0, 0.0), (-1.0, 0.5), (1.5, 1.2), (-2.0, -2.5), (0.3, -1.7)] {
            for &r in &[-0.9, -0.5, -0.1, 0.0, 0.2, 0.6, 0.92, 0.95] {
                let up = bivariate_cdf(x, y, r + h).unwrap();
                let dn = bivariate_cdf(x, y, r - h).unwrap();
                let fd = (up - dn) / (2.0 * h);
                let pdf = bivariate_pdf(x, y, r);
                assert!((fd - pdf).abs() < 1e-6, "({x},{y},{r}): {fd} vs {pdf}");
            }
        }
    }
}
