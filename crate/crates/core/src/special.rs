//! Error-function family used by the jitter-convolved correlation models.
//!
//! The rational approximations are W. J. Cody's (Math. Comp. 1969), which
//! give close to full double precision on each interval. The scaled
//! complementary error function `erfcx(x) = exp(x²)·erfc(x)` is the workhorse:
//! every `exp(a)·erfc(b)` product in the correlation code is rewritten in
//! terms of it so that nothing overflows for large `γσ`.

use std::f64::consts::PI;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SMALL: f64 = 0.46875;
const ERFC_ZERO: f64 = 26.543;

const A: [f64; 5] = [
    3.161_123_743_870_565_6,
    113.864_154_151_050_16,
    377.485_237_685_302,
    3_209.377_589_138_469_5,
    0.185_777_706_184_603_15,
];
const B: [f64; 4] = [
    23.601_290_952_344_12,
    244.024_637_934_444_17,
    1_282.616_526_077_372_3,
    2_844.236_833_439_171,
];
const C: [f64; 9] = [
    0.564_188_496_988_670_1,
    8.883_149_794_388_377,
    66.119_190_637_141_63,
    298.635_138_197_400_1,
    881.952_221_241_769,
    1_712.047_612_634_070_6,
    2_051.078_377_826_071_6,
    1_230.339_354_797_997_2,
    2.153_115_354_744_038_5e-8,
];
const D: [f64; 8] = [
    15.744_926_110_709_835,
    117.693_950_891_312_5,
    537.181_101_862_009_9,
    1_621.389_574_566_690_2,
    3_290.799_235_733_459_7,
    4_362.619_090_143_247,
    3_439.367_674_143_721_6,
    1_230.339_354_803_749_4,
];
const P: [f64; 6] = [
    0.305_326_634_961_232_36,
    0.360_344_899_949_804_45,
    0.125_781_726_111_229_26,
    0.016_083_785_148_742_275,
    6.587_491_615_298_378e-4,
    0.016_315_387_137_302_097,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822,
    1.872_952_849_923_460_4,
    0.527_905_102_951_428_4,
    0.060_518_341_312_441_32,
    0.002_335_204_976_268_691_8,
];

fn small_ratio(z: f64) -> f64 {
    ((((A[4] * z + A[0]) * z + A[1]) * z + A[2]) * z + A[3]) / ((((z + B[0]) * z + B[1]) * z + B[2]) * z + B[3])
}

fn mid_ratio(y: f64) -> f64 {
    let num = C[..8].iter().fold(C[8], |acc, &c| acc * y + c);
    let den = D.iter().fold(1.0, |acc, &d| acc * y + d);
    num / den
}

fn large_ratio(z: f64) -> f64 {
    z * (((((P[5] * z + P[0]) * z + P[1]) * z + P[2]) * z + P[3]) * z + P[4])
        / (((((z + Q[0]) * z + Q[1]) * z + Q[2]) * z + Q[3]) * z + Q[4])
}

/// `exp(-y²)` split as `exp(-ŷ²)·exp(-(y-ŷ)(y+ŷ))` with `ŷ` rounded to 1/16,
/// which avoids the cancellation in `y²` for large `y`.
fn exp_neg_square(y: f64) -> f64 {
    let yt = (y * 16.0).trunc() / 16.0;
    (-yt * yt).exp() * (-(y - yt) * (y + yt)).exp()
}

fn exp_pos_square(y: f64) -> f64 {
    let yt = (y * 16.0).trunc() / 16.0;
    (yt * yt).exp() * ((y - yt) * (y + yt)).exp()
}

/// `erfcx(y)` for `y > 0.46875`.
fn erfcx_tail(y: f64) -> f64 {
    if y <= 4.0 {
        mid_ratio(y)
    } else {
        (FRAC_1_SQRT_PI - large_ratio(1.0 / (y * y))) / y
    }
}

pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= SMALL {
        return x * small_ratio(y * y);
    }
    let tail = if y >= ERFC_ZERO {
        0.0
    } else {
        erfcx_tail(y) * exp_neg_square(y)
    };
    if x < 0.0 {
        tail - 1.0
    } else {
        1.0 - tail
    }
}

pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= SMALL {
        return 1.0 - x * small_ratio(y * y);
    }
    let tail = if y >= ERFC_ZERO {
        0.0
    } else {
        erfcx_tail(y) * exp_neg_square(y)
    };
    if x < 0.0 {
        2.0 - tail
    } else {
        tail
    }
}

/// Scaled complementary error function `exp(x²)·erfc(x)`.
///
/// Finite and accurate for every `x` above roughly −26.6; below that the true
/// value exceeds `f64::MAX` and `+∞` is returned.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= SMALL {
        let z = y * y;
        return z.exp() * (1.0 - x * small_ratio(z));
    }
    let tail = erfcx_tail(y);
    if x < 0.0 {
        2.0 * exp_pos_square(x) - tail
    } else {
        tail
    }
}

/// `exp(c)·erfc(z)`, evaluated without forming either factor on its own
/// when they would over- or underflow separately.
pub fn exp_erfc(c: f64, z: f64) -> f64 {
    if z >= 0.0 {
        erfcx(z) * (c - z * z).exp()
    } else {
        // erfc(z) = 2 − erfc(−z), and erfc(−z) = erfcx(−z)·exp(−z²)
        2.0 * c.exp() - erfcx(-z) * (c - z * z).exp()
    }
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `(1 − e^{−x})/x`, continuous through `x = 0`.
pub fn one_minus_exp_over(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Normalized Gaussian density with standard deviation `std`.
pub fn gaussian(x: f64, std: f64) -> f64 {
    (-(x * x) / (2.0 * std * std)).exp() / ((2.0 * PI).sqrt() * std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn erfc_series_oracle(x: f64) -> f64 {
        // erf(x) = 2/√π Σ (−1)^n x^{2n+1} / (n! (2n+1)), fine for |x| ≤ 3
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        1.0 - 2.0 * FRAC_1_SQRT_PI * sum
    }

    #[test]
    fn erfc_matches_series() {
        // The alternating series loses ~e^{x²} ulps to cancellation, so stay
        // within |x| ≤ 2.
        for i in -40..=40 {
            let x = i as f64 * 0.05;
            let want = erfc_series_oracle(x);
            assert!((erfc(x) - want).abs() < 1e-13, "x={x}");
            assert!((erf(x) - (1.0 - want)).abs() < 1e-14, "x={x}");
        }
    }

    #[test]
    fn erfcx_asymptotic_large_argument() {
        // erfcx(x) ~ 1/(x√π) (1 − 1/(2x²) + 3/(4x⁴) − 15/(8x⁶))
        for &x in &[50.0, 1e3, 1e6, 1e12] {
            let u = 1.0 / (x * x);
            let want = FRAC_1_SQRT_PI / x * (1.0 - 0.5 * u + 0.75 * u * u - 1.875 * u * u * u);
            assert!(((erfcx(x) - want) / want).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn erfcx_consistent_with_erfc() {
        for i in -40..=80 {
            let x = i as f64 * 0.1;
            let want = (x * x).exp() * erfc(x);
            assert!(((erfcx(x) - want) / want).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn exp_erfc_handles_huge_exponents() {
        // exp(900)·erfc(30) = erfcx(30)·exp(0)
        let v = exp_erfc(900.0, 30.0);
        assert!((v - erfcx(30.0)).abs() < 1e-16);
        assert!(exp_erfc(-1000.0, -3.0).abs() < 1e-300);
        assert!(exp_erfc(0.0, 0.0) == 1.0);
    }

    #[test]
    fn normal_cdf_symmetry() {
        for i in 0..50 {
            let x = i as f64 * 0.2;
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-15);
        }
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn one_minus_exp_over_is_continuous() {
        assert!((one_minus_exp_over(1e-9) - one_minus_exp_over(1.1e-8)).abs() < 1e-8);
        assert!((one_minus_exp_over(2.0) - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-16);
        assert!((one_minus_exp_over(-3.0) - ((3.0f64).exp() - 1.0) / 3.0).abs() < 1e-14);
    }
}
