//! Numerical integration: fixed Gauss–Legendre rules for bin integrals and a
//! globally adaptive Gauss–Kronrod (7/15) integrator for oracles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature did not converge: estimate {value:e}, achieved error {achieved:e}, requested {requested:e}")]
pub struct QuadratureError {
    pub value: f64,
    pub achieved: f64,
    pub requested: f64,
}

/// Five-point Gauss–Legendre nodes and weights on [−1, 1].
pub const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Three-point Gauss–Legendre nodes and weights on [−1, 1].
pub const GL3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    (0.0, 0.888_888_888_888_889),
    (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
];

/// Integral of `f` over `[a, b]` with a fixed Gauss–Legendre rule.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(rule: &[(f64, f64)], a: f64, b: f64, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_segments: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 0.0,
            rel: 1e-10,
            max_segments: 20_000,
        }
    }
}

/// Globally adaptive Gauss–Kronrod integration over the finite interval
/// `[a, b]`, seeded with the given interior breakpoints.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    tol: Tolerance,
) -> Result<(f64, f64), QuadratureError> {
    let mut cuts: Vec<f64> = std::iter::once(a)
        .chain(breakpoints.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut heap = BinaryHeap::new();
    let (mut total, mut err) = (0.0, 0.0);
    for w in cuts.windows(2) {
        let (value, error) = kronrod15(&mut f, w[0], w[1]);
        total += value;
        err += error;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }

    loop {
        let requested = tol.abs.max(tol.rel * total.abs());
        if !(total.is_finite() && err.is_finite()) {
            return Err(QuadratureError {
                value: total,
                achieved: err,
                requested,
            });
        }
        if err <= requested {
            break;
        }
        if heap.len() >= tol.max_segments {
            return Err(QuadratureError {
                value: total,
                achieved: err,
                requested,
            });
        }
        let worst = heap.pop().expect("non-empty segment heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval no longer splittable in floating point.
            heap.push(worst);
            return Err(QuadratureError {
                value: total,
                achieved: err,
                requested,
            });
        }
        let left = kronrod15(&mut f, worst.a, mid);
        let right = kronrod15(&mut f, mid, worst.b);
        total += left.0 + right.0 - worst.value;
        err += left.1 + right.1 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: left.0,
            error: left.1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: right.0,
            error: right.1,
        });
    }
    // Re-sum to shed the drift of the running update.
    let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Ok((value, error))
}

/// `∫_a^∞ f`, through the map `x = a + scale·t/(1−t)`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    scale: f64,
    tol: Tolerance,
) -> Result<(f64, f64), QuadratureError> {
    integrate(
        |t| {
            let s = 1.0 - t;
            let jac = scale / (s * s);
            let y = f(a + scale * t / s) * jac;
            if y.is_finite() {
                y
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        &[0.5, 0.9, 0.99],
        tol,
    )
}

/// `∫_{−∞}^b f`.
pub fn integrate_from_neg_infinity<F: FnMut(f64) -> f64>(
    mut f: F,
    b: f64,
    scale: f64,
    tol: Tolerance,
) -> Result<(f64, f64), QuadratureError> {
    integrate_to_infinity(|x| f(2.0 * b - x), b, scale, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        // GL5 is exact up to degree 9
        let v = gauss_legendre(&GL5, -1.0, 2.0, |x| x.powi(9) + 3.0 * x * x);
        let want = (2f64.powi(10) - 1.0) / 10.0 + (8.0 + 1.0);
        assert!((v - want).abs() < 1e-12);
        let v3 = gauss_legendre(&GL3, 0.0, 1.0, |x| x.powi(5));
        assert!((v3 - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_handles_sharp_peak() {
        let g = 1e-4;
        let (v, _) = integrate(|x| g / (g * g + x * x), -1.0, 1.0, &[0.0], Tolerance::default()).unwrap();
        let want = 2.0 * (1.0 / g).atan();
        assert!((v - want).abs() / want < 1e-10);
    }

    #[test]
    fn infinite_tails() {
        let (right, _) = integrate_to_infinity(|x| 1.0 / (1.0 + x * x), 0.0, 1.0, Tolerance::default()).unwrap();
        let (left, _) = integrate_from_neg_infinity(|x| 1.0 / (1.0 + x * x), 0.0, 1.0, Tolerance::default()).unwrap();
        assert!((right - PI / 2.0).abs() < 1e-10);
        assert!((left - PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn reports_nonconvergence() {
        let tol = Tolerance {
            abs: 0.0,
            rel: 1e-15,
            max_segments: 4,
        };
        let err = integrate(|x| x.sqrt().recip(), 0.0, 1.0, &[], tol).unwrap_err();
        assert!(err.achieved > err.requested);
    }

    #[test]
    fn rejects_non_finite_integrands() {
        let err = integrate(|x| x.abs().recip(), -1.0, 1.0, &[], Tolerance::default()).unwrap_err();
        assert!(!err.value.is_finite());
    }
}
