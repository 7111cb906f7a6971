//! Standard normal distribution functions.

use core::f64::consts::{PI, SQRT_2};

/// Density of N(0, 1).
#[inline]
pub fn pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

/// Cumulative distribution of N(0, 1), accurate in both tails.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail `1 - cdf(x)` without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Quantile function of N(0, 1).
///
/// Acklam's rational approximation followed by one Halley step, which
/// brings the relative error to roughly machine precision. Returns
/// `-inf`/`inf` at 0 and 1 and NaN outside `[0, 1]`.
pub fn quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement
    let e = if x < 0.0 { cdf(x) - p } else { (1.0 - p) - sf(x) };
    let u = e * libm::sqrt(2.0 * PI) * libm::exp(0.5 * x * x);
    x - u / (1.0 + 0.5 * x * u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};

    #[test]
    fn agrees_with_statrs() {
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut x = -8.0;
        while x <= 8.0 {
            assert!((cdf(x) - n.cdf(x)).abs() <= 1e-9 * n.cdf(x).max(1e-300), "cdf at {x}");
            assert!((pdf(x) - n.pdf(x)).abs() < 1e-14);
            x += 0.037;
        }
        for p in [1e-12, 1e-6, 0.001, 0.02, 0.1, 0.4444, 0.5, 0.7222, 0.98, 0.999999] {
            let q = quantile(p);
            assert!((q - n.inverse_cdf(p)).abs() < 1e-8, "quantile at {p}");
            assert!(((cdf(q) - p) / p).abs() < 1e-12);
        }
    }

    #[test]
    fn named_quantiles() {
        assert!((quantile(4.0 / 9.0) + 0.1397).abs() < 1e-4);
        assert!((quantile(0.65 / 0.9) - 0.5895).abs() < 1e-4);
        assert_eq!(quantile(0.5), 0.0);
        assert!(quantile(1.5).is_nan());
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn tail_complement() {
        for x in [-5.0, -1.0, 0.0, 2.0, 9.0] {
            assert!((cdf(x) + sf(x) - 1.0).abs() < 1e-15);
        }
    }
}
