//! Linear prediction by Burg's method and the conversions built on it.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;

use super::roots::{polynomial_from_roots, polynomial_roots};

/// Inverse filter `A(z) = 1 + a[1] z^-1 + ... + a[p] z^-p` for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcFrame {
    /// `a[0] == 1`.
    pub coefficients: Vec<f64>,
    /// Mean-square input energy.
    pub energy: f64,
    /// Mean-square forward prediction error after the final stage.
    pub residual: f64,
}

impl LpcFrame {
    /// The trivial filter `A(z) = 1`.
    pub fn identity(order: usize) -> Self {
        let mut coefficients = vec![0.0; order + 1];
        coefficients[0] = 1.0;
        Self {
            coefficients,
            energy: 0.0,
            residual: 0.0,
        }
    }

    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Ratio of input energy to residual energy, in dB.
    pub fn prediction_gain_db(&self) -> f64 {
        if self.residual <= 0.0 || self.energy <= 0.0 {
            return 0.0;
        }
        10.0 * libm::log10(self.energy / self.residual)
    }

    /// Zeros of `A(z)` (the poles of the synthesis filter).
    pub fn roots(&self) -> Vec<Complex64> {
        polynomial_roots(&self.coefficients)
    }

    pub fn from_roots(roots: &[Complex64], energy: f64, residual: f64) -> Self {
        Self {
            coefficients: polynomial_from_roots(roots),
            energy,
            residual,
        }
    }

    /// Log magnitude of `1 / A(e^jw)` in dB at `frequency`.
    pub fn envelope_db(&self, frequency: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * frequency / sample_rate;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &a) in self.coefficients.iter().enumerate() {
            acc += Complex64::from_polar(a, -w * k as f64);
        }
        -20.0 * libm::log10(acc.norm().max(1e-300))
    }
}

/// Burg's recursion. Returns `None` for an all-zero frame or when the
/// frame is not longer than the order.
pub fn burg(x: &[f64], order: usize) -> Option<LpcFrame> {
    let n = x.len();
    if n <= order {
        return None;
    }
    let energy = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if energy <= 0.0 || !energy.is_finite() {
        return None;
    }

    let mut forward = x.to_vec();
    let mut backward = x.to_vec();
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut residual = energy;

    for m in 1..=order {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in m..n {
            num += forward[i] * backward[i - 1];
            den += forward[i] * forward[i] + backward[i - 1] * backward[i - 1];
        }
        if den <= 0.0 {
            break;
        }
        let k = -2.0 * num / den;

        for i in (m..n).rev() {
            let f = forward[i];
            forward[i] = f + k * backward[i - 1];
            backward[i] = backward[i - 1] + k * f;
        }

        let previous = a.clone();
        for j in 1..=m {
            a[j] = previous[j] + k * previous[m - j];
        }
        residual *= 1.0 - k * k;
    }

    Some(LpcFrame {
        coefficients: a,
        energy,
        residual,
    })
}

/// Covariance-method linear prediction: least-squares fit of
/// `x[n] = -sum a[k] x[n-k]` over `n` in `order..len`, with no window.
/// Exact for a noiseless all-pole free response, which makes it suited to
/// closed-phase analysis within a single glottal cycle.
///
/// Returns `None` when the segment is too short or the normal equations
/// are singular.
pub fn covariance(x: &[f64], order: usize) -> Option<LpcFrame> {
    let n = x.len();
    if order == 0 || n <= 2 * order {
        return None;
    }
    let p = order;
    let energy = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if energy <= 0.0 || !energy.is_finite() {
        return None;
    }
    let dot = |i: usize, j: usize| -> f64 { (p..n).map(|t| x[t - i] * x[t - j]).sum() };
    let mut phi = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for i in 1..=p {
        for j in i..=p {
            let v = dot(i, j);
            phi[(i - 1) * p + (j - 1)] = v;
            phi[(j - 1) * p + (i - 1)] = v;
        }
        rhs[i - 1] = -dot(0, i);
    }

    // a noiseless signal of lower true order leaves phi rank deficient;
    // slight diagonal loading keeps the factorization well posed
    let scale = (0..p).map(|i| phi[i * p + i]).fold(0.0f64, f64::max);
    if scale <= 0.0 || !scale.is_finite() {
        return None;
    }
    for i in 0..p {
        phi[i * p + i] += scale * 1e-10;
    }

    // Cholesky factorization phi = L L^T, stored in the lower triangle
    for j in 0..p {
        let mut d = phi[j * p + j];
        for k in 0..j {
            d -= phi[j * p + k] * phi[j * p + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = libm::sqrt(d);
        phi[j * p + j] = d;
        for i in j + 1..p {
            let mut v = phi[i * p + j];
            for k in 0..j {
                v -= phi[i * p + k] * phi[j * p + k];
            }
            phi[i * p + j] = v / d;
        }
    }
    let mut y = rhs;
    for i in 0..p {
        for k in 0..i {
            y[i] -= phi[i * p + k] * y[k];
        }
        y[i] /= phi[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            y[i] -= phi[k * p + i] * y[k];
        }
        y[i] /= phi[i * p + i];
    }

    let mut coefficients = Vec::with_capacity(p + 1);
    coefficients.push(1.0);
    coefficients.extend_from_slice(&y);
    let residual = (p..n)
        .map(|t| {
            let e: f64 = coefficients.iter().enumerate().map(|(k, a)| a * x[t - k]).sum();
            e * e
        })
        .sum::<f64>()
        / (n - p) as f64;
    Some(LpcFrame {
        coefficients,
        energy,
        residual,
    })
}

/// Applies the inverse filter `A(z)`; samples before the start are zero.
pub fn inverse_filter(x: &[f64], coefficients: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            coefficients
                .iter()
                .enumerate()
                .take(i + 1)
                .map(|(k, a)| a * x[i - k])
                .sum()
        })
        .collect()
}

/// One resonance read off a pole pair.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Resonance {
    pub frequency: f64,
    pub bandwidth: f64,
}

impl Resonance {
    pub fn from_root(z: Complex64, sample_rate: f64) -> Self {
        Self {
            frequency: libm::atan2(z.im, z.re) * sample_rate / (2.0 * PI),
            bandwidth: -libm::log(z.norm()) * sample_rate / PI,
        }
    }

    pub fn to_root(self, sample_rate: f64) -> Complex64 {
        Complex64::from_polar(
            libm::exp(-PI * self.bandwidth / sample_rate),
            2.0 * PI * self.frequency / sample_rate,
        )
    }
}

/// Resonances from the roots in the upper half plane, sorted by frequency.
pub fn resonances(roots: &[Complex64], sample_rate: f64) -> Vec<Resonance> {
    let mut out: Vec<Resonance> = roots
        .iter()
        .filter(|z| z.im > 0.0)
        .map(|&z| Resonance::from_root(z, sample_rate))
        .collect();
    out.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::filter::Resonator;

    #[test]
    fn burg_recovers_an_ar2_process() {
        // x[n] = 1.6 x[n-1] - 0.9 x[n-2] + impulse train
        let mut x = vec![0.0; 4000];
        for i in 0..x.len() {
            let e = if i % 97 == 0 { 1.0 } else { 0.0 };
            let x1 = if i >= 1 { x[i - 1] } else { 0.0 };
            let x2 = if i >= 2 { x[i - 2] } else { 0.0 };
            x[i] = e + 1.6 * x1 - 0.9 * x2;
        }
        let frame = burg(&x, 2).unwrap();
        assert!((frame.coefficients[1] + 1.6).abs() < 0.01);
        assert!((frame.coefficients[2] - 0.9).abs() < 0.01);
        assert!(frame.prediction_gain_db() > 10.0);
    }

    #[test]
    fn burg_finds_resonator_frequency() {
        let fs = 11025.0;
        let mut r = Resonator::new(700.0, 80.0, fs);
        let x: Vec<f64> = (0..3000)
            .map(|i| r.process(if i % 90 == 0 { 1.0 } else { 0.0 }))
            .collect();
        let frame = burg(&x, 4).unwrap();
        let res = resonances(&frame.roots(), fs);
        assert!(res.iter().any(|r| (r.frequency - 700.0).abs() < 10.0));
        assert!(frame.envelope_db(700.0, fs) > frame.envelope_db(2000.0, fs) + 10.0);
    }

    #[test]
    fn covariance_is_exact_on_free_decay() {
        let fs = 16000.0;
        let mut r1 = Resonator::new(350.0, 60.0, fs);
        let mut r2 = Resonator::new(2100.0, 90.0, fs);
        let x: Vec<f64> = (0..200)
            .map(|i| r2.process(r1.process(if i == 0 { 1.0 } else { 0.0 })))
            .collect();
        // skip the impulse itself, keep only the decay
        let frame = covariance(&x[3..120], 4).unwrap();
        let res = resonances(&frame.roots(), fs);
        assert_eq!(res.len(), 2);
        assert!((res[0].frequency - 350.0).abs() < 1e-3);
        assert!((res[0].bandwidth - 60.0).abs() < 1e-3);
        assert!((res[1].frequency - 2100.0).abs() < 1e-3);
        assert!(covariance(&x[..6], 4).is_none());
        assert!(covariance(&[0.0; 50], 4).is_none());
    }

    #[test]
    fn inverse_filter_whitens_its_own_process() {
        let mut x = vec![0.0; 300];
        for i in 0..x.len() {
            let e = if i % 50 == 0 { 1.0 } else { 0.0 };
            let x1 = if i >= 1 { x[i - 1] } else { 0.0 };
            let x2 = if i >= 2 { x[i - 2] } else { 0.0 };
            x[i] = e + 1.6 * x1 - 0.9 * x2;
        }
        let e = inverse_filter(&x, &[1.0, -1.6, 0.9]);
        for (i, v) in e.iter().enumerate() {
            let expected = if i % 50 == 0 { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn silent_and_short_frames() {
        assert!(burg(&[0.0; 100], 10).is_none());
        assert!(burg(&[1.0; 5], 10).is_none());
    }

    #[test]
    fn resonance_root_round_trip() {
        let r = Resonance {
            frequency: 1234.0,
            bandwidth: 77.0,
        };
        let back = Resonance::from_root(r.to_root(11025.0), 11025.0);
        assert!((back.frequency - 1234.0).abs() < 1e-9);
        assert!((back.bandwidth - 77.0).abs() < 1e-9);
    }
}
