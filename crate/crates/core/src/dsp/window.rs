//! Analysis windows.

use alloc::vec::Vec;
use core::f64::consts::PI;

/// Gaussian window as used for LPC formant analysis: `exp(-12 (x - 0.5)^2)`
/// over `x` in `[0, 1]`, lifted so the endpoints are exactly zero.
pub fn gaussian(len: usize) -> Vec<f64> {
    let edge = libm::exp(-12.0 * 0.25);
    (0..len)
        .map(|i| {
            let x = (i as f64 + 0.5) / len as f64 - 0.5;
            (libm::exp(-12.0 * x * x) - edge) / (1.0 - edge)
        })
        .collect()
}

pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * (i as f64 + 0.5) / len as f64))
        .collect()
}
