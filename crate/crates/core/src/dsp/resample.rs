//! Band-limited sample-rate conversion by windowed-sinc interpolation.

use alloc::vec::Vec;
use core::f64::consts::PI;

const ZERO_CROSSINGS: f64 = 16.0;
const PASSBAND: f64 = 0.95;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        libm::sin(PI * x) / (PI * x)
    }
}

fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        0.42 + 0.5 * libm::cos(PI * u) + 0.08 * libm::cos(2.0 * PI * u)
    }
}

/// Resamples `input` from `from_rate` to `to_rate`. When downsampling, the
/// kernel low-passes at 95% of the new Nyquist frequency.
pub fn resample(input: &[f64], from_rate: f64, to_rate: f64) -> Vec<f64> {
    if input.is_empty() {
        return Vec::new();
    }
    if (from_rate - to_rate).abs() < 1e-9 {
        return input.to_vec();
    }
    let step = from_rate / to_rate;
    // cutoff in cycles per input sample
    let cutoff = 0.5 * PASSBAND * (to_rate / from_rate).min(1.0);
    let half_width = ZERO_CROSSINGS / (2.0 * cutoff);
    let out_len = libm::floor(input.len() as f64 / step) as usize;
    let last = input.len() as isize - 1;

    (0..out_len)
        .map(|n| {
            let t = n as f64 * step;
            let lo = libm::ceil(t - half_width).max(0.0) as isize;
            let hi = (libm::floor(t + half_width) as isize).min(last);
            let mut acc = 0.0;
            for k in lo..=hi {
                let dt = t - k as f64;
                acc += input[k as usize]
                    * 2.0
                    * cutoff
                    * sinc(2.0 * cutoff * dt)
                    * blackman(dt / half_width);
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| libm::sin(2.0 * PI * freq * i as f64 / fs)).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
    }

    #[test]
    fn passband_tone_survives_downsampling() {
        let x = tone(1000.0, 16000.0, 16000);
        let y = resample(&x, 16000.0, 11025.0);
        assert_eq!(y.len(), 11025);
        let expected = tone(1000.0, 11025.0, 11025);
        let mid = &y[500..10500];
        let err: f64 = mid
            .iter()
            .zip(&expected[500..10500])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 5e-3, "max error {err}");
    }

    #[test]
    fn stopband_tone_is_removed() {
        let x = tone(7000.0, 16000.0, 16000);
        let y = resample(&x, 16000.0, 11025.0);
        assert!(rms(&y[500..10500]) < 1e-3);
    }

    #[test]
    fn identity_rate_is_a_copy() {
        let x = tone(440.0, 8000.0, 100);
        assert_eq!(resample(&x, 8000.0, 8000.0), x);
        assert!(resample(&[], 8000.0, 16000.0).is_empty());
    }
}
