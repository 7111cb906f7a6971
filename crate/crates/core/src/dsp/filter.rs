use core::f64::consts::PI;

/// Second-order digital resonator with unity gain at DC.
///
/// `y[n] = a x[n] + b y[n-1] + c y[n-2]`
#[derive(Debug, Clone, Copy)]
pub struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    pub fn new(frequency: f64, bandwidth: f64, sample_rate: f64) -> Self {
        let t = 1.0 / sample_rate;
        let c = -libm::exp(-2.0 * PI * bandwidth * t);
        let b = 2.0 * libm::exp(-PI * bandwidth * t) * libm::cos(2.0 * PI * frequency * t);
        let a = 1.0 - b - c;
        Self {
            a,
            b,
            c,
            y1: 0.0,
            y2: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// One-pole low-pass with unity DC gain: -6 dB/octave above `corner`.
#[derive(Debug, Clone, Copy)]
pub struct OnePole {
    pole: f64,
    y1: f64,
}

impl OnePole {
    pub fn lowpass(corner: f64, sample_rate: f64) -> Self {
        Self {
            pole: libm::exp(-2.0 * PI * corner / sample_rate),
            y1: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.y1 = (1.0 - self.pole) * x + self.pole * self.y1;
        self.y1
    }
}

/// Direct-form-I biquad (RBJ cookbook designs).
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    fn from_coefficients(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    pub fn lowpass(corner: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * corner / sample_rate;
        let (s, c) = (libm::sin(w0), libm::cos(w0));
        let alpha = s / (2.0 * q);
        Self::from_coefficients(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    pub fn highpass(corner: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * corner / sample_rate;
        let (s, c) = (libm::sin(w0), libm::cos(w0));
        let alpha = s / (2.0 * q);
        Self::from_coefficients(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b1 * self.x1 + self.b2 * self.x2
            - self.a1 * self.y1
            - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// First-order pre-emphasis `y[n] = x[n] - k x[n-1]` with `k = exp(-2 pi f / fs)`.
pub fn pre_emphasis_coefficient(from_hz: f64, sample_rate: f64) -> f64 {
    libm::exp(-2.0 * PI * from_hz / sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn gain_at(freq: f64, fs: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let n = 8000;
        let out: Vec<f64> = (0..n)
            .map(|i| f(libm::sin(2.0 * PI * freq * i as f64 / fs)))
            .collect();
        let tail = &out[n / 2..];
        libm::sqrt(2.0 * tail.iter().map(|y| y * y).sum::<f64>() / tail.len() as f64)
    }

    #[test]
    fn resonator_peaks_at_its_frequency() {
        let fs = 16000.0;
        let mut r = Resonator::new(1000.0, 80.0, fs);
        let at = gain_at(1000.0, fs, |x| r.process(x));
        let mut r = Resonator::new(1000.0, 80.0, fs);
        let below = gain_at(700.0, fs, |x| r.process(x));
        let mut r = Resonator::new(1000.0, 80.0, fs);
        let above = gain_at(1300.0, fs, |x| r.process(x));
        assert!(at > 3.0 * below && at > 3.0 * above);
        let mut r = Resonator::new(1000.0, 80.0, fs);
        let dc: f64 = (0..20000).map(|_| r.process(1.0)).last().unwrap();
        assert!((dc - 1.0).abs() < 1e-9);
    }

    #[test]
    fn biquads_pass_and_stop() {
        let fs = 16000.0;
        let mut hp = Biquad::highpass(80.0, core::f64::consts::FRAC_1_SQRT_2, fs);
        assert!(gain_at(20.0, fs, |x| hp.process(x)) < 0.1);
        let mut hp = Biquad::highpass(80.0, core::f64::consts::FRAC_1_SQRT_2, fs);
        assert!((gain_at(500.0, fs, |x| hp.process(x)) - 1.0).abs() < 0.05);
        let mut lp = Biquad::lowpass(1000.0, core::f64::consts::FRAC_1_SQRT_2, fs);
        assert!(gain_at(4000.0, fs, |x| lp.process(x)) < 0.1);
    }
}
