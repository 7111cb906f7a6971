//! Parametric vowel synthesis and mel-spaced stimulus continua.
//!
//! The synthesizer is a cascade of second-order resonators excited by a
//! glottal impulse train whose spectrum is tilted by -12 dB/octave, followed
//! by a first-difference lip-radiation stage. F1 and F2 come from the
//! stimulus; F3 and F4 and all bandwidths are fixed parameters.

use alloc::format;
use alloc::vec::Vec;

use crate::dsp::filter::{OnePole, Resonator};
use crate::units::{mel_distance, FormantPoint};
use crate::{Error, Waveform};

/// Rise-fall f0 contour: piecewise linear through `start`, `peak` (at
/// `peak_position` of the duration) and `end`, each a multiple of a shape
/// that is rescaled so the time-average equals `mean_f0`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PitchContour {
    pub mean_f0: f64,
    pub start: f64,
    pub peak: f64,
    pub end: f64,
    pub peak_position: f64,
}

impl PitchContour {
    pub fn rise_fall(mean_f0: f64) -> Self {
        Self {
            mean_f0,
            start: 0.9,
            peak: 1.1,
            end: 0.85,
            peak_position: 0.3,
        }
    }

    pub fn flat(mean_f0: f64) -> Self {
        Self {
            mean_f0,
            start: 1.0,
            peak: 1.0,
            end: 1.0,
            peak_position: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let ok = self.mean_f0.is_finite()
            && self.mean_f0 > 0.0
            && self.start > 0.0
            && self.peak > 0.0
            && self.end > 0.0
            && (0.0..=1.0).contains(&self.peak_position);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid pitch contour {self:?}")))
        }
    }

    fn shape(&self, x: f64) -> f64 {
        let p = self.peak_position;
        if x <= p && p > 0.0 {
            self.start + (self.peak - self.start) * x / p
        } else if p < 1.0 {
            self.peak + (self.end - self.peak) * (x - p) / (1.0 - p)
        } else {
            self.peak
        }
    }

    fn shape_mean(&self) -> f64 {
        let p = self.peak_position;
        0.5 * p * (self.start + self.peak) + 0.5 * (1.0 - p) * (self.peak + self.end)
    }

    /// f0 at fraction `x` in `[0, 1]` of the token.
    pub fn f0_at(&self, x: f64) -> f64 {
        self.mean_f0 * self.shape(x.clamp(0.0, 1.0)) / self.shape_mean()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StimulusSpec {
    /// Stimulus number; may be zero or negative.
    pub id: i32,
    pub target: FormantPoint,
    /// Seconds.
    pub duration: f64,
    pub f0: PitchContour,
}

impl StimulusSpec {
    pub fn position(&self) -> f64 {
        self.id as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SynthesisMode {
    Parametric,
    Resynthesis,
}

/// Fixed synthesizer parameters. Bandwidths are for F1..F4.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SynthParams {
    pub sample_rate: f64,
    pub bandwidths: [f64; 4],
    pub f3: f64,
    pub f4: f64,
    /// Corner of the two one-pole low-passes shaping the glottal pulses.
    pub source_corner_hz: f64,
    /// Raised-cosine onset and offset ramps, seconds.
    pub ramp: f64,
    pub peak_dbfs: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            sample_rate: 16000.0,
            bandwidths: [60.0, 90.0, 150.0, 200.0],
            f3: 2800.0,
            f4: 3500.0,
            source_corner_hz: 100.0,
            ramp: 0.005,
            peak_dbfs: -3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Continuum {
    pub stimuli: Vec<StimulusSpec>,
    pub mode: SynthesisMode,
    /// One waveform per stimulus, same order.
    pub audio: Vec<Waveform>,
}

impl Continuum {
    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn get(&self, id: i32) -> Option<&StimulusSpec> {
        self.stimuli.iter().find(|s| s.id == id)
    }

    /// Mel distances between consecutive stimulus targets.
    pub fn mel_gaps(&self) -> Vec<f64> {
        self.stimuli
            .windows(2)
            .map(|w| mel_distance(&w[0].target, &w[1].target).value())
            .collect()
    }
}

/// Glottal excitation: one impulse per period with the period following the
/// contour, each impulse split over two samples at its fractional position.
fn glottal_pulses(spec: &StimulusSpec, sample_rate: f64, len: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0; len + 1];
    let mut phase = 1.0;
    for n in 0..len {
        let x = n as f64 / len as f64;
        let f0 = spec.f0.f0_at(x);
        if phase >= 1.0 {
            phase -= 1.0;
            // fraction of a sample past n at which the pulse falls
            let frac = (phase / (f0 / sample_rate)).clamp(0.0, 1.0);
            out[n] += 1.0 - frac;
            out[n + 1] += frac;
        }
        phase += f0 / sample_rate;
    }
    out.truncate(len);
    out
}

/// Renders one voiced vowel token.
pub fn render_vowel(spec: &StimulusSpec, params: &SynthParams) -> Result<Waveform, Error> {
    let fs = params.sample_rate;
    if !(spec.duration > 0.0 && spec.duration.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {}",
            spec.duration
        )));
    }
    spec.f0.validate()?;
    let highest = spec.target.f2().max(params.f3).max(params.f4);
    if highest >= fs / 2.0 {
        return Err(Error::AboveNyquist {
            frequency: highest,
            nyquist: fs / 2.0,
        });
    }

    let len = libm::round(spec.duration * fs) as usize;
    let source = glottal_pulses(spec, fs, len);

    let mut tilt = [
        OnePole::lowpass(params.source_corner_hz, fs),
        OnePole::lowpass(params.source_corner_hz, fs),
    ];
    let b = params.bandwidths;
    let mut cascade = [
        Resonator::new(spec.target.f1(), b[0], fs),
        Resonator::new(spec.target.f2(), b[1], fs),
        Resonator::new(params.f3, b[2], fs),
        Resonator::new(params.f4, b[3], fs),
    ];

    let mut previous = 0.0;
    let mut samples: Vec<f64> = source
        .into_iter()
        .map(|x| {
            let v = tilt.iter_mut().fold(x, |v, f| f.process(v));
            let v = cascade.iter_mut().fold(v, |v, r| r.process(v));
            // lip radiation, +6 dB/octave
            let out = v - previous;
            previous = v;
            out
        })
        .collect();

    let ramp = (params.ramp * fs) as usize;
    let ramp = ramp.min(len / 2);
    for i in 0..ramp {
        let g = 0.5 - 0.5 * libm::cos(core::f64::consts::PI * i as f64 / ramp as f64);
        samples[i] *= g;
        samples[len - 1 - i] *= g;
    }

    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let target = libm::pow(10.0, params.peak_dbfs / 20.0);
        for s in &mut samples {
            *s *= target / peak;
        }
    }
    Ok(Waveform::new(samples, fs))
}

/// Builds `n` stimuli interpolated linearly in (mel F1, mel F2) from
/// `endpoint_a` to `endpoint_b` inclusive and renders each one. Stimulus
/// ids run from 1 to `n`.
pub fn build_parametric_continuum(
    endpoint_a: FormantPoint,
    endpoint_b: FormantPoint,
    n: usize,
    duration: f64,
    f0: PitchContour,
    params: &SynthParams,
) -> Result<Continuum, Error> {
    let stimuli = parametric_specs(endpoint_a, endpoint_b, n, duration, f0)?;
    let audio = stimuli
        .iter()
        .map(|s| render_vowel(s, params))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Continuum {
        stimuli,
        mode: SynthesisMode::Parametric,
        audio,
    })
}

/// The stimulus list of [`build_parametric_continuum`] without rendering.
pub fn parametric_specs(
    endpoint_a: FormantPoint,
    endpoint_b: FormantPoint,
    n: usize,
    duration: f64,
    f0: PitchContour,
) -> Result<Vec<StimulusSpec>, Error> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a continuum needs at least 2 stimuli, got {n}"
        )));
    }
    if endpoint_a == endpoint_b {
        return Err(Error::InvalidArgument("continuum endpoints coincide".into()));
    }
    let (ma, mb) = (endpoint_a.to_mel(), endpoint_b.to_mel());
    (0..n)
        .map(|i| {
            let target = match i {
                0 => endpoint_a,
                _ if i == n - 1 => endpoint_b,
                _ => ma.lerp(mb, i as f64 / (n - 1) as f64).to_formants()?,
            };
            Ok(StimulusSpec {
                id: i as i32 + 1,
                target,
                duration,
                f0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(f1: f64, f2: f64) -> StimulusSpec {
        StimulusSpec {
            id: 1,
            target: FormantPoint::new(f1, f2).unwrap(),
            duration: 0.25,
            f0: PitchContour::rise_fall(117.0),
        }
    }

    #[test]
    fn contour_mean_is_exact() {
        let c = PitchContour::rise_fall(117.0);
        let n = 100_000;
        let mean = (0..n).map(|i| c.f0_at((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
        assert!((mean - 117.0).abs() < 0.01 * 117.0);
        assert!((mean - 117.0).abs() < 1e-3);
        assert!(c.f0_at(0.3) > c.f0_at(0.0) && c.f0_at(0.3) > c.f0_at(1.0));
    }

    #[test]
    fn rendered_length_and_level() {
        let w = render_vowel(&spec(270.0, 2290.0), &SynthParams::default()).unwrap();
        assert_eq!(w.samples.len(), 4000);
        let peak = w.peak();
        assert!((peak - libm::pow(10.0, -3.0 / 20.0)).abs() < 1e-9);
        assert!(w.samples.iter().all(|s| s.is_finite() && s.abs() < 1.0));
    }

    #[test]
    fn pulse_count_follows_contour() {
        let s = spec(270.0, 2290.0);
        let pulses = glottal_pulses(&s, 16000.0, 4000);
        let total: f64 = pulses.iter().sum();
        // 0.25 s at a mean of 117 Hz
        assert!((total - 29.25).abs() < 1.5, "{total}");
    }

    #[test]
    fn rejects_formants_above_nyquist() {
        let params = SynthParams {
            sample_rate: 4000.0,
            ..SynthParams::default()
        };
        assert!(matches!(
            render_vowel(&spec(270.0, 2290.0), &params),
            Err(Error::AboveNyquist { .. })
        ));
    }

    #[test]
    fn continuum_shape() {
        let a = FormantPoint::new(270.0, 2290.0).unwrap();
        let b = FormantPoint::new(390.0, 1990.0).unwrap();
        let c = parametric_specs(a, b, 9, 0.25, PitchContour::rise_fall(117.0)).unwrap();
        assert_eq!(c.len(), 9);
        assert_eq!(c[0].target, a);
        assert_eq!(c[8].target, b);
        assert_eq!(c.iter().map(|s| s.id).collect::<Vec<_>>(), (1..=9).collect::<Vec<_>>());
        let gaps: Vec<f64> = c
            .windows(2)
            .map(|w| mel_distance(&w[0].target, &w[1].target).value())
            .collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!(gaps.iter().all(|g| ((g - mean) / mean).abs() < 1e-6));

        let two = parametric_specs(a, b, 2, 0.25, PitchContour::rise_fall(117.0)).unwrap();
        assert_eq!((two[0].target, two[1].target), (a, b));
        assert!(parametric_specs(a, b, 1, 0.25, PitchContour::rise_fall(117.0)).is_err());
        assert!(parametric_specs(a, a, 9, 0.25, PitchContour::rise_fall(117.0)).is_err());
    }
}
