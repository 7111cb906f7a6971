//! Formant, voicing and f0 measurement of vowel tokens.
//!
//! Formants are the roots of a per-frame Burg LPC polynomial computed on a
//! pre-emphasized, Gaussian-windowed, resampled signal. Tokens are measured
//! at the tenth vocal period after the onset of voicing in the first formant
//! region.

use alloc::vec::Vec;

use crate::dsp::filter::{pre_emphasis_coefficient, Biquad};
use crate::dsp::lpc::{burg, covariance, inverse_filter, resonances, Resonance};
use crate::dsp::{resample, window};
use crate::units::FormantPoint;
use crate::{Error, Waveform};

/// Frames below this fraction of the loudest frame's energy are skipped.
const SILENCE_FLOOR: f64 = 1e-6;
/// A frame is trusted when its LPC prediction gain reaches this level.
const RELIABLE_GAIN_DB: f64 = 10.0;
const RELIABLE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FormantConfig {
    /// Effective Gaussian window length, seconds. The physical frame is
    /// twice as long.
    pub window: f64,
    /// Seconds between frame centres.
    pub step: f64,
    pub lpc_order: usize,
    /// Resample before analysis. `None` analyses at the native rate.
    pub analysis_rate: Option<f64>,
    pub pre_emphasis_hz: f64,
    pub max_bandwidth: f64,
    pub min_frequency: f64,
    pub nyquist_margin: f64,
    /// Shifts the frame grid, seconds.
    pub time_offset: f64,
}

impl Default for FormantConfig {
    fn default() -> Self {
        Self {
            window: 0.025,
            step: 0.005,
            lpc_order: 12,
            analysis_rate: Some(11025.0),
            pre_emphasis_hz: 50.0,
            max_bandwidth: 700.0,
            min_frequency: 90.0,
            nyquist_margin: 50.0,
            time_offset: 0.0,
        }
    }
}

impl FormantConfig {
    fn validate(&self) -> Result<(), Error> {
        if !(self.window > self.step && self.step > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "need window > step > 0, got window {} step {}",
                self.window,
                self.step
            )));
        }
        if self.lpc_order < 2 {
            return Err(Error::InvalidArgument("LPC order must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FormantFrame {
    pub time: f64,
    /// Strictly increasing in frequency.
    pub formants: Vec<Resonance>,
    pub prediction_gain_db: f64,
}

impl FormantFrame {
    pub fn point(&self) -> Option<FormantPoint> {
        match self.formants.as_slice() {
            [f1, f2, ..] => FormantPoint::new(f1.frequency, f2.frequency).ok(),
            _ => None,
        }
    }

    pub fn is_reliable(&self) -> bool {
        self.formants.len() >= 2 && self.prediction_gain_db >= RELIABLE_GAIN_DB
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FormantTrack {
    /// Strictly increasing in time.
    pub frames: Vec<FormantFrame>,
    pub voicing_onset: f64,
    pub duration: f64,
}

impl FormantTrack {
    /// False for input without stable formant structure, such as noise.
    pub fn is_reliable(&self) -> bool {
        if self.frames.is_empty() {
            return false;
        }
        let good = self.frames.iter().filter(|f| f.is_reliable()).count();
        good as f64 >= RELIABLE_FRACTION * self.frames.len() as f64
    }

    /// Nearest frame to `time` that yields a valid F1/F2 pair.
    pub fn point_near(&self, time: f64) -> Option<(f64, FormantPoint)> {
        self.frames
            .iter()
            .filter_map(|f| f.point().map(|p| (f.time, p)))
            .min_by(|a, b| (a.0 - time).abs().total_cmp(&(b.0 - time).abs()))
    }

    /// Median F1 and F2 over reliable frames whose centres fall in the
    /// middle `fraction` of the voiced part of the token.
    pub fn median_point(&self, fraction: f64) -> Option<FormantPoint> {
        let voiced = self.duration - self.voicing_onset;
        let lo = self.voicing_onset + 0.5 * (1.0 - fraction) * voiced;
        let hi = self.duration - 0.5 * (1.0 - fraction) * voiced;
        let points: Vec<FormantPoint> = self
            .frames
            .iter()
            .filter(|f| f.time >= lo && f.time <= hi && f.is_reliable())
            .filter_map(FormantFrame::point)
            .collect();
        if points.is_empty() {
            return None;
        }
        let mut f1: Vec<f64> = points.iter().map(|p| p.f1()).collect();
        let mut f2: Vec<f64> = points.iter().map(|p| p.f2()).collect();
        FormantPoint::new(median(&mut f1), median(&mut f2)).ok()
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Resamples and pre-emphasizes for LPC. Returns the signal and its rate.
pub(crate) fn prepare(audio: &Waveform, cfg: &FormantConfig) -> (Vec<f64>, f64) {
    let (mut x, fs) = match cfg.analysis_rate {
        Some(rate) => (resample(&audio.samples, audio.sample_rate, rate), rate),
        None => (audio.samples.clone(), audio.sample_rate),
    };
    let k = pre_emphasis_coefficient(cfg.pre_emphasis_hz, fs);
    for i in (1..x.len()).rev() {
        x[i] -= k * x[i - 1];
    }
    (x, fs)
}

/// Frame centres on the grid `k * step + time_offset` whose full frame
/// fits inside `[0, duration]`.
fn frame_centres(duration: f64, frame_len: f64, cfg: &FormantConfig) -> Vec<f64> {
    let half = 0.5 * frame_len;
    let first = libm::ceil((half - cfg.time_offset) / cfg.step - 1e-9) as i64;
    let last = libm::floor((duration - half - cfg.time_offset) / cfg.step + 1e-9) as i64;
    (first..=last)
        .map(|k| k as f64 * cfg.step + cfg.time_offset)
        .collect()
}

/// Tracks formants frame by frame.
///
/// Fails with [`Error::EmptyTrack`] when the audio is empty, silent, or too
/// short for a single frame. White noise yields a track whose
/// [`FormantTrack::is_reliable`] is false.
pub fn track_formants(audio: &Waveform, cfg: &FormantConfig) -> Result<FormantTrack, Error> {
    cfg.validate()?;
    if audio.is_empty() {
        return Err(Error::EmptyTrack("audio is empty"));
    }
    if audio.peak() == 0.0 {
        return Err(Error::EmptyTrack("audio is silent"));
    }
    let duration = audio.duration();
    let (x, fs) = prepare(audio, cfg);
    let frame_len = 2.0 * cfg.window;
    let n = libm::round(frame_len * fs) as usize;
    let win = window::gaussian(n);
    let nyquist = fs / 2.0;

    let mut raw = Vec::new();
    for centre in frame_centres(duration, frame_len, cfg) {
        let start = libm::round((centre - 0.5 * frame_len) * fs) as isize;
        let frame: Vec<f64> = (0..n)
            .map(|i| {
                let j = start + i as isize;
                if j >= 0 && (j as usize) < x.len() {
                    x[j as usize] * win[i]
                } else {
                    0.0
                }
            })
            .collect();
        if let Some(lpc) = burg(&frame, cfg.lpc_order) {
            raw.push((centre, lpc));
        }
    }
    let loudest = raw.iter().fold(0.0f64, |m, (_, l)| m.max(l.energy));
    if raw.is_empty() || loudest <= 0.0 {
        return Err(Error::EmptyTrack("no analysable frames"));
    }

    let frames: Vec<FormantFrame> = raw
        .into_iter()
        .filter(|(_, lpc)| lpc.energy >= SILENCE_FLOOR * loudest)
        .map(|(time, lpc)| {
            let formants = resonances(&lpc.roots(), fs)
                .into_iter()
                .filter(|r| {
                    r.bandwidth < cfg.max_bandwidth
                        && r.frequency > cfg.min_frequency
                        && r.frequency < nyquist - cfg.nyquist_margin
                })
                .collect();
            FormantFrame {
                time,
                formants,
                prediction_gain_db: lpc.prediction_gain_db(),
            }
        })
        .collect();

    let voicing_onset = match find_voicing_onset(audio) {
        Ok(t) => t,
        Err(Error::Unvoiced) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(FormantTrack {
        frames,
        voicing_onset,
        duration,
    })
}

/// Band limits and frame sizes for [`find_voicing_onset`].
pub const ONSET_BAND: (f64, f64) = (80.0, 1000.0);
const ONSET_FRAME: f64 = 0.010;
const ONSET_HOP: f64 = 0.001;
const ONSET_THRESHOLD: f64 = 0.1;
const ONSET_RUN: usize = 3;

/// Earliest time at which short-term energy in the 80-1000 Hz band exceeds
/// 10% of the token maximum for at least three consecutive frames. Times
/// are frame centres.
pub fn find_voicing_onset(audio: &Waveform) -> Result<f64, Error> {
    if audio.is_empty() {
        return Err(Error::Unvoiced);
    }
    let fs = audio.sample_rate;
    let q = core::f64::consts::FRAC_1_SQRT_2;
    let mut hp = Biquad::highpass(ONSET_BAND.0, q, fs);
    let mut lp = Biquad::lowpass(ONSET_BAND.1, q, fs);
    let band: Vec<f64> = audio
        .samples
        .iter()
        .map(|&s| lp.process(hp.process(s)))
        .collect();

    let frame = ((ONSET_FRAME * fs) as usize).max(1);
    let hop = ((ONSET_HOP * fs) as usize).max(1);
    let energies: Vec<f64> = (0..)
        .map(|i| i * hop)
        .take_while(|&start| start + frame <= band.len())
        .map(|start| band[start..start + frame].iter().map(|v| v * v).sum())
        .collect();
    let max = energies.iter().fold(0.0f64, |m, &e| m.max(e));
    if max <= 0.0 {
        return Err(Error::Unvoiced);
    }
    let threshold = ONSET_THRESHOLD * max;
    energies
        .windows(ONSET_RUN)
        .position(|w| w.iter().all(|&e| e > threshold))
        .map(|i| (i * hop) as f64 / fs + 0.5 * frame as f64 / fs)
        .ok_or(Error::Unvoiced)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PitchConfig {
    pub window: f64,
    pub step: f64,
    pub min_f0: f64,
    pub max_f0: f64,
    /// Minimum normalized autocorrelation for a voiced frame.
    pub voicing_threshold: f64,
    /// Frames near the token edges may shrink down to this length.
    pub min_window: f64,
    /// Order of the LPC inverse filter used to settle octave ambiguity:
    /// when both a lag and its double are strong candidates, the double
    /// wins if the flattened frame barely correlates at the shorter lag, so a strong
    /// formant on an even harmonic cannot masquerade as the period. Zero
    /// disables the check.
    pub whiten_order: usize,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            window: 0.040,
            step: 0.005,
            min_f0: 70.0,
            max_f0: 400.0,
            voicing_threshold: 0.45,
            min_window: 0.025,
            whiten_order: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PitchFrame {
    pub time: f64,
    pub f0: Option<f64>,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PitchTrack {
    pub frames: Vec<PitchFrame>,
    pub duration: f64,
}

impl PitchTrack {
    /// A track with the same f0 everywhere, sampled every `step` seconds.
    pub fn constant(f0: f64, duration: f64, step: f64) -> Self {
        let n = libm::floor(duration / step) as usize + 1;
        Self {
            frames: (0..n)
                .map(|i| PitchFrame {
                    time: i as f64 * step,
                    f0: Some(f0),
                    strength: 1.0,
                })
                .collect(),
            duration,
        }
    }

    pub fn voiced(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.frames.iter().filter_map(|f| f.f0.map(|p| (f.time, p)))
    }

    pub fn mean_f0(&self) -> Option<f64> {
        let (sum, n) = self.voiced().fold((0.0, 0usize), |(s, n), (_, f)| (s + f, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// f0 of the voiced frame nearest to `time`.
    pub fn f0_near(&self, time: f64) -> Option<f64> {
        self.voiced()
            .min_by(|a, b| (a.0 - time).abs().total_cmp(&(b.0 - time).abs()))
            .map(|(_, f)| f)
    }
}

/// Normalized-autocorrelation pitch tracking. Frames whose full window
/// would cross a token edge are shortened, down to `min_window`.
pub fn track_pitch(audio: &Waveform, cfg: &PitchConfig) -> PitchTrack {
    let fs = audio.sample_rate;
    let x = &audio.samples;
    let duration = audio.duration();
    let half = 0.5 * cfg.window;
    let min_lag = libm::floor(fs / cfg.max_f0) as usize;
    let max_lag = libm::ceil(fs / cfg.min_f0) as usize;

    let mut frames = Vec::new();
    let mut t = 0.0;
    while t <= duration + 1e-9 {
        let lo = ((t - half).max(0.0) * fs) as usize;
        let hi = (((t + half).min(duration)) * fs) as usize;
        let hi = hi.min(x.len());
        if hi > lo && (hi - lo) as f64 >= cfg.min_window * fs {
            frames.push(pitch_frame(&x[lo..hi], fs, t, min_lag, max_lag, cfg));
        }
        t += cfg.step;
    }
    PitchTrack { frames, duration }
}

fn pitch_frame(
    seg: &[f64],
    fs: f64,
    time: f64,
    min_lag: usize,
    max_lag: usize,
    cfg: &PitchConfig,
) -> PitchFrame {
    let mean = seg.iter().sum::<f64>() / seg.len() as f64;
    let seg: Vec<f64> = seg.iter().map(|v| v - mean).collect();
    // keep at least half the segment overlapping at the longest lag
    let max_lag = max_lag.min(seg.len() / 2);
    let unvoiced = PitchFrame {
        time,
        f0: None,
        strength: 0.0,
    };
    if max_lag <= min_lag + 2 {
        return unvoiced;
    }

    let corr_of = |seg: &[f64], lag: usize| -> f64 {
        if lag >= seg.len() {
            return 0.0;
        }
        let a = &seg[..seg.len() - lag];
        let b = &seg[lag..];
        let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let ea: f64 = a.iter().map(|v| v * v).sum();
        let eb: f64 = b.iter().map(|v| v * v).sum();
        if ea <= 0.0 || eb <= 0.0 {
            0.0
        } else {
            num / libm::sqrt(ea * eb)
        }
    };
    let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(|l| corr_of(&seg, l)).collect();
    // r[i] is lag min_lag - 1 + i
    let peaks: Vec<(usize, f64)> = (1..r.len() - 1)
        .filter(|&i| r[i] > r[i - 1] && r[i] >= r[i + 1])
        .map(|i| (i, r[i]))
        .collect();
    let best = peaks.iter().fold(0.0f64, |m, p| m.max(p.1));
    if best < cfg.voicing_threshold {
        return PitchFrame {
            strength: best,
            ..unvoiced
        };
    }
    // shortest lag close to the best peak, which avoids octave-down errors
    let &(mut i, mut strength) = peaks
        .iter()
        .find(|p| p.1 >= 0.9 * best)
        .unwrap_or(&peaks[0]);
    let lag_of = |i: usize| min_lag - 1 + i;
    let double = peaks.iter().copied().find(|p| {
        let ratio = lag_of(p.0) as f64 / lag_of(i) as f64;
        (ratio - 2.0).abs() < 0.08 && p.1 >= 0.9 * best
    });
    if let (Some(d), true) = (double, cfg.whiten_order > 0) {
        let win = window::hann(seg.len());
        let tapered: Vec<f64> = seg.iter().zip(&win).map(|(v, w)| v * w).collect();
        if let Some(lpc) = burg(&tapered, cfg.whiten_order) {
            let flat = inverse_filter(&seg, &lpc.coefficients);
            let flat = &flat[cfg.whiten_order.min(flat.len())..];
            let near_max = |centre: usize| {
                (centre.saturating_sub(2)..=centre + 2)
                    .map(|l| corr_of(flat, l))
                    .fold(f64::MIN, f64::max)
            };
            // a half-period lag leaves the flattened pulses misaligned
            if near_max(lag_of(i)) < 0.5 * near_max(lag_of(d.0)) {
                (i, strength) = d;
            }
        }
    }
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let lag = (min_lag - 1 + i) as f64 + shift;
    PitchFrame {
        time,
        f0: Some(fs / lag),
        strength,
    }
}

/// Where and what a token was measured.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeasurementPoint {
    pub time: f64,
    pub point: FormantPoint,
}

const MEASUREMENT_PERIODS: usize = 10;

/// Measures at the tenth vocal period after voicing onset: starting at the
/// onset, ten periods of `1 / f0` are accumulated using the f0 in force at
/// each running position, and the formants of the nearest frame are read.
pub fn measure_at_tenth_period(
    track: &FormantTrack,
    f0_track: &PitchTrack,
) -> Result<MeasurementPoint, Error> {
    let mut time = track.voicing_onset;
    let end = track.duration.min(f0_track.duration);
    for period in 0..MEASUREMENT_PERIODS {
        let f0 = f0_track.f0_near(time).ok_or(Error::Unvoiced)?;
        let next = time + 1.0 / f0;
        if next > end {
            let partial = (end - time).max(0.0) * f0;
            return Err(Error::ShortToken {
                periods: period as f64 + partial,
            });
        }
        time = next;
    }
    let (_, point) = track
        .point_near(time)
        .ok_or(Error::EmptyTrack("no frame with two formants"))?;
    Ok(MeasurementPoint { time, point })
}

/// How the formants at the measurement point are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MeasurementMethod {
    /// The nearest frame of the windowed Burg track.
    Windowed,
    /// Covariance LPC over the closed phase of the glottal cycles around
    /// the measurement point, falling back to [`MeasurementMethod::Windowed`]
    /// when the cycles disagree.
    #[default]
    ClosedPhase,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ClosedPhaseConfig {
    pub lpc_order: usize,
    /// Audio above this rate is resampled down to it first.
    pub max_rate: f64,
    /// Samples skipped on each side of a glottal epoch, seconds.
    pub guard: f64,
    /// Consecutive cycles analysed and averaged.
    pub cycles: usize,
    /// Largest F1 and F2 spread tolerated across cycles, Hz.
    pub cycle_tolerance: (f64, f64),
    /// Largest F1 and F2 departure from the windowed reading, Hz.
    pub max_correction: (f64, f64),
    /// Every cycle's fit must reach this prediction gain, dB. Additive
    /// noise caps the gain and biases the closed-phase roots.
    pub min_gain_db: f64,
    /// Widest pole accepted as a formant, Hz. Covariance fits over a
    /// closed phase give sharp formant poles; broader poles model source
    /// or filter residue.
    pub max_bandwidth: f64,
}

impl Default for ClosedPhaseConfig {
    fn default() -> Self {
        Self {
            lpc_order: 12,
            max_rate: 16000.0,
            guard: 0.000125,
            cycles: 2,
            cycle_tolerance: (10.0, 25.0),
            max_correction: (60.0, 150.0),
            min_gain_db: 20.0,
            max_bandwidth: 400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AnalysisConfig {
    pub formants: FormantConfig,
    pub pitch: PitchConfig,
    pub method: MeasurementMethod,
    pub closed_phase: ClosedPhaseConfig,
}

/// Closed-phase reading of F1 and F2 near `time`.
///
/// Glottal epochs are located as peaks of the LPC residual, one period
/// apart. Each inter-epoch interval, minus a guard on both sides, is fitted
/// by covariance LPC. `None` when epochs cannot be found, a cycle lacks two
/// formants, or the cycles disagree.
pub fn closed_phase_point(
    audio: &Waveform,
    time: f64,
    f0: f64,
    cfg: &AnalysisConfig,
) -> Option<FormantPoint> {
    let cp = &cfg.closed_phase;
    if f0.is_nan() || f0 <= 0.0 || cp.cycles == 0 {
        return None;
    }
    let resampled = audio.sample_rate > cp.max_rate;
    let prep_cfg = FormantConfig {
        analysis_rate: resampled.then_some(cp.max_rate),
        ..cfg.formants.clone()
    };
    let (x, fs) = prepare(audio, &prep_cfg);
    let period = fs / f0;
    // the resampling kernel smears each epoch over about a millisecond
    let guard_time = if resampled { cp.guard.max(0.001) } else { cp.guard };
    let guard = (libm::round(guard_time * fs) as usize).max(1);

    // inverse filter from a windowed frame centred on the measurement
    let centre = libm::round(time * fs) as isize;
    let n = libm::round(2.0 * cfg.formants.window * fs) as usize;
    let win = window::gaussian(n);
    let frame: Vec<f64> = (0..n)
        .map(|i| {
            let j = centre - (n / 2) as isize + i as isize;
            if j >= 0 && (j as usize) < x.len() {
                x[j as usize] * win[i]
            } else {
                0.0
            }
        })
        .collect();
    let lpc = burg(&frame, cfg.formants.lpc_order)?;
    let lo = centre - libm::ceil(1.5 * period) as isize - lpc.order() as isize;
    let hi = centre + libm::ceil((cp.cycles as f64 + 0.5) * period) as isize;
    if lo < 0 || hi as usize > x.len() {
        return None;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let mut e = inverse_filter(&x[lo..hi], &lpc.coefficients);
    // the first `order` samples lack history
    for v in e.iter_mut().take(lpc.order()) {
        *v = 0.0;
    }
    let max = e.iter().fold(f64::MIN, |m, &v| m.max(v));
    let min = e.iter().fold(f64::MAX, |m, &v| m.min(v));
    if max < -min {
        e.iter_mut().for_each(|v| *v = -*v);
    }
    let peak_in = |a: f64, b: f64| -> Option<usize> {
        let a = (a.max(0.0)) as usize;
        let b = (libm::ceil(b) as usize).min(e.len());
        (a..b).max_by(|&i, &j| e[i].total_cmp(&e[j]))
    };
    let local_centre = (centre as usize - lo) as f64;
    let mut epochs = alloc::vec![peak_in(local_centre - 1.25 * period, local_centre - 0.25 * period)?];
    for _ in 0..cp.cycles {
        let p = *epochs.last()? as f64;
        epochs.push(peak_in(p + 0.7 * period, p + 1.3 * period)?);
    }

    let nyquist = fs / 2.0;
    let mut f1 = Vec::with_capacity(cp.cycles);
    let mut f2 = Vec::with_capacity(cp.cycles);
    for pair in epochs.windows(2) {
        let (start, end) = (lo + pair[0] + guard, lo + pair[1]);
        if end <= start + guard {
            return None;
        }
        let fit = covariance(&x[start..end - guard], cp.lpc_order)?;
        if fit.prediction_gain_db() < cp.min_gain_db {
            return None;
        }
        let formants: Vec<Resonance> = resonances(&fit.roots(), fs)
            .into_iter()
            .filter(|r| {
                r.bandwidth > 0.0
                    && r.bandwidth < cp.max_bandwidth.min(cfg.formants.max_bandwidth)
                    && r.frequency > cfg.formants.min_frequency
                    && r.frequency < nyquist - cfg.formants.nyquist_margin
            })
            .collect();
        match formants.as_slice() {
            [a, b, ..] => {
                f1.push(a.frequency);
                f2.push(b.frequency);
            }
            _ => return None,
        }
    }
    let spread = |v: &[f64]| {
        v.iter().fold(f64::MIN, |m, &x| m.max(x)) - v.iter().fold(f64::MAX, |m, &x| m.min(x))
    };
    if spread(&f1) > cp.cycle_tolerance.0 || spread(&f2) > cp.cycle_tolerance.1 {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    FormantPoint::new(mean(&f1), mean(&f2)).ok()
}

/// Everything measured on one token.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenMeasurement {
    pub onset: f64,
    pub time: f64,
    pub point: FormantPoint,
    pub f0: Option<f64>,
    pub reliable: bool,
    /// The method that produced `point`.
    pub method: MeasurementMethod,
}

/// Full per-token measurement: onset, f0 and formant tracks, then the
/// tenth-period reading.
pub fn measure_token(audio: &Waveform, cfg: &AnalysisConfig) -> Result<TokenMeasurement, Error> {
    let track = track_formants(audio, &cfg.formants)?;
    // a token with no energy in the F1 band is unvoiced even if it has a track
    find_voicing_onset(audio)?;
    let pitch = track_pitch(audio, &cfg.pitch);
    let m = measure_at_tenth_period(&track, &pitch)?;
    let f0 = pitch.f0_near(m.time);
    let refined = match (cfg.method, f0) {
        (MeasurementMethod::ClosedPhase, Some(f0)) => closed_phase_point(audio, m.time, f0, cfg)
            .filter(|p| {
                let (d1, d2) = cfg.closed_phase.max_correction;
                (p.f1() - m.point.f1()).abs() <= d1 && (p.f2() - m.point.f2()).abs() <= d2
            }),
        _ => None,
    };
    let (point, method) = match refined {
        Some(p) => (p, MeasurementMethod::ClosedPhase),
        None => (m.point, MeasurementMethod::Windowed),
    };
    Ok(TokenMeasurement {
        onset: track.voicing_onset,
        time: m.time,
        point,
        f0,
        reliable: track.is_reliable(),
        method,
    })
}
