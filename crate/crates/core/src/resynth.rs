//! Source-filter resynthesis of a natural vowel token with shifted F1 and F2.
//!
//! The base token is resampled, pre-emphasized and cut into frames. Each
//! frame gets a Burg LPC filter; inverse filtering yields the source, and the
//! source is passed through the same filter with the F1 and F2 pole pairs
//! moved by the requested amounts. A series of such tokens forms a
//! continuum whose step sizes are a fixed fraction of the distance between
//! two words' mean formants.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::analysis::{measure_token, prepare, track_pitch, AnalysisConfig, FormantConfig};
use crate::dsp::filter::pre_emphasis_coefficient;
use crate::dsp::lpc::{burg, resonances, LpcFrame, Resonance};
use crate::dsp::{resample, window};
use crate::synth::{Continuum, PitchContour, StimulusSpec, SynthesisMode};
use crate::units::FormantPoint;
use crate::{Error, Waveform};

/// Samples at or above this magnitude count as clipped.
pub const CLIP_LEVEL: f64 = 0.999;
/// Frames quieter than this fraction of the loudest are passed through.
const QUIET_FRAME: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ResynthesisPlan {
    pub base_token: Waveform,
    /// Measured formants of the base token.
    pub base_point: FormantPoint,
    /// Mean f0 of the base token, Hz.
    pub base_f0: f64,
    pub lpc_order: usize,
    /// Effective Gaussian window, seconds.
    pub window: f64,
    pub time_step: f64,
    pub f1_step: f64,
    pub f2_step: f64,
    /// Inclusive range of stimulus indices; index 1 is the unmodified token.
    pub index_range: (i32, i32),
    pub sample_rate: f64,
    pub pre_emphasis_hz: f64,
}

impl ResynthesisPlan {
    pub fn validate(&self) -> Result<(), Error> {
        if self.lpc_order < 8 || !self.lpc_order.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "LPC order must be even and at least 8, got {}",
                self.lpc_order
            )));
        }
        if !(self.window > self.time_step && self.time_step > 0.0) {
            return Err(Error::InvalidArgument("need window > time_step > 0".into()));
        }
        let (lo, hi) = self.index_range;
        if !(lo <= 1 && 1 <= hi) {
            return Err(Error::InvalidArgument(format!(
                "index range [{lo}, {hi}] must contain 1"
            )));
        }
        if self.base_token.is_empty() {
            return Err(Error::InvalidArgument("empty base token".into()));
        }
        Ok(())
    }

    pub fn indices(&self) -> impl Iterator<Item = i32> {
        self.index_range.0..=self.index_range.1
    }

    pub fn shift(&self, index: i32) -> (f64, f64) {
        let k = (index - 1) as f64;
        (k * self.f1_step, k * self.f2_step)
    }

    /// Intended formants of stimulus `index`.
    pub fn target(&self, index: i32) -> Result<FormantPoint, Error> {
        let (d1, d2) = self.shift(index);
        FormantPoint::new(self.base_point.f1() + d1, self.base_point.f2() + d2)
    }
}

/// Settings for planning a series, apart from the tokens themselves.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ResynthesisSettings {
    pub steps_between: u32,
    pub index_range: (i32, i32),
    pub lpc_order: usize,
    pub window: f64,
    pub time_step: f64,
    pub sample_rate: f64,
    pub pre_emphasis_hz: f64,
}

impl Default for ResynthesisSettings {
    fn default() -> Self {
        Self {
            steps_between: 10,
            index_range: (-1, 12),
            lpc_order: 12,
            window: 0.025,
            time_step: 0.010,
            sample_rate: 11025.0,
            pre_emphasis_hz: 50.0,
        }
    }
}

/// Per-step formant change from one word's mean to the other's, divided
/// into `steps_between` steps. Signs are preserved.
pub fn step_sizes(
    from: FormantPoint,
    to: FormantPoint,
    steps_between: u32,
) -> Result<(f64, f64), Error> {
    if steps_between == 0 {
        return Err(Error::InvalidArgument("steps_between must be positive".into()));
    }
    let (d1, d2) = (to.f1() - from.f1(), to.f2() - from.f2());
    if d1 == 0.0 && d2 == 0.0 {
        return Err(Error::InvalidArgument(
            "the two words have identical mean formants".into(),
        ));
    }
    let n = steps_between as f64;
    Ok((d1 / n, d2 / n))
}

fn mean_point(tokens: &[Waveform], cfg: &AnalysisConfig) -> Result<FormantPoint, Error> {
    if tokens.is_empty() {
        return Err(Error::InsufficientData("no tokens for a word".into()));
    }
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for t in tokens {
        let m = measure_token(t, cfg)?;
        s1 += m.point.f1();
        s2 += m.point.f2();
    }
    let n = tokens.len() as f64;
    FormantPoint::new(s1 / n, s2 / n)
}

pub fn is_clipped(token: &Waveform) -> bool {
    token.samples.iter().any(|s| s.abs() >= CLIP_LEVEL)
}

/// Mean height in dB of the F1, F2 and F3 envelope peaks above the lower of
/// their neighbouring valleys, from a frame at the middle of the token.
pub fn formant_prominence(token: &Waveform, formants: &FormantConfig) -> Option<f64> {
    let (x, fs) = prepare(token, formants);
    let n = libm::round(2.0 * formants.window * fs) as usize;
    if x.len() < n {
        return None;
    }
    let start = (x.len() - n) / 2;
    let win = window::gaussian(n);
    let frame: Vec<f64> = (0..n).map(|i| x[start + i] * win[i]).collect();
    let lpc = burg(&frame, formants.lpc_order)?;
    let nyquist = fs / 2.0;
    let peaks: Vec<f64> = resonances(&lpc.roots(), fs)
        .into_iter()
        .filter(|r| {
            r.bandwidth < formants.max_bandwidth
                && r.frequency > formants.min_frequency
                && r.frequency < nyquist - formants.nyquist_margin
        })
        .map(|r| r.frequency)
        .take(3)
        .collect();
    if peaks.len() < 3 {
        return None;
    }
    let valley = |a: f64, b: f64| {
        (0..=50)
            .map(|i| lpc.envelope_db(a + (b - a) * i as f64 / 50.0, fs))
            .fold(f64::MAX, f64::min)
    };
    let mut total = 0.0;
    for (i, &f) in peaks.iter().enumerate() {
        let left = if i == 0 { 0.0 } else { peaks[i - 1] };
        let right = if i + 1 < peaks.len() { peaks[i + 1] } else { nyquist };
        let floor = valley(left, f).max(valley(f, right));
        total += (lpc.envelope_db(f, fs) - floor).max(0.0);
    }
    Some(total / peaks.len() as f64)
}

/// Index of the most robust token: clipped tokens are rejected, then the
/// token maximizing duration times mean F1-F3 prominence wins.
pub fn select_base_token(tokens: &[Waveform], formants: &FormantConfig) -> Result<usize, Error> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty() && !is_clipped(t))
        .filter_map(|(i, t)| formant_prominence(t, formants).map(|p| (i, t.duration() * p)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InsufficientData("no unclipped analysable base token".into()))
}

/// Plans a series from tokens of the two words.
pub fn plan_resynthesis(
    hid_tokens: &[Waveform],
    head_tokens: &[Waveform],
    settings: &ResynthesisSettings,
    analysis: &AnalysisConfig,
) -> Result<ResynthesisPlan, Error> {
    let hid = mean_point(hid_tokens, analysis)?;
    let head = mean_point(head_tokens, analysis)?;
    let (f1_step, f2_step) = step_sizes(hid, head, settings.steps_between)?;
    let base = select_base_token(hid_tokens, &analysis.formants)?;
    let base_token = hid_tokens[base].clone();
    let m = measure_token(&base_token, analysis)?;
    let base_f0 = track_pitch(&base_token, &analysis.pitch)
        .mean_f0()
        .or(m.f0)
        .ok_or(Error::Unvoiced)?;
    let plan = ResynthesisPlan {
        base_token,
        base_point: m.point,
        base_f0,
        lpc_order: settings.lpc_order,
        window: settings.window,
        time_step: settings.time_step,
        f1_step,
        f2_step,
        index_range: settings.index_range,
        sample_rate: settings.sample_rate,
        pre_emphasis_hz: settings.pre_emphasis_hz,
    };
    plan.validate()?;
    Ok(plan)
}

/// Per-frame analysis of the base token, shared by every series member.
struct FrameAnalysis {
    signal: Vec<f64>,
    fs: f64,
    /// Frame centre sample and LPC filter; `None` marks pass-through.
    frames: Vec<(usize, Option<LpcFrame>)>,
}

fn analyse(plan: &ResynthesisPlan) -> Result<FrameAnalysis, Error> {
    let fs = plan.sample_rate;
    let mut signal = if plan.base_token.sample_rate == fs {
        plan.base_token.samples.clone()
    } else {
        resample(&plan.base_token.samples, plan.base_token.sample_rate, fs)
    };
    let k = pre_emphasis_coefficient(plan.pre_emphasis_hz, fs);
    for i in (1..signal.len()).rev() {
        signal[i] -= k * signal[i - 1];
    }
    let n = libm::round(2.0 * plan.window * fs) as usize;
    let hop = libm::round(plan.time_step * fs) as usize;
    if n < plan.lpc_order + 2 || hop == 0 {
        return Err(Error::InvalidArgument("window too short for the LPC order".into()));
    }
    let win = window::gaussian(n);
    let mut frames = Vec::new();
    let mut centre = hop / 2;
    while centre < signal.len() {
        let frame: Vec<f64> = (0..n)
            .map(|i| {
                let j = centre as isize - (n / 2) as isize + i as isize;
                if j >= 0 && (j as usize) < signal.len() {
                    signal[j as usize] * win[i]
                } else {
                    0.0
                }
            })
            .collect();
        frames.push((centre, burg(&frame, plan.lpc_order)));
        centre += hop;
    }
    let loudest = frames
        .iter()
        .filter_map(|(_, f)| f.as_ref().map(|f| f.energy))
        .fold(0.0, f64::max);
    if loudest <= 0.0 {
        return Err(Error::EmptyTrack("base token is silent"));
    }
    for (_, f) in frames.iter_mut() {
        if f.as_ref().is_some_and(|f| f.energy < QUIET_FRAME * loudest) {
            *f = None;
        }
    }
    Ok(FrameAnalysis { signal, fs, frames })
}

const MIN_FORMANT_HZ: f64 = 90.0;
const MAX_FORMANT_BANDWIDTH: f64 = 700.0;
const NYQUIST_MARGIN: f64 = 50.0;

/// Moves the lowest two formant pole pairs of `lpc` by `(d1, d2)` Hz.
fn shift_filter(lpc: &LpcFrame, d1: f64, d2: f64, fs: f64, time: f64) -> Result<LpcFrame, Error> {
    if d1 == 0.0 && d2 == 0.0 {
        return Ok(lpc.clone());
    }
    let nyquist = fs / 2.0;
    let mut roots = lpc.roots();
    let mut candidates: Vec<(usize, Resonance)> = roots
        .iter()
        .enumerate()
        .filter(|(_, z)| z.im > 0.0)
        .map(|(i, &z)| (i, Resonance::from_root(z, fs)))
        .filter(|(_, r)| {
            r.bandwidth < MAX_FORMANT_BANDWIDTH
                && r.frequency > MIN_FORMANT_HZ
                && r.frequency < nyquist - NYQUIST_MARGIN
        })
        .collect();
    candidates.sort_by(|a, b| a.1.frequency.total_cmp(&b.1.frequency));
    let [(i1, r1), (i2, r2), ..] = candidates.as_slice() else {
        return Err(Error::Resynthesis {
            time,
            reason: "fewer than two formants in frame",
        });
    };
    let f1 = r1.frequency + d1;
    let f2 = r2.frequency + d2;
    if f1 >= f2 {
        return Err(Error::Resynthesis {
            time,
            reason: "shifted F1 reaches shifted F2",
        });
    }
    if f1 <= MIN_FORMANT_HZ || f2 >= nyquist - NYQUIST_MARGIN {
        return Err(Error::Resynthesis {
            time,
            reason: "shifted formant outside the analysable range",
        });
    }
    let mut place = |i: usize, r: Resonance, f: f64| {
        let z = Resonance { frequency: f, ..r }.to_root(fs);
        let conj_index = roots
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .min_by(|a, b| (a.1 - roots[i].conj()).norm().total_cmp(&(b.1 - roots[i].conj()).norm()))
            .map(|(j, _)| j);
        roots[i] = z;
        if let Some(j) = conj_index {
            roots[j] = z.conj();
        }
    };
    place(*i1, *r1, f1);
    place(*i2, *r2, f2);
    let mut shifted = LpcFrame::from_roots(&roots, lpc.energy, lpc.residual);
    // the rebuilt polynomial is real up to rounding
    shifted.coefficients[0] = 1.0;
    Ok(shifted)
}

/// Renders one member of the series from a shared analysis.
fn render(analysis: &FrameAnalysis, plan: &ResynthesisPlan, index: i32) -> Result<Waveform, Error> {
    let (d1, d2) = plan.shift(index);
    let fs = analysis.fs;
    let x = &analysis.signal;
    let order = plan.lpc_order;
    let mut y = vec![0.0; x.len()];
    let hop = libm::round(plan.time_step * fs) as usize;
    for (k, (centre, lpc)) in analysis.frames.iter().enumerate() {
        let start = if k == 0 { 0 } else { centre - hop / 2 };
        let end = if k + 1 == analysis.frames.len() {
            x.len()
        } else {
            centre + hop - hop / 2
        };
        let (a, b): (Vec<f64>, Vec<f64>) = match lpc {
            Some(lpc) => {
                let shifted = shift_filter(lpc, d1, d2, fs, *centre as f64 / fs)?;
                (lpc.coefficients.clone(), shifted.coefficients)
            }
            None => {
                let id = LpcFrame::identity(order).coefficients;
                (id.clone(), id)
            }
        };
        for n in start..end {
            let mut e = 0.0;
            for (j, &aj) in a.iter().enumerate().take(n + 1) {
                e += aj * x[n - j];
            }
            let mut v = e;
            for (j, &bj) in b.iter().enumerate().skip(1).take(n) {
                v -= bj * y[n - j];
            }
            y[n] = v;
        }
    }
    let k = pre_emphasis_coefficient(plan.pre_emphasis_hz, fs);
    for i in 1..y.len() {
        y[i] += k * y[i - 1];
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Resynthesis {
            time: 0.0,
            reason: "unstable synthesis filter",
        });
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target_peak = plan.base_token.peak().min(0.95);
    if peak > 0.0 {
        let g = target_peak / peak;
        y.iter_mut().for_each(|v| *v *= g);
    }
    Ok(Waveform::new(y, fs))
}

/// Resynthesizes stimulus `index` alone.
pub fn resynthesize(plan: &ResynthesisPlan, index: i32) -> Result<Waveform, Error> {
    plan.validate()?;
    render(&analyse(plan)?, plan, index)
}

/// Resynthesizes every index in the plan's range.
pub fn resynthesize_series(plan: &ResynthesisPlan) -> Result<Continuum, Error> {
    plan.validate()?;
    let analysis = analyse(plan)?;
    let duration = plan.base_token.duration();
    let mut stimuli = Vec::new();
    let mut audio = Vec::new();
    for index in plan.indices() {
        audio.push(render(&analysis, plan, index)?);
        stimuli.push(StimulusSpec {
            id: index,
            target: plan.target(index)?,
            duration,
            f0: PitchContour::flat(plan.base_f0),
        });
    }
    Ok(Continuum {
        stimuli,
        mode: SynthesisMode::Resynthesis,
        audio,
    })
}

/// Round-trip verdict on a resynthesized series.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeriesCheck {
    /// Re-measured formants per index.
    pub measured: Vec<(i32, FormantPoint)>,
    pub identity_ok: bool,
    pub f1_monotone: bool,
    pub f2_monotone: bool,
    /// Least-squares slope of realized against planned shift.
    pub f1_gain: f64,
    pub f2_gain: f64,
    /// Indices whose realized shift misses the plan by more than the
    /// tolerance. Reported, but not failures by themselves.
    pub f1_misses: Vec<i32>,
    pub f2_misses: Vec<i32>,
    pub failures: Vec<alloc::string::String>,
}

impl SeriesCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Extraction tolerance for round-trip checks, Hz.
pub const ROUND_TRIP_TOLERANCE: (f64, f64) = (20.0, 50.0);
/// Accepted range of realized-to-planned shift slope.
pub const GAIN_RANGE: (f64, f64) = (0.75, 1.25);

fn slope_through_origin(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (sxy, sxx) = pairs.fold((0.0, 0.0), |(sxy, sxx), (x, y)| (sxy + x * y, sxx + x * x));
    if sxx > 0.0 {
        sxy / sxx
    } else {
        f64::NAN
    }
}

/// Compares re-measured formants with the plan.
///
/// A series fails when index 1 does not reproduce the base formants, when
/// F1 or F2 moves against its step by more than the tolerance between
/// neighbours, or when the realized shifts, regressed on the planned ones,
/// have a slope outside [`GAIN_RANGE`]. The slope test catches a formant
/// that never moves, which a monotonicity test alone would accept.
pub fn check_series(
    measured: &[(i32, FormantPoint)],
    base_point: FormantPoint,
    steps: (f64, f64),
    tolerance: (f64, f64),
) -> SeriesCheck {
    let shift = |i: i32| ((i - 1) as f64 * steps.0, (i - 1) as f64 * steps.1);
    let mut failures = Vec::new();
    let mut sorted = measured.to_vec();
    sorted.sort_by_key(|(i, _)| *i);
    let reference = sorted.iter().find(|(i, _)| *i == 1).map(|(_, p)| *p);
    let identity_ok = reference.is_some_and(|p| {
        (p.f1() - base_point.f1()).abs() <= tolerance.0
            && (p.f2() - base_point.f2()).abs() <= tolerance.1
    });
    if !identity_ok {
        failures.push("unshifted stimulus does not reproduce the base formants".into());
    }
    let monotone = |get: fn(&FormantPoint) -> f64, step: f64, tol: f64| {
        let sign = if step >= 0.0 { 1.0 } else { -1.0 };
        sorted
            .windows(2)
            .all(|w| sign * (get(&w[1].1) - get(&w[0].1)) >= -tol)
    };
    let f1_monotone = monotone(FormantPoint::f1, steps.0, tolerance.0);
    let f2_monotone = monotone(FormantPoint::f2, steps.1, tolerance.1);
    if !f1_monotone {
        failures.push("F1 does not move monotonically along the series".into());
    }
    if !f2_monotone {
        failures.push("F2 does not move monotonically along the series".into());
    }
    let base = reference.unwrap_or(base_point);
    let f1_gain = slope_through_origin(sorted.iter().map(|(i, p)| (shift(*i).0, p.f1() - base.f1())));
    let f2_gain = slope_through_origin(sorted.iter().map(|(i, p)| (shift(*i).1, p.f2() - base.f2())));
    let in_range = |g: f64| g >= GAIN_RANGE.0 && g <= GAIN_RANGE.1;
    if steps.0 != 0.0 && !in_range(f1_gain) {
        failures.push(format!("F1 shift not realized: gain {f1_gain:.2}"));
    }
    if steps.1 != 0.0 && !in_range(f2_gain) {
        failures.push(format!("F2 shift not realized: gain {f2_gain:.2}"));
    }
    let mut f1_misses = Vec::new();
    let mut f2_misses = Vec::new();
    for (i, p) in &sorted {
        let (d1, d2) = shift(*i);
        if ((p.f1() - base.f1()) - d1).abs() > tolerance.0 {
            f1_misses.push(*i);
        }
        if ((p.f2() - base.f2()) - d2).abs() > tolerance.1 {
            f2_misses.push(*i);
        }
    }
    SeriesCheck {
        measured: sorted,
        identity_ok,
        f1_monotone,
        f2_monotone,
        f1_gain,
        f2_gain,
        f1_misses,
        f2_misses,
        failures,
    }
}

/// Re-measures every token of a series and checks it against the plan.
pub fn verify_series(
    series: &Continuum,
    plan: &ResynthesisPlan,
    analysis: &AnalysisConfig,
) -> Result<SeriesCheck, Error> {
    let measured = series
        .stimuli
        .iter()
        .zip(&series.audio)
        .map(|(s, a)| measure_token(a, analysis).map(|m| (s.id, m.point)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(check_series(
        &measured,
        plan.base_point,
        (plan.f1_step, plan.f2_step),
        ROUND_TRIP_TOLERANCE,
    ))
}
