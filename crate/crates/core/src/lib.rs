//! Core algorithms for measuring Just Producible Difference (JPD) limens.
//!
//! A JPD is the smallest distance in auditory (mel) space between two vowel
//! stimuli whose mimicked productions are reliably different. This crate
//! holds everything that is pure computation:
//!
//! * [`units`]: mel scale, formant points and distances.
//! * [`synth`]: cascade formant synthesis of mel-spaced vowel continua.
//! * [`analysis`]: Burg LPC formant tracking, voicing onset, f0, and the
//!   tenth-vocal-period measurement convention.
//! * [`resynth`]: source-filter resynthesis with shifted formants.
//! * [`simulator`]: stochastic mimicry subjects with known ground truth.
//! * [`psychometrics`]: pairwise difference tables and floor-corrected
//!   probit fitting.
//! * [`staircase`]: adaptive step-size search for the same limen.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! the pipeline driver live in the `jpd` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod dsp;
mod error;
pub mod normal;
pub mod psychometrics;
pub mod resynth;
pub mod rng;
pub mod simulator;
pub mod staircase;
pub mod synth;
pub mod units;

pub use crate::error::Error;
pub use crate::units::{
    hz_to_mel, mel_distance, mel_to_hz, FormantPoint, FrequencyHz, FrequencyMel, MelDistance,
    MelPoint,
};

/// Mono PCM audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: alloc::vec::Vec<f64>,
    pub sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: alloc::vec::Vec<f64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
