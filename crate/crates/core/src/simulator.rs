//! Simulated mimicry subjects.
//!
//! A subject maps a heard stimulus `S` to a produced vowel `R`:
//!
//! 1. The stimulus is assigned a category, either deterministically by the
//!    subject's boundary or by sampling the categorization probit.
//! 2. The stimulus's deviation from the centre of the two prototypes is
//!    scaled by `tracking_gain`. A gain above one exaggerates differences.
//! 3. The result is pulled toward the category prototype by
//!    `warp_strength`, then blended with the pure prototype by
//!    `category_weight`. Both steps are linear in mel space.
//! 4. Independent Gaussian production noise is added in Hz.
//!
//! Each trial draws from its own counter-based stream keyed by subject
//! seed, stimulus and repetition.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::normal;
use crate::rng::{stream_rng, trial_stream};
use crate::synth::StimulusSpec;
use crate::units::{mel_to_hz, FormantPoint, MelPoint};
use crate::Error;

const PURPOSE_MIMIC: u8 = 1;
const PURPOSE_ORDER: u8 = 2;
const PURPOSE_CATEGORIZE: u8 = 3;
const MAX_REDRAWS: usize = 10;
/// Smallest F1, and smallest F1 to F2 gap, left after clamping.
const CLAMP_MARGIN_HZ: f64 = 1.0;

/// Standard deviations of production noise, Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProductionNoise {
    pub f1: f64,
    pub f2: f64,
}

impl ProductionNoise {
    /// Calibrated so that repeated productions of one stimulus are judged
    /// different about 10% of the time under the default difference rule.
    pub const CALIBRATED: ProductionNoise = ProductionNoise { f1: 29.0, f2: 58.0 };
    /// Effectively noiseless.
    pub const EPSILON: ProductionNoise = ProductionNoise { f1: 1e-9, f2: 1e-9 };
}

impl Default for ProductionNoise {
    fn default() -> Self {
        Self::CALIBRATED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CategoryAssignment {
    /// Stimuli above the boundary are always the upper category.
    Boundary,
    /// Each trial samples its category from the categorization probit.
    #[default]
    Sampled,
}

/// Parameters of one simulated subject.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SubjectProfile {
    pub id: u32,
    /// Stimulus coordinate at which both categories are equally likely.
    pub boundary_stim: f64,
    /// Probit slope per stimulus step.
    pub categorization_slope: f64,
    pub warp_strength: f64,
    /// Lower-category prototype first.
    pub prototypes: [FormantPoint; 2],
    pub category_weight: f64,
    pub tracking_gain: f64,
    pub production_noise: ProductionNoise,
    pub assignment: CategoryAssignment,
    pub seed: u64,
}

impl Default for SubjectProfile {
    fn default() -> Self {
        Self {
            id: 0,
            boundary_stim: 6.5,
            categorization_slope: 1.5,
            warp_strength: 0.0,
            prototypes: [
                FormantPoint::new(227.0, 2383.0).expect("valid prototype"),
                FormantPoint::new(433.0, 1886.0).expect("valid prototype"),
            ],
            category_weight: 0.0,
            tracking_gain: 1.0,
            production_noise: ProductionNoise::CALIBRATED,
            assignment: CategoryAssignment::Sampled,
            seed: 0,
        }
    }
}

impl SubjectProfile {
    /// A subject who reproduces every stimulus exactly.
    pub fn identity(id: u32, seed: u64) -> Self {
        Self {
            id,
            production_noise: ProductionNoise::EPSILON,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let problem = if !unit(self.warp_strength) {
            Some("warp_strength must lie in [0, 1]")
        } else if !unit(self.category_weight) {
            Some("category_weight must lie in [0, 1]")
        } else if !(self.production_noise.f1 > 0.0 && self.production_noise.f2 > 0.0) {
            Some("production noise must be positive")
        } else if !(self.categorization_slope > 0.0 && self.categorization_slope.is_finite()) {
            Some("categorization_slope must be positive")
        } else if !(self.tracking_gain > 0.0 && self.tracking_gain.is_finite()) {
            Some("tracking_gain must be positive")
        } else if !self.boundary_stim.is_finite() {
            Some("boundary_stim must be finite")
        } else {
            None
        };
        match problem {
            Some(p) => Err(Error::InvalidArgument(format!("subject {}: {p}", self.id))),
            None => Ok(()),
        }
    }

    fn centre(&self) -> MelPoint {
        self.prototypes[0].to_mel().lerp(self.prototypes[1].to_mel(), 0.5)
    }

    /// Noise-free production target in mel space for a stimulus assigned
    /// to `category`.
    pub fn production_target(&self, stimulus: &FormantPoint, category: usize) -> MelPoint {
        let c = self.centre();
        let s = stimulus.to_mel();
        let tracked = MelPoint::new(
            c.m1 + self.tracking_gain * (s.m1 - c.m1),
            c.m2 + self.tracking_gain * (s.m2 - c.m2),
        );
        let prototype = self.prototypes[category.min(1)].to_mel();
        tracked
            .lerp(prototype, self.warp_strength)
            .lerp(prototype, self.category_weight)
    }
}

/// A stimulus as presented to a subject. `position` is the real-valued
/// stimulus coordinate used for categorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stimulus {
    pub id: i32,
    pub position: f64,
    pub target: FormantPoint,
}

impl From<&StimulusSpec> for Stimulus {
    fn from(spec: &StimulusSpec) -> Self {
        Self {
            id: spec.id,
            position: spec.position(),
            target: spec.target,
        }
    }
}

/// One mimicked production.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MimicryResponse {
    pub subject: u32,
    pub stimulus_id: i32,
    pub repetition: u32,
    /// Zero-based presentation order within the block.
    pub order: u32,
    pub produced: FormantPoint,
}

/// A categorization judgement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Categorization {
    /// 0 for the lower category, 1 for the upper.
    pub category: usize,
    /// Probability of the upper category.
    pub p_upper: f64,
}

/// Probability that `position` is heard as the upper category.
pub fn p_upper(profile: &SubjectProfile, position: f64) -> f64 {
    normal::cdf(profile.categorization_slope * (position - profile.boundary_stim))
}

/// Samples a category label from the subject's probit.
pub fn categorize<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    position: f64,
    rng: &mut R,
) -> Categorization {
    let p = p_upper(profile, position);
    let u: f64 = rng.random();
    Categorization {
        category: usize::from(u < p),
        p_upper: p,
    }
}

fn assign<R: Rng + ?Sized>(profile: &SubjectProfile, position: f64, rng: &mut R) -> usize {
    match profile.assignment {
        CategoryAssignment::Boundary => usize::from(position > profile.boundary_stim),
        CategoryAssignment::Sampled => categorize(profile, position, rng).category,
    }
}

/// Adds production noise in Hz to a mel-space target, redrawing up to ten
/// times when the result violates `0 < F1 < F2`, then clamping.
fn add_noise<R: Rng + ?Sized>(target: MelPoint, noise: ProductionNoise, rng: &mut R) -> FormantPoint {
    let hz = |m: f64| {
        // mel_to_hz rejects negative mels; extend it as an odd function
        let v = mel_to_hz(m.abs()).map(|f| f.value()).unwrap_or(0.0);
        if m < 0.0 {
            -v
        } else {
            v
        }
    };
    let (h1, h2) = (hz(target.m1), hz(target.m2));
    let mut last = (h1, h2);
    for _ in 0..=MAX_REDRAWS {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        last = (h1 + noise.f1 * z1, h2 + noise.f2 * z2);
        if let Ok(p) = FormantPoint::new(last.0, last.1) {
            return p;
        }
    }
    let f1 = last.0.max(CLAMP_MARGIN_HZ);
    let f2 = last.1.max(f1 + CLAMP_MARGIN_HZ);
    FormantPoint::new(f1, f2).expect("clamped point is valid")
}

/// One production drawn from a caller-supplied generator.
pub fn respond_with_rng<R: Rng + ?Sized>(
    profile: &SubjectProfile,
    stimulus: &Stimulus,
    rng: &mut R,
) -> FormantPoint {
    let category = assign(profile, stimulus.position, rng);
    let target = profile.production_target(&stimulus.target, category);
    add_noise(target, profile.production_noise, rng)
}

/// The subject's production for one trial. Deterministic in
/// `(profile, stimulus.id, repetition)`.
pub fn respond(profile: &SubjectProfile, stimulus: &Stimulus, repetition: u32) -> MimicryResponse {
    let mut rng = stream_rng(
        profile.seed,
        trial_stream(PURPOSE_MIMIC, stimulus.id, repetition),
    );
    MimicryResponse {
        subject: profile.id,
        stimulus_id: stimulus.id,
        repetition,
        order: 0,
        produced: respond_with_rng(profile, stimulus, &mut rng),
    }
}

/// Every stimulus `reps` times in a seeded random order. Responses are
/// returned in presentation order.
pub fn run_block(
    profile: &SubjectProfile,
    stimuli: &[Stimulus],
    reps: u32,
) -> Result<Vec<MimicryResponse>, Error> {
    profile.validate()?;
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let mut trials: Vec<(usize, u32)> = (0..stimuli.len())
        .flat_map(|i| (0..reps).map(move |r| (i, r)))
        .collect();
    let mut rng = stream_rng(profile.seed, trial_stream(PURPOSE_ORDER, 0, 0));
    trials.shuffle(&mut rng);
    Ok(trials
        .into_iter()
        .enumerate()
        .map(|(order, (i, r))| MimicryResponse {
            order: order as u32,
            ..respond(profile, &stimuli[i], r)
        })
        .collect())
}

/// Per-stimulus categorization tallies.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CategoryCounts {
    pub stimulus_id: i32,
    pub position: f64,
    pub n: u32,
    pub n_upper: u32,
}

/// Simulated identification session: every stimulus judged `reps` times.
pub fn run_categorization(
    profile: &SubjectProfile,
    stimuli: &[Stimulus],
    reps: u32,
) -> Result<Vec<CategoryCounts>, Error> {
    profile.validate()?;
    Ok(stimuli
        .iter()
        .map(|s| {
            let n_upper = (0..reps)
                .filter(|&r| {
                    let mut rng =
                        stream_rng(profile.seed, trial_stream(PURPOSE_CATEGORIZE, s.id, r));
                    categorize(profile, s.position, &mut rng).category == 1
                })
                .count() as u32;
            CategoryCounts {
                stimulus_id: s.id,
                position: s.position,
                n: reps,
                n_upper,
            }
        })
        .collect())
}
