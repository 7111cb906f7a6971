//! Adaptive step-size search for the distance at which a subject's
//! productions of a reference and a comparison differ with a target
//! probability.
//!
//! Each trial presents the reference and a comparison `distance` mels away
//! along a fixed direction, simulates one production of each and applies
//! the difference rule. A "different" outcome moves the comparison closer
//! by one down-step and a "same" outcome moves it away by one up-step, with
//! `up / down = p / (1 - p)` so that the track settles where
//! `P(different) = p`. For `p = 0.5` this is the plain 1-up/1-down rule.

use alloc::format;
use alloc::vec::Vec;

use crate::psychometrics::DifferenceRule;
use crate::rng::{stream_rng, trial_stream};
use crate::simulator::{respond_with_rng, Stimulus, SubjectProfile};
use crate::units::{FormantPoint, MelDistance, MelPoint};
use crate::Error;

const PURPOSE_STAIRCASE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct StaircaseConfig {
    /// Initial comparison distance, mels.
    pub start_distance: f64,
    /// Initial down-step, mels.
    pub initial_step: f64,
    /// Steps are halved on each reversal but never below this.
    pub min_step: f64,
    pub reversals: usize,
    /// Reversal distances averaged for the estimate.
    pub average_last: usize,
    pub max_trials: usize,
    /// Independent seed for the staircase's own trial streams.
    pub seed: u64,
}

impl Default for StaircaseConfig {
    fn default() -> Self {
        Self {
            start_distance: 80.0,
            initial_step: 16.0,
            min_step: 4.0,
            reversals: 12,
            average_last: 6,
            max_trials: 400,
            seed: 0,
        }
    }
}

/// Where the staircase runs: a reference stimulus, a direction in mel space
/// and the mels spanned by one unit of stimulus coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub reference: Stimulus,
    pub direction: MelPoint,
    pub mels_per_position: f64,
}

impl Probe {
    /// A probe from `reference` toward `toward`, with stimulus coordinates
    /// scaled so that `toward` sits at `toward_position`.
    pub fn between(reference: Stimulus, toward: Stimulus) -> Result<Self, Error> {
        let (a, b) = (reference.target.to_mel(), toward.target.to_mel());
        let length = a.distance(b);
        let span = toward.position - reference.position;
        if length <= 0.0 || span == 0.0 {
            return Err(Error::InvalidArgument(
                "probe endpoints must differ in target and position".into(),
            ));
        }
        Ok(Self {
            reference,
            direction: MelPoint::new((b.m1 - a.m1) / length, (b.m2 - a.m2) / length),
            mels_per_position: length / span,
        })
    }

    /// The comparison stimulus `distance` mels from the reference.
    pub fn comparison(&self, distance: f64) -> Result<Stimulus, Error> {
        let target: FormantPoint = self
            .reference
            .target
            .to_mel()
            .offset(self.direction, distance)
            .to_formants()?;
        Ok(Stimulus {
            id: self.reference.id,
            position: self.reference.position + distance / self.mels_per_position,
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StaircaseResult {
    pub distance: MelDistance,
    /// False when the trial limit was hit before enough reversals.
    pub converged: bool,
    pub n_trials: usize,
    pub reversal_distances: Vec<f64>,
    /// Comparison distance on every trial.
    pub track: Vec<f64>,
}

/// Runs one staircase.
///
/// `floor` is the same-stimulus probability of a "different" outcome for
/// this subject and rule; a target at or below it can never be reached.
pub fn adaptive_step_search(
    profile: &SubjectProfile,
    probe: &Probe,
    rule: &DifferenceRule,
    target_p: f64,
    floor: f64,
    cfg: &StaircaseConfig,
) -> Result<StaircaseResult, Error> {
    profile.validate()?;
    rule.validate()?;
    if !(target_p > floor && target_p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target probability {target_p} must lie in ({floor}, 1)"
        )));
    }
    if !(cfg.initial_step > 0.0 && cfg.min_step > 0.0 && cfg.start_distance >= 0.0) {
        return Err(Error::InvalidArgument("staircase steps must be positive".into()));
    }
    if cfg.average_last == 0 || cfg.average_last > cfg.reversals {
        return Err(Error::InvalidArgument(
            "average_last must lie in [1, reversals]".into(),
        ));
    }
    let up_ratio = target_p / (1.0 - target_p);
    let reference_target = probe.reference.target;

    let mut distance = cfg.start_distance;
    let mut step = cfg.initial_step;
    let mut last_direction: Option<bool> = None;
    let mut reversal_distances = Vec::new();
    let mut track = Vec::new();

    for trial in 0..cfg.max_trials {
        track.push(distance);
        let comparison = probe.comparison(distance)?;
        let mut rng = stream_rng(
            cfg.seed ^ profile.seed,
            trial_stream(PURPOSE_STAIRCASE, trial as i32, 0),
        );
        let a = respond_with_rng(profile, &probe.reference, &mut rng);
        let b = respond_with_rng(profile, &comparison, &mut rng);
        let different = rule.differs(
            (b.f1() - a.f1(), b.f2() - a.f2()),
            (
                comparison.target.f1() - reference_target.f1(),
                comparison.target.f2() - reference_target.f2(),
            ),
        );
        // true = moving closer
        if let Some(previous) = last_direction {
            if previous != different {
                reversal_distances.push(distance);
                step = (0.5 * step).max(cfg.min_step);
            }
        }
        last_direction = Some(different);
        if reversal_distances.len() >= cfg.reversals {
            let tail = &reversal_distances[reversal_distances.len() - cfg.average_last..];
            let mean = tail.iter().sum::<f64>() / tail.len() as f64;
            return Ok(StaircaseResult {
                distance: MelDistance::new(mean.max(0.0))?,
                converged: true,
                n_trials: trial + 1,
                reversal_distances,
                track,
            });
        }
        distance = if different {
            (distance - step).max(0.0)
        } else {
            distance + step * up_ratio
        };
    }

    let tail_len = cfg.average_last.min(reversal_distances.len());
    let estimate = if tail_len == 0 {
        distance
    } else {
        let tail = &reversal_distances[reversal_distances.len() - tail_len..];
        tail.iter().sum::<f64>() / tail_len as f64
    };
    Ok(StaircaseResult {
        distance: MelDistance::new(estimate.max(0.0))?,
        converged: false,
        n_trials: cfg.max_trials,
        reversal_distances,
        track,
    })
}

/// Mean of several independent staircases on the same probe, each with its
/// own derived seed.
pub fn repeated_search(
    profile: &SubjectProfile,
    probe: &Probe,
    rule: &DifferenceRule,
    target_p: f64,
    floor: f64,
    cfg: &StaircaseConfig,
    runs: usize,
) -> Result<(f64, Vec<StaircaseResult>), Error> {
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one run required".into()));
    }
    let results = (0..runs)
        .map(|i| {
            let run_cfg = StaircaseConfig {
                seed: crate::rng::derive_seed(cfg.seed, i as u64),
                ..*cfg
            };
            adaptive_step_search(profile, probe, rule, target_p, floor, &run_cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean = results.iter().map(|r| r.distance.value()).sum::<f64>() / runs as f64;
    Ok((mean, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;
    use crate::simulator::ProductionNoise;

    fn stim(id: i32, f1: f64, f2: f64) -> Stimulus {
        Stimulus {
            id,
            position: id as f64,
            target: FormantPoint::new(f1, f2).unwrap(),
        }
    }

    fn probe() -> Probe {
        Probe::between(stim(1, 270.0, 2290.0), stim(9, 390.0, 1990.0)).unwrap()
    }

    /// P(different) for a noise-only subject at distance `d`.
    fn analytic_p(probe: &Probe, d: f64, sigma: ProductionNoise, rule: &DifferenceRule) -> f64 {
        let c = probe.comparison(d).unwrap().target;
        let r = probe.reference.target;
        let within = |delta: f64, t: f64, s: f64| {
            let sd = s * core::f64::consts::SQRT_2;
            normal::cdf((t - delta) / sd) - normal::cdf((-t - delta) / sd)
        };
        1.0 - within(c.f1() - r.f1(), rule.f1_threshold, sigma.f1)
            * within(c.f2() - r.f2(), rule.f2_threshold, sigma.f2)
    }

    fn analytic_threshold(probe: &Probe, target: f64, sigma: ProductionNoise, rule: &DifferenceRule) -> f64 {
        let (mut lo, mut hi) = (0.0, 400.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if analytic_p(probe, mid, sigma, rule) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn probe_geometry() {
        let p = probe();
        assert!((p.direction.m1.hypot(p.direction.m2) - 1.0).abs() < 1e-12);
        let end = p.comparison(8.0 * p.mels_per_position).unwrap();
        assert!((end.target.f1() - 390.0).abs() < 1e-6);
        assert!((end.position - 9.0).abs() < 1e-9);
    }

    #[test]
    fn noise_only_subject_matches_closed_form() {
        let profile = SubjectProfile {
            seed: 12,
            ..SubjectProfile::default()
        };
        let rule = DifferenceRule::default();
        let p = probe();
        let floor = analytic_p(&p, 0.0, profile.production_noise, &rule);
        let expected = analytic_threshold(&p, 0.5, profile.production_noise, &rule);
        let (mean, runs) = repeated_search(
            &profile,
            &p,
            &rule,
            0.5,
            floor,
            &StaircaseConfig { seed: 3, ..StaircaseConfig::default() },
            12,
        )
        .unwrap();
        assert!(runs.iter().all(|r| r.converged));
        assert!(
            (mean - expected).abs() / expected < 0.15,
            "staircase {mean} vs analytic {expected}"
        );
    }

    #[test]
    fn weighted_steps_track_other_targets() {
        let profile = SubjectProfile { seed: 5, ..SubjectProfile::default() };
        let rule = DifferenceRule::default();
        let p = probe();
        let floor = analytic_p(&p, 0.0, profile.production_noise, &rule);
        let expected = analytic_threshold(&p, 0.75, profile.production_noise, &rule);
        let cfg = StaircaseConfig { seed: 8, ..StaircaseConfig::default() };
        let (mean, _) = repeated_search(&profile, &p, &rule, 0.75, floor, &cfg, 12).unwrap();
        assert!((mean - expected).abs() / expected < 0.15, "{mean} vs {expected}");
    }

    #[test]
    fn target_at_or_below_floor_is_rejected() {
        let profile = SubjectProfile::default();
        let rule = DifferenceRule::default();
        let cfg = StaircaseConfig::default();
        assert!(adaptive_step_search(&profile, &probe(), &rule, 0.1, 0.1, &cfg).is_err());
        assert!(adaptive_step_search(&profile, &probe(), &rule, 0.05, 0.1, &cfg).is_err());
        assert!(adaptive_step_search(&profile, &probe(), &rule, 1.0, 0.1, &cfg).is_err());
    }

    #[test]
    fn trial_limit_is_flagged() {
        let profile = SubjectProfile::default();
        let cfg = StaircaseConfig {
            max_trials: 5,
            ..StaircaseConfig::default()
        };
        let r = adaptive_step_search(&profile, &probe(), &DifferenceRule::default(), 0.5, 0.1, &cfg)
            .unwrap();
        assert!(!r.converged);
        assert_eq!(r.n_trials, 5);
    }

    #[test]
    fn staircase_is_reproducible() {
        let profile = SubjectProfile { seed: 1, ..SubjectProfile::default() };
        let cfg = StaircaseConfig::default();
        let rule = DifferenceRule::default();
        let a = adaptive_step_search(&profile, &probe(), &rule, 0.5, 0.1, &cfg).unwrap();
        let b = adaptive_step_search(&profile, &probe(), &rule, 0.5, 0.1, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reversal_distances.len(), 12);
    }
}
