//! Experiment configuration.
//!
//! Configs are JSON. Every field except `name`, `mode` and `groups` has a
//! default, and [`ExperimentConfig::resolve`] fills in everything that is
//! derived (cohort expansion, subject seeds) so the resolved form can be
//! echoed into the run manifest and rerun verbatim.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use jpd_core::analysis::AnalysisConfig;
use jpd_core::psychometrics::{Aggregation, DifferenceRule, FitOptions};
use jpd_core::resynth::ResynthesisSettings;
use jpd_core::rng::derive_seed;
use jpd_core::simulator::SubjectProfile;
use jpd_core::staircase::StaircaseConfig;
use jpd_core::synth::{PitchContour, SynthParams};
use jpd_core::FormantPoint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exp1Parametric,
    Exp2Resynthesis,
}

/// Where a group's stimuli come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContinuumSource {
    Parametric {
        endpoints: [FormantPoint; 2],
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_duration")]
        duration: f64,
        #[serde(default = "default_f0")]
        f0: PitchContour,
    },
    Resynthesis {
        hid: TokenSource,
        head: TokenSource,
        #[serde(default)]
        settings: ResynthesisSettings,
    },
}

/// Recorded or synthesized tokens of one word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TokenSource {
    /// WAV files. Relative paths are taken from the config file's directory.
    Files { paths: Vec<PathBuf> },
    /// Tokens rendered by the parametric synthesizer around `target`, each
    /// with uniform formant jitter of up to `jitter_hz`.
    Synthetic {
        target: FormantPoint,
        f0: f64,
        #[serde(default = "default_token_count")]
        count: usize,
        /// Shortest and longest duration, spread evenly across the tokens.
        #[serde(default = "default_token_durations")]
        durations: (f64, f64),
        #[serde(default)]
        jitter_hz: (f64, f64),
    },
}

/// A generated set of subjects sharing one template profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cohort {
    pub count: u32,
    /// Boundaries are spread evenly over this interval, first to last.
    pub boundary_range: (f64, f64),
    /// Cycled over the subjects in order.
    #[serde(default = "default_weights")]
    pub category_weights: Vec<f64>,
    #[serde(default)]
    pub template: SubjectProfile,
    #[serde(default = "default_first_id")]
    pub first_id: u32,
}

impl Cohort {
    pub fn expand(&self) -> Result<Vec<SubjectProfile>> {
        if self.count == 0 {
            return Err(Error::Config("cohort count must be at least 1".into()));
        }
        if self.category_weights.is_empty() {
            return Err(Error::Config("cohort needs at least one category weight".into()));
        }
        let (lo, hi) = self.boundary_range;
        Ok((0..self.count)
            .map(|i| {
                let t = if self.count > 1 {
                    i as f64 / (self.count - 1) as f64
                } else {
                    0.5
                };
                SubjectProfile {
                    id: self.first_id + i,
                    boundary_stim: lo + (hi - lo) * t,
                    category_weight: self.category_weights[i as usize % self.category_weights.len()],
                    ..self.template.clone()
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    pub continuum: ContinuumSource,
    #[serde(default)]
    pub subjects: Vec<SubjectProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<Cohort>,
}

/// Which references should carry the largest and the smallest limen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingCheck {
    pub prototype_refs: Vec<i32>,
    pub boundary_refs: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaircaseSetup {
    /// Defaults to the first group.
    pub group: Option<String>,
    pub reference_stim: i32,
    pub toward_stim: i32,
    pub target_p: f64,
    /// Same-stimulus difference rate assumed by the staircase. Defaults to
    /// the fixed fit floor.
    pub floor: Option<f64>,
    pub runs: usize,
    /// Restricts the search to these subjects; empty means all.
    pub subjects: Vec<u32>,
    pub procedure: StaircaseConfig,
}

impl Default for StaircaseSetup {
    fn default() -> Self {
        Self {
            group: None,
            reference_stim: 1,
            toward_stim: 9,
            target_p: 0.5,
            floor: None,
            runs: 8,
            subjects: Vec::new(),
            procedure: StaircaseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    /// Required unless responses come from recorded audio.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Mimicry repetitions per stimulus.
    #[serde(default = "default_reps")]
    pub reps: u32,
    #[serde(default = "default_reps")]
    pub categorization_reps: u32,
    pub groups: Vec<GroupConfig>,
    #[serde(default)]
    pub rule: DifferenceRule,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub synth: SynthParams,
    /// Render simulated productions to WAV and measure them like recordings.
    #[serde(default)]
    pub render_responses: bool,
    /// Directory holding `tokens.csv` and recorded response WAVs. Replaces
    /// simulation.
    #[serde(default)]
    pub response_audio: Option<PathBuf>,
    /// References included in the summary bounds, inclusive.
    #[serde(default)]
    pub summary_range: Option<(i32, i32)>,
    #[serde(default)]
    pub ordering: Option<OrderingCheck>,
    #[serde(default)]
    pub staircase: Option<StaircaseSetup>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_n() -> usize {
    9
}
fn default_duration() -> f64 {
    0.25
}
fn default_f0() -> PitchContour {
    PitchContour::rise_fall(117.0)
}
fn default_token_count() -> usize {
    5
}
fn default_token_durations() -> (f64, f64) {
    (0.22, 0.30)
}
fn default_weights() -> Vec<f64> {
    vec![0.0]
}
fn default_first_id() -> u32 {
    1
}
fn default_reps() -> u32 {
    6
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

const BUNDLED: &[(&str, &str)] = &[
    ("exp1-reference", include_str!("../configs/exp1-reference.json")),
    ("exp2-reference", include_str!("../configs/exp2-reference.json")),
    ("identity", include_str!("../configs/identity.json")),
];

/// Names accepted by [`ExperimentConfig::bundled`] and by `builtin:NAME`.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            path: origin.to_path_buf(),
            source,
        })
    }

    /// One of the configs shipped with the toolkit.
    pub fn bundled(name: &str) -> Result<Self> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("no bundled config named {name:?}")))?;
        Self::from_json(text, Path::new(name))
    }

    /// Reads a config file, or a bundled config given as `builtin:NAME`.
    /// Relative token and audio paths are made relative to the file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(name) = spec.strip_prefix("builtin:") {
            return Self::bundled(name);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(dir) = self.response_audio.as_mut() {
            fix(dir);
        }
        for g in &mut self.groups {
            if let ContinuumSource::Resynthesis { hid, head, .. } = &mut g.continuum {
                for src in [hid, head] {
                    if let TokenSource::Files { paths } = src {
                        paths.iter_mut().for_each(fix);
                    }
                }
            }
        }
    }

    pub fn is_simulated(&self) -> bool {
        self.response_audio.is_none()
    }

    /// The run seed. Only recorded-audio runs may omit it.
    pub fn run_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Validates, expands cohorts and assigns subject seeds. Subject `id`
    /// gets seed `derive_seed(run_seed, id)`. Idempotent.
    pub fn resolve(mut self) -> Result<Self> {
        if self.is_simulated() && self.seed.is_none() {
            return Err(Error::Config("a seed is required for simulated runs".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Config("at least one group is required".into()));
        }
        if self.reps == 0 || self.categorization_reps == 0 {
            return Err(Error::Config("repetition counts must be at least 1".into()));
        }
        self.rule.validate()?;
        let seed = self.run_seed();
        let simulated = self.is_simulated();
        let mode = self.mode;
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for g in &mut self.groups {
            if !names.insert(g.name.clone()) {
                return Err(Error::Config(format!("duplicate group name {:?}", g.name)));
            }
            if g.name.is_empty() || g.name.contains(['/', '\\', ',']) {
                return Err(Error::Config(format!("invalid group name {:?}", g.name)));
            }
            match (&g.continuum, mode) {
                (ContinuumSource::Parametric { .. }, Mode::Exp1Parametric)
                | (ContinuumSource::Resynthesis { .. }, Mode::Exp2Resynthesis) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "group {:?} has a continuum kind that does not match mode {:?}",
                        g.name, mode
                    )))
                }
            }
            check_sources(&g.continuum)?;
            if let Some(c) = g.cohort.take() {
                g.subjects.extend(c.expand()?);
            }
            if simulated && g.subjects.is_empty() {
                return Err(Error::Config(format!("group {:?} has no subjects", g.name)));
            }
            for s in &mut g.subjects {
                if !ids.insert(s.id) {
                    return Err(Error::Config(format!("duplicate subject id {}", s.id)));
                }
                s.seed = derive_seed(seed, u64::from(s.id));
                s.validate()?;
            }
        }
        if let Some(dir) = &self.response_audio {
            let listing = dir.join(crate::tables::TOKEN_LISTING);
            if !listing.is_file() {
                return Err(Error::Config(format!(
                    "response audio listing {} does not exist",
                    listing.display()
                )));
            }
        }
        if let Some(st) = &self.staircase {
            if let Some(g) = &st.group {
                if !names.contains(g) {
                    return Err(Error::Config(format!("staircase group {g:?} is not defined")));
                }
            }
            if st.runs == 0 {
                return Err(Error::Config("staircase runs must be at least 1".into()));
            }
        }
        if let Some((lo, hi)) = self.summary_range {
            if lo > hi {
                return Err(Error::Config(format!("empty summary range [{lo}, {hi}]")));
            }
        }
        Ok(self)
    }

    pub fn group(&self, name: &str) -> Option<&GroupConfig> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Group of a subject id.
    pub fn group_of(&self, subject: u32) -> Option<&GroupConfig> {
        self.groups
            .iter()
            .find(|g| g.subjects.iter().any(|s| s.id == subject))
    }
}

fn check_sources(src: &ContinuumSource) -> Result<()> {
    if let ContinuumSource::Resynthesis { hid, head, .. } = src {
        for t in [hid, head] {
            match t {
                TokenSource::Files { paths } => {
                    if paths.is_empty() {
                        return Err(Error::Config("token list is empty".into()));
                    }
                    if let Some(p) = paths.iter().find(|p| !p.is_file()) {
                        return Err(Error::Config(format!(
                            "token file {} does not exist",
                            p.display()
                        )));
                    }
                }
                TokenSource::Synthetic { count, f0, .. } => {
                    if *count == 0 || f0.is_nan() || *f0 <= 0.0 {
                        return Err(Error::Config(
                            "synthetic tokens need a positive count and f0".into(),
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}
