//! CSV and JSON intermediates.
//!
//! Every file a stage writes has a row type here, and the headers are the
//! field names. Missing numeric values (for example a limen of a degenerate
//! fit) are written as empty cells.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use jpd_core::psychometrics::{FitStatus, JpdEstimate};
use jpd_core::resynth::SeriesCheck;
use jpd_core::simulator::{MimicryResponse, SubjectProfile};
use jpd_core::synth::{PitchContour, StimulusSpec, SynthParams, SynthesisMode};
use jpd_core::{FormantPoint, MelPoint};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONTINUUM: &str = "continuum.json";
pub const SUBJECTS: &str = "subjects.csv";
pub const RESPONSES: &str = "responses.csv";
pub const RESPONSE_TOKENS: &str = "response_tokens.csv";
pub const REJECTED_TOKENS: &str = "rejected_tokens.csv";
pub const CATEGORIZATION: &str = "categorization.csv";
pub const CATEGORIZATION_FITS: &str = "categorization_fits.csv";
pub const STIMULUS_MEASUREMENTS: &str = "stimulus_measurements.csv";
pub const RESYNTHESIS_CHECK: &str = "resynthesis_check.json";
pub const DIFFERENCE_TABLE: &str = "difference_table.csv";
pub const JPD: &str = "jpd.csv";
pub const FIT_SUMMARY: &str = "fit_summary.json";
pub const STAIRCASE: &str = "staircase.csv";
pub const MANIFEST: &str = "manifest.json";
pub const REPORT_DIR: &str = "report";
/// Listing expected inside a recorded-response directory.
pub const TOKEN_LISTING: &str = "tokens.csv";

/// One measured or simulated mimicry production.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub token_id: String,
    pub subject: u32,
    pub stimulus_id: i32,
    pub repetition: u32,
    pub order: u32,
    /// Measurement time after the token start, seconds. Empty for
    /// responses that were never rendered.
    pub time_s: Option<f64>,
    pub f1_hz: f64,
    pub f2_hz: f64,
    pub f0_hz: Option<f64>,
    /// `;`-separated: `simulated`, `measured`, `closed_phase`, `windowed`,
    /// `unreliable`.
    pub flags: String,
}

impl ResponseRow {
    pub fn to_response(&self) -> Result<MimicryResponse> {
        Ok(MimicryResponse {
            subject: self.subject,
            stimulus_id: self.stimulus_id,
            repetition: self.repetition,
            order: self.order,
            produced: FormantPoint::new(self.f1_hz, self.f2_hz)?,
        })
    }
}

pub fn token_id(subject: u32, stimulus_id: i32, repetition: u32) -> String {
    format!("s{subject:03}_st{stimulus_id}_r{repetition}")
}

/// A response token on disk, awaiting measurement. `file` is relative to
/// the listing's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub token_id: String,
    pub subject: u32,
    pub stimulus_id: i32,
    pub repetition: u32,
    pub order: u32,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub token_id: String,
    pub file: String,
    pub reason: String,
}

/// Profile columns are empty for subjects whose responses were recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub subject: u32,
    pub group: String,
    pub boundary_stim: Option<f64>,
    pub categorization_slope: Option<f64>,
    pub warp_strength: Option<f64>,
    pub category_weight: Option<f64>,
    pub tracking_gain: Option<f64>,
    pub noise_f1_hz: Option<f64>,
    pub noise_f2_hz: Option<f64>,
    pub seed: Option<u64>,
}

impl SubjectRow {
    pub fn simulated(group: &str, p: &SubjectProfile) -> Self {
        Self {
            subject: p.id,
            group: group.to_string(),
            boundary_stim: Some(p.boundary_stim),
            categorization_slope: Some(p.categorization_slope),
            warp_strength: Some(p.warp_strength),
            category_weight: Some(p.category_weight),
            tracking_gain: Some(p.tracking_gain),
            noise_f1_hz: Some(p.production_noise.f1),
            noise_f2_hz: Some(p.production_noise.f2),
            seed: Some(p.seed),
        }
    }

    pub fn recorded(group: &str, subject: u32) -> Self {
        Self {
            subject,
            group: group.to_string(),
            boundary_stim: None,
            categorization_slope: None,
            warp_strength: None,
            category_weight: None,
            tracking_gain: None,
            noise_f1_hz: None,
            noise_f2_hz: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizationRow {
    pub group: String,
    pub subject: u32,
    pub stimulus_id: i32,
    pub position: f64,
    pub n: u32,
    pub n_upper: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizationFitRow {
    pub group: String,
    pub subject: u32,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub boundary: Option<f64>,
    pub separated: bool,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusMeasurementRow {
    pub group: String,
    pub stimulus_id: i32,
    pub target_f1_hz: f64,
    pub target_f2_hz: f64,
    pub onset_s: f64,
    pub time_s: f64,
    pub f1_hz: f64,
    pub f2_hz: f64,
    pub f0_hz: Option<f64>,
    pub method: String,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRow {
    pub group: String,
    pub subject: u32,
    pub reference_stim: i32,
    pub comparison_stim: i32,
    pub n_pairs: u64,
    pub n_different: u64,
    pub distance_mels: f64,
}

/// Row kind in `jpd.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JpdRowKind {
    Reference,
    UpperBound,
    LowerBound,
}

/// One limen. Bound rows repeat the row of the reference that sets the
/// bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JpdRow {
    pub row: JpdRowKind,
    pub reference_stim: i32,
    pub x50_mels: Option<f64>,
    pub inverse_steepness_mels: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub c: f64,
    pub converged: bool,
    pub n: u64,
    pub status: FitStatus,
    pub usable: bool,
    /// Inside the configured summary range.
    pub in_summary: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl JpdRow {
    pub fn new(e: &JpdEstimate, in_summary: bool) -> Self {
        Self {
            row: JpdRowKind::Reference,
            reference_stim: e.reference_stim,
            x50_mels: finite(e.x50),
            inverse_steepness_mels: finite(e.inverse_steepness),
            alpha: finite(e.fit.alpha),
            beta: finite(e.fit.beta),
            c: e.fit.floor_c,
            converged: e.fit.converged,
            n: e.n,
            status: e.fit.status,
            usable: e.is_usable(),
            in_summary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaircaseRow {
    pub group: String,
    pub subject: u32,
    pub reference_stim: i32,
    pub toward_stim: i32,
    pub target_p: f64,
    /// Run number, or empty for the mean over runs.
    pub run: Option<usize>,
    pub distance_mels: f64,
    pub converged: bool,
    pub n_trials: usize,
}

/// `report/summary.csv`: the two bounds of the limen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub bound: String,
    pub reference_stim: Option<i32>,
    pub jpd_mels: Option<f64>,
    pub inverse_steepness_mels: Option<f64>,
}

/// `continuum.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuumManifest {
    pub mel_formula: String,
    pub synth: SynthParams,
    pub groups: Vec<GroupContinuum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupContinuum {
    pub group: String,
    pub mode: SynthesisMode,
    pub sample_rate: f64,
    pub stimuli: Vec<StimulusEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resynthesis: Option<ResynthesisInfo>,
}

impl GroupContinuum {
    pub fn specs(&self) -> Vec<StimulusSpec> {
        self.stimuli.iter().map(StimulusEntry::spec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusEntry {
    pub id: i32,
    pub target: FormantPoint,
    pub target_mel: MelPoint,
    pub duration: f64,
    pub f0: PitchContour,
    /// Relative to the run directory.
    pub audio: String,
}

impl StimulusEntry {
    pub fn spec(&self) -> StimulusSpec {
        StimulusSpec {
            id: self.id,
            target: self.target,
            duration: self.duration,
            f0: self.f0,
        }
    }
}

/// The parts of a resynthesis plan needed to check its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResynthesisInfo {
    pub base_token: usize,
    pub base_point: FormantPoint,
    pub base_f0: f64,
    pub hid_mean: FormantPoint,
    pub head_mean: FormantPoint,
    pub f1_step: f64,
    pub f2_step: f64,
    pub index_range: (i32, i32),
    pub lpc_order: usize,
    pub window: f64,
    pub time_step: f64,
    pub analysis_rate: f64,
    /// Source tokens, relative to the run directory.
    pub tokens: Vec<String>,
}

/// `resynthesis_check.json`: one entry per resynthesized group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: String,
    pub passed: bool,
    pub check: SeriesCheck,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.is_file() {
        return Err(Error::MissingIntermediate(path.to_path_buf()));
    }
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingIntermediate(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join(REPORT_DIR).join(name)
    }

    pub fn stimulus_audio(group: &str, id: i32) -> String {
        format!("stimuli/{group}/stim_{id}.wav")
    }

    pub fn base_token_audio(group: &str, word: &str, index: usize) -> String {
        format!("tokens/{group}/{word}_{index}.wav")
    }

    pub fn response_audio(token_id: &str) -> String {
        format!("responses/{token_id}.wav")
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }
}
