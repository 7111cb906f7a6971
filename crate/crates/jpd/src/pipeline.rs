//! Pipeline stages and the full run.
//!
//! Stages communicate only through files in the run directory. Work inside
//! a stage is spread over the rayon pool, but every random draw comes from
//! a stream keyed by its logical identity and every collection is gathered
//! in input order, so outputs do not depend on the thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use jpd_core::analysis::{measure_token, AnalysisConfig, MeasurementMethod, TokenMeasurement};
use jpd_core::psychometrics::{
    fit_categorization, fit_jpd_points, fit_per_subject_mean, magnet_ordering_holds, summarize,
    tabulate_by_subject, Aggregation, BinomialPoint, DifferenceCell, DifferenceTable, FitStatus,
    FloorMode, JpdEstimate,
};
use jpd_core::resynth::{
    check_series, plan_resynthesis, resynthesize, select_base_token, ResynthesisSettings,
    ROUND_TRIP_TOLERANCE,
};
use jpd_core::rng::{derive_seed, stream_rng};
use jpd_core::simulator::{run_block, run_categorization, MimicryResponse, Stimulus, SubjectProfile};
use jpd_core::staircase::{repeated_search, Probe};
use jpd_core::synth::{
    parametric_specs, render_vowel, PitchContour, StimulusSpec, SynthParams, SynthesisMode,
};
use jpd_core::{FormantPoint, MelDistance, Waveform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav};
use crate::config::{ContinuumSource, ExperimentConfig, GroupConfig, TokenSource};
use crate::error::{Error, Result, Stage};
use crate::tables::*;

/// Stream offset separating synthetic base tokens from subject streams.
const TOKEN_SEED_SALT: u64 = 0x746f_6b65_6e73;

/// What a stage wrote, relative to the run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageOutputs {
    pub files: Vec<String>,
    /// WAV files written, counted rather than listed.
    pub audio_files: usize,
    pub warnings: Vec<String>,
}

impl StageOutputs {
    fn file(&mut self, name: &str) {
        self.files.push(name.to_string());
    }
}

fn stimuli_of(group: &GroupContinuum) -> Vec<Stimulus> {
    group.stimuli.iter().map(|e| Stimulus::from(&e.spec())).collect()
}

fn mean_point(points: &[FormantPoint]) -> Result<FormantPoint> {
    let n = points.len() as f64;
    let f1 = points.iter().map(FormantPoint::f1).sum::<f64>() / n;
    let f2 = points.iter().map(FormantPoint::f2).sum::<f64>() / n;
    Ok(FormantPoint::new(f1, f2)?)
}

fn synthetic_tokens(
    target: FormantPoint,
    f0: f64,
    count: usize,
    durations: (f64, f64),
    jitter: (f64, f64),
    seed: u64,
    params: &SynthParams,
) -> Result<Vec<Waveform>> {
    use rand::Rng;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let t = if count > 1 {
                i as f64 / (count - 1) as f64
            } else {
                0.5
            };
            let mut rng = stream_rng(seed, i as u64);
            let d1 = jitter.0 * rng.random_range(-1.0..=1.0);
            let d2 = jitter.1 * rng.random_range(-1.0..=1.0);
            let spec = StimulusSpec {
                id: i as i32 + 1,
                target: FormantPoint::new(target.f1() + d1, target.f2() + d2)?,
                duration: durations.0 + (durations.1 - durations.0) * t,
                f0: PitchContour::rise_fall(f0),
            };
            Ok(render_vowel(&spec, params)?)
        })
        .collect()
}

fn load_tokens(
    src: &TokenSource,
    cfg: &ExperimentConfig,
    group_index: usize,
    word: u64,
) -> Result<Vec<Waveform>> {
    match src {
        TokenSource::Files { paths } => paths.iter().map(|p| read_wav(p)).collect(),
        TokenSource::Synthetic {
            target,
            f0,
            count,
            durations,
            jitter_hz,
        } => synthetic_tokens(
            *target,
            *f0,
            *count,
            *durations,
            *jitter_hz,
            derive_seed(cfg.run_seed() ^ TOKEN_SEED_SALT, (group_index as u64) << 8 | word),
            &cfg.synth,
        ),
    }
}

fn measured_mean(tokens: &[Waveform], analysis: &AnalysisConfig) -> Result<FormantPoint> {
    let points = tokens
        .par_iter()
        .map(|t| measure_token(t, analysis).map(|m| m.point))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    mean_point(&points)
}

fn entry(group: &str, spec: &StimulusSpec) -> StimulusEntry {
    StimulusEntry {
        id: spec.id,
        target: spec.target,
        target_mel: spec.target.to_mel(),
        duration: spec.duration,
        f0: spec.f0,
        audio: RunDir::stimulus_audio(group, spec.id),
    }
}

fn synth_group(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    index: usize,
    group: &GroupConfig,
    out: &mut StageOutputs,
) -> Result<GroupContinuum> {
    match &group.continuum {
        ContinuumSource::Parametric {
            endpoints,
            n,
            duration,
            f0,
        } => {
            let specs = parametric_specs(endpoints[0], endpoints[1], *n, *duration, *f0)?;
            let audio = specs
                .par_iter()
                .map(|s| render_vowel(s, &cfg.synth))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let stimuli: Vec<StimulusEntry> = specs.iter().map(|s| entry(&group.name, s)).collect();
            for (e, a) in stimuli.iter().zip(&audio) {
                write_wav(&dir.resolve(&e.audio), a)?;
                out.audio_files += 1;
            }
            Ok(GroupContinuum {
                group: group.name.clone(),
                mode: SynthesisMode::Parametric,
                sample_rate: cfg.synth.sample_rate,
                stimuli,
                resynthesis: None,
            })
        }
        ContinuumSource::Resynthesis {
            hid,
            head,
            settings,
        } => synth_resynthesis(cfg, dir, index, group, hid, head, settings, out),
    }
}

#[allow(clippy::too_many_arguments)]
fn synth_resynthesis(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    index: usize,
    group: &GroupConfig,
    hid: &TokenSource,
    head: &TokenSource,
    settings: &ResynthesisSettings,
    out: &mut StageOutputs,
) -> Result<GroupContinuum> {
    let hid_tokens = load_tokens(hid, cfg, index, 0)?;
    let head_tokens = load_tokens(head, cfg, index, 1)?;
    let mut token_files = Vec::new();
    for (word, tokens) in [("hid", &hid_tokens), ("head", &head_tokens)] {
        for (i, t) in tokens.iter().enumerate() {
            let rel = RunDir::base_token_audio(&group.name, word, i);
            write_wav(&dir.resolve(&rel), t)?;
            out.audio_files += 1;
            token_files.push(rel);
        }
    }
    let plan = plan_resynthesis(&hid_tokens, &head_tokens, settings, &cfg.analysis)?;
    let base_token = select_base_token(&hid_tokens, &cfg.analysis.formants)?;
    let hid_mean = measured_mean(&hid_tokens, &cfg.analysis)?;
    let head_mean = measured_mean(&head_tokens, &cfg.analysis)?;
    let indices: Vec<i32> = plan.indices().collect();
    let rendered = indices
        .par_iter()
        .map(|&k| Ok((plan.target(k)?, resynthesize(&plan, k)?)))
        .collect::<std::result::Result<Vec<(FormantPoint, Waveform)>, jpd_core::Error>>()?;
    let f0 = PitchContour::flat(plan.base_f0);
    let duration = plan.base_token.duration();
    let mut stimuli = Vec::new();
    let mut sample_rate = plan.sample_rate;
    for (&k, (target, audio)) in indices.iter().zip(&rendered) {
        let spec = StimulusSpec {
            id: k,
            target: *target,
            duration,
            f0,
        };
        let e = entry(&group.name, &spec);
        write_wav(&dir.resolve(&e.audio), audio)?;
        out.audio_files += 1;
        sample_rate = audio.sample_rate;
        stimuli.push(e);
    }
    Ok(GroupContinuum {
        group: group.name.clone(),
        mode: SynthesisMode::Resynthesis,
        sample_rate,
        stimuli,
        resynthesis: Some(ResynthesisInfo {
            base_token,
            base_point: plan.base_point,
            base_f0: plan.base_f0,
            hid_mean,
            head_mean,
            f1_step: plan.f1_step,
            f2_step: plan.f2_step,
            index_range: plan.index_range,
            lpc_order: plan.lpc_order,
            window: plan.window,
            time_step: plan.time_step,
            analysis_rate: plan.sample_rate,
            tokens: token_files,
        }),
    })
}

/// Renders every group's continuum and writes `continuum.json`.
pub fn synth(cfg: &ExperimentConfig, dir: &RunDir) -> Result<StageOutputs> {
    let mut out = StageOutputs::default();
    let mut groups = Vec::new();
    for (i, g) in cfg.groups.iter().enumerate() {
        groups.push(synth_group(cfg, dir, i, g, &mut out)?);
    }
    let manifest = ContinuumManifest {
        mel_formula: "2595 * log10(1 + f / 700)".into(),
        synth: cfg.synth.clone(),
        groups,
    };
    write_json(&dir.file(CONTINUUM), &manifest)?;
    out.file(CONTINUUM);
    Ok(out)
}

fn load_continuum(dir: &RunDir) -> Result<ContinuumManifest> {
    read_json(&dir.file(CONTINUUM))
}

fn continuum_group<'a>(c: &'a ContinuumManifest, name: &str) -> Result<&'a GroupContinuum> {
    c.groups
        .iter()
        .find(|g| g.group == name)
        .ok_or_else(|| Error::Format {
            path: CONTINUUM.into(),
            reason: format!("no continuum for group {name:?}"),
        })
}

fn remove_stale(path: &Path) -> Result<()> {
    if path.is_file() {
        std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Runs the simulated subjects: categorization sessions, then mimicry
/// blocks. With `render_responses` the productions are rendered to WAV
/// and listed for the analysis stage instead of being written directly.
pub fn simulate(cfg: &ExperimentConfig, dir: &RunDir) -> Result<StageOutputs> {
    if !cfg.is_simulated() {
        return Err(Error::Config(
            "responses come from recorded audio; there is nothing to simulate".into(),
        ));
    }
    let continuum = load_continuum(dir)?;
    let mut out = StageOutputs::default();
    let mut subjects = Vec::new();
    let mut categorization = Vec::new();
    let mut blocks: Vec<(&GroupContinuum, Vec<MimicryResponse>)> = Vec::new();
    for g in &cfg.groups {
        let gc = continuum_group(&continuum, &g.name)?;
        let stimuli = stimuli_of(gc);
        let results = g
            .subjects
            .par_iter()
            .map(|p| {
                Ok((
                    run_categorization(p, &stimuli, cfg.categorization_reps)?,
                    run_block(p, &stimuli, cfg.reps)?,
                ))
            })
            .collect::<std::result::Result<Vec<_>, jpd_core::Error>>()?;
        for (p, (counts, block)) in g.subjects.iter().zip(results) {
            subjects.push(SubjectRow::simulated(&g.name, p));
            categorization.extend(counts.into_iter().map(|c| CategorizationRow {
                group: g.name.clone(),
                subject: p.id,
                stimulus_id: c.stimulus_id,
                position: c.position,
                n: c.n,
                n_upper: c.n_upper,
            }));
            blocks.push((gc, block));
        }
    }
    write_csv(&dir.file(SUBJECTS), &subjects)?;
    out.file(SUBJECTS);
    write_csv(&dir.file(CATEGORIZATION), &categorization)?;
    out.file(CATEGORIZATION);

    if cfg.render_responses {
        let mut listing = Vec::new();
        for (gc, block) in &blocks {
            let rendered = block
                .par_iter()
                .map(|r| {
                    let e = gc
                        .stimuli
                        .iter()
                        .find(|e| e.id == r.stimulus_id)
                        .expect("responses only reference continuum stimuli");
                    let spec = StimulusSpec {
                        id: r.stimulus_id,
                        target: r.produced,
                        duration: e.duration,
                        f0: e.f0,
                    };
                    render_vowel(&spec, &cfg.synth)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            for (r, audio) in block.iter().zip(&rendered) {
                let id = token_id(r.subject, r.stimulus_id, r.repetition);
                let file = RunDir::response_audio(&id);
                write_wav(&dir.resolve(&file), audio)?;
                out.audio_files += 1;
                listing.push(TokenRow {
                    token_id: id,
                    subject: r.subject,
                    stimulus_id: r.stimulus_id,
                    repetition: r.repetition,
                    order: r.order,
                    file,
                });
            }
        }
        write_csv(&dir.file(RESPONSE_TOKENS), &listing)?;
        out.file(RESPONSE_TOKENS);
        remove_stale(&dir.file(RESPONSES))?;
    } else {
        let rows: Vec<ResponseRow> = blocks
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|r| ResponseRow {
                token_id: token_id(r.subject, r.stimulus_id, r.repetition),
                subject: r.subject,
                stimulus_id: r.stimulus_id,
                repetition: r.repetition,
                order: r.order,
                time_s: None,
                f1_hz: r.produced.f1(),
                f2_hz: r.produced.f2(),
                f0_hz: None,
                flags: "simulated".into(),
            })
            .collect();
        write_csv(&dir.file(RESPONSES), &rows)?;
        out.file(RESPONSES);
        remove_stale(&dir.file(RESPONSE_TOKENS))?;
    }
    Ok(out)
}

fn method_name(m: MeasurementMethod) -> &'static str {
    match m {
        MeasurementMethod::Windowed => "windowed",
        MeasurementMethod::ClosedPhase => "closed_phase",
    }
}

fn measurement_flags(m: &TokenMeasurement) -> String {
    let mut flags = vec!["measured", method_name(m.method)];
    if !m.reliable {
        flags.push("unreliable");
    }
    flags.join(";")
}

/// Measures stimuli and, when responses exist as audio, response tokens.
/// Resynthesized series are round-trip checked against their plan and any
/// failure is reported as a warning and in `resynthesis_check.json`.
pub fn analyze(cfg: &ExperimentConfig, dir: &RunDir) -> Result<StageOutputs> {
    let continuum = load_continuum(dir)?;
    let mut out = StageOutputs::default();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for gc in &continuum.groups {
        let measured = gc
            .stimuli
            .par_iter()
            .map(|e| {
                let audio = read_wav(&dir.resolve(&e.audio))?;
                Ok(measure_token(&audio, &cfg.analysis))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut points = Vec::new();
        let mut unmeasured = Vec::new();
        for (e, m) in gc.stimuli.iter().zip(measured) {
            match m {
                Ok(m) => {
                    points.push((e.id, m.point));
                    rows.push(StimulusMeasurementRow {
                        group: gc.group.clone(),
                        stimulus_id: e.id,
                        target_f1_hz: e.target.f1(),
                        target_f2_hz: e.target.f2(),
                        onset_s: m.onset,
                        time_s: m.time,
                        f1_hz: m.point.f1(),
                        f2_hz: m.point.f2(),
                        f0_hz: m.f0,
                        method: method_name(m.method).into(),
                        reliable: m.reliable,
                    });
                }
                Err(err) => {
                    let msg = format!("group {}: stimulus {} not measurable: {err}", gc.group, e.id);
                    unmeasured.push(msg.clone());
                    out.warnings.push(msg);
                }
            }
        }
        if let Some(info) = &gc.resynthesis {
            let mut check = check_series(
                &points,
                info.base_point,
                (info.f1_step, info.f2_step),
                ROUND_TRIP_TOLERANCE,
            );
            check.failures.extend(unmeasured);
            for f in &check.failures {
                out.warnings.push(format!("group {}: resynthesis check failed: {f}", gc.group));
            }
            checks.push(GroupCheck {
                group: gc.group.clone(),
                passed: check.passed(),
                check,
            });
        }
    }
    write_csv(&dir.file(STIMULUS_MEASUREMENTS), &rows)?;
    out.file(STIMULUS_MEASUREMENTS);
    write_json(&dir.file(RESYNTHESIS_CHECK), &checks)?;
    out.file(RESYNTHESIS_CHECK);

    let listing = match &cfg.response_audio {
        Some(audio_dir) => Some((audio_dir.join(TOKEN_LISTING), audio_dir.clone())),
        None if dir.file(RESPONSE_TOKENS).is_file() => {
            Some((dir.file(RESPONSE_TOKENS), dir.root.clone()))
        }
        None => None,
    };
    match listing {
        Some((path, base)) => {
            let tokens: Vec<TokenRow> = read_csv(&path)?;
            ingest_tokens(cfg, dir, &tokens, &base, &mut out)?;
        }
        None => {
            if !dir.file(RESPONSES).is_file() {
                return Err(Error::MissingIntermediate(dir.file(RESPONSES)));
            }
        }
    }
    Ok(out)
}

fn ingest_tokens(
    cfg: &ExperimentConfig,
    dir: &RunDir,
    tokens: &[TokenRow],
    base: &Path,
    out: &mut StageOutputs,
) -> Result<()> {
    let measured = tokens
        .par_iter()
        .map(|t| {
            let audio = read_wav(&base.join(&t.file))?;
            Ok(measure_token(&audio, &cfg.analysis))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut responses = Vec::new();
    let mut rejected = Vec::new();
    for (t, m) in tokens.iter().zip(measured) {
        match m {
            Ok(m) => responses.push(ResponseRow {
                token_id: t.token_id.clone(),
                subject: t.subject,
                stimulus_id: t.stimulus_id,
                repetition: t.repetition,
                order: t.order,
                time_s: Some(m.time),
                f1_hz: m.point.f1(),
                f2_hz: m.point.f2(),
                f0_hz: m.f0,
                flags: measurement_flags(&m),
            }),
            Err(e) => rejected.push(RejectedRow {
                token_id: t.token_id.clone(),
                file: t.file.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if !rejected.is_empty() {
        out.warnings.push(format!(
            "{} of {} response tokens could not be measured; see {REJECTED_TOKENS}",
            rejected.len(),
            tokens.len()
        ));
    }
    write_csv(&dir.file(RESPONSES), &responses)?;
    out.file(RESPONSES);
    write_csv(&dir.file(REJECTED_TOKENS), &rejected)?;
    out.file(REJECTED_TOKENS);

    if cfg.response_audio.is_some() {
        let ids: BTreeSet<u32> = tokens.iter().map(|t| t.subject).collect();
        let subjects = ids
            .into_iter()
            .map(|id| {
                let group = match (cfg.group_of(id), cfg.groups.as_slice()) {
                    (Some(g), _) => g.name.clone(),
                    (None, [only]) => only.name.clone(),
                    (None, _) => {
                        return Err(Error::Config(format!(
                            "subject {id} is not listed in any group"
                        )))
                    }
                };
                Ok(SubjectRow::recorded(&group, id))
            })
            .collect::<Result<Vec<_>>>()?;
        write_csv(&dir.file(SUBJECTS), &subjects)?;
        out.file(SUBJECTS);
    }
    Ok(())
}

/// Pairwise difference counts per subject.
pub fn tabulate(cfg: &ExperimentConfig, dir: &RunDir) -> Result<StageOutputs> {
    let continuum = load_continuum(dir)?;
    let subjects: Vec<SubjectRow> = read_csv(&dir.file(SUBJECTS))?;
    let responses: Vec<ResponseRow> = read_csv(&dir.file(RESPONSES))?;
    let group_of: BTreeMap<u32, &str> = subjects.iter().map(|s| (s.subject, s.group.as_str())).collect();
    let mut rows = Vec::new();
    for gc in &continuum.groups {
        let rs = responses
            .iter()
            .filter(|r| group_of.get(&r.subject) == Some(&gc.group.as_str()))
            .map(ResponseRow::to_response)
            .collect::<Result<Vec<_>>>()?;
        if rs.is_empty() {
            continue;
        }
        for (subject, table) in tabulate_by_subject(&rs, &gc.specs(), &cfg.rule)? {
            rows.extend(table.cells.iter().map(|(&(r, c), cell)| DifferenceRow {
                group: gc.group.clone(),
                subject,
                reference_stim: r,
                comparison_stim: c,
                n_pairs: cell.n_pairs,
                n_different: cell.n_different,
                distance_mels: cell.distance.value(),
            }));
        }
    }
    if let Some(r) = responses.iter().find(|r| !group_of.contains_key(&r.subject)) {
        return Err(Error::Format {
            path: dir.file(RESPONSES),
            reason: format!("subject {} is missing from {SUBJECTS}", r.subject),
        });
    }
    if rows.is_empty() {
        return Err(Error::Core(jpd_core::Error::InsufficientData(
            "no responses to tabulate".into(),
        )));
    }
    write_csv(&dir.file(DIFFERENCE_TABLE), &rows)?;
    Ok(StageOutputs {
        files: vec![DIFFERENCE_TABLE.into()],
        ..StageOutputs::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub reference_stim: i32,
    pub x50_mels: f64,
    pub inverse_steepness_mels: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub reference_stim: i32,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    pub prototype_refs: Vec<i32>,
    pub boundary_refs: Vec<i32>,
    pub holds: bool,
}

/// `fit_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub aggregation: Aggregation,
    pub summary_range: Option<(i32, i32)>,
    pub upper: Option<Bound>,
    pub lower: Option<Bound>,
    /// References inside the summary range whose fit was not usable.
    pub excluded: Vec<Excluded>,
    /// Pooled proportion of different pairs between responses to one
    /// stimulus.
    pub same_stimulus_rate: Option<f64>,
    pub ordering: Option<OrderingResult>,
}

fn tables_from_rows(rows: &[DifferenceRow]) -> Result<BTreeMap<(String, u32), DifferenceTable>> {
    let mut tables: BTreeMap<(String, u32), DifferenceTable> = BTreeMap::new();
    for r in rows {
        tables
            .entry((r.group.clone(), r.subject))
            .or_default()
            .cells
            .insert(
                (r.reference_stim, r.comparison_stim),
                DifferenceCell {
                    n_pairs: r.n_pairs,
                    n_different: r.n_different,
                    distance: MelDistance::new(r.distance_mels)?,
                },
            );
    }
    Ok(tables)
}

/// Binomial points of one reference pooled over subjects. Cells are
/// summed within a group, where every subject heard the same stimuli;
/// different groups contribute separate points.
pub fn pooled_points(rows: &[DifferenceRow], reference: i32) -> Vec<BinomialPoint> {
    let mut cells: BTreeMap<(&str, i32), (u64, u64, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.reference_stim == reference && r.n_pairs > 0) {
        let e = cells
            .entry((r.group.as_str(), r.comparison_stim))
            .or_insert((0, 0, r.distance_mels));
        e.0 += r.n_pairs;
        e.1 += r.n_different;
    }
    cells
        .into_values()
        .map(|(n, k, x)| BinomialPoint {
            x,
            n: n as f64,
            k: k as f64,
        })
        .collect()
}

/// Fits every reference stimulus under the configured aggregation.
pub fn fit_estimates(cfg: &ExperimentConfig, rows: &[DifferenceRow]) -> Result<Vec<JpdEstimate>> {
    match cfg.aggregation {
        Aggregation::Pooled => {
            let refs: BTreeSet<i32> = rows.iter().map(|r| r.reference_stim).collect();
            let estimates = refs
                .into_par_iter()
                .map(|r| fit_jpd_points(r, &pooled_points(rows, r), &cfg.fit))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(estimates)
        }
        Aggregation::PerSubjectMean => {
            let by_subject: BTreeMap<u32, DifferenceTable> = tables_from_rows(rows)?
                .into_iter()
                .map(|((_, s), t)| (s, t))
                .collect();
            Ok(fit_per_subject_mean(&by_subject, &cfg.fit)?)
        }
    }
}

fn in_range(range: Option<(i32, i32)>, r: i32) -> bool {
    range.is_none_or(|(lo, hi)| (lo..=hi).contains(&r))
}

/// Fits the limens and categorization curves and writes the summary.
pub fn fit(cfg: &ExperimentConfig, dir: &RunDir) -> Result<(StageOutputs, FitSummary)> {
    let rows: Vec<DifferenceRow> = read_csv(&dir.file(DIFFERENCE_TABLE))?;
    let estimates = fit_estimates(cfg, &rows)?;
    let range = cfg.summary_range;
    let selected: Vec<JpdEstimate> = estimates
        .iter()
        .filter(|e| in_range(range, e.reference_stim))
        .copied()
        .collect();
    let s = summarize(&selected);
    let bound = |b: Option<(i32, f64)>| {
        b.and_then(|(r, _)| selected.iter().find(|e| e.reference_stim == r))
            .map(|e| Bound {
                reference_stim: e.reference_stim,
                x50_mels: e.x50,
                inverse_steepness_mels: e.inverse_steepness.is_finite().then_some(e.inverse_steepness),
            })
    };
    let mut pooled = DifferenceTable::default();
    for t in tables_from_rows(&rows)?.values() {
        pooled.merge(t);
    }
    let summary = FitSummary {
        aggregation: cfg.aggregation,
        summary_range: range,
        upper: bound(s.upper),
        lower: bound(s.lower),
        excluded: selected
            .iter()
            .filter(|e| !e.is_usable())
            .map(|e| Excluded {
                reference_stim: e.reference_stim,
                status: e.fit.status,
            })
            .collect(),
        same_stimulus_rate: pooled.same_stimulus_rate(),
        ordering: cfg.ordering.as_ref().map(|o| OrderingResult {
            prototype_refs: o.prototype_refs.clone(),
            boundary_refs: o.boundary_refs.clone(),
            holds: magnet_ordering_holds(&selected, &o.prototype_refs, &o.boundary_refs),
        }),
    };

    let mut jpd_rows: Vec<JpdRow> = estimates
        .iter()
        .map(|e| JpdRow::new(e, in_range(range, e.reference_stim)))
        .collect();
    for (kind, b) in [(JpdRowKind::UpperBound, s.upper), (JpdRowKind::LowerBound, s.lower)] {
        if let Some(row) = b.and_then(|(r, _)| jpd_rows.iter().find(|j| j.reference_stim == r)) {
            jpd_rows.push(JpdRow {
                row: kind,
                ..row.clone()
            });
        }
    }
    let mut out = StageOutputs::default();
    write_csv(&dir.file(JPD), &jpd_rows)?;
    out.file(JPD);

    if dir.file(CATEGORIZATION).is_file() {
        let cat: Vec<CategorizationRow> = read_csv(&dir.file(CATEGORIZATION))?;
        let mut by_subject: BTreeMap<(String, u32), Vec<BinomialPoint>> = BTreeMap::new();
        for c in &cat {
            by_subject
                .entry((c.group.clone(), c.subject))
                .or_default()
                .push(BinomialPoint {
                    x: c.position,
                    n: c.n as f64,
                    k: c.n_upper as f64,
                });
        }
        let fits = by_subject
            .into_iter()
            .map(|((group, subject), pts)| {
                let f = fit_categorization(&pts)?;
                let finite = |x: f64| x.is_finite().then_some(x);
                Ok(CategorizationFitRow {
                    group,
                    subject,
                    alpha: finite(f.alpha),
                    beta: finite(f.beta),
                    boundary: f.boundary,
                    separated: f.separated,
                    status: f.status,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_csv(&dir.file(CATEGORIZATION_FITS), &fits)?;
        out.file(CATEGORIZATION_FITS);
    }
    for e in &summary.excluded {
        out.warnings.push(format!(
            "reference {} excluded from the summary: fit status {:?}",
            e.reference_stim, e.status
        ));
    }
    write_json(&dir.file(FIT_SUMMARY), &summary)?;
    out.file(FIT_SUMMARY);
    Ok((out, summary))
}

fn fixed_floor(cfg: &ExperimentConfig) -> f64 {
    match cfg.fit.floor {
        FloorMode::Fixed(c) => c,
        FloorMode::Estimated => 0.1,
    }
}

/// Adaptive staircase searches on the configured probe.
pub fn staircase(cfg: &ExperimentConfig, dir: &RunDir) -> Result<(StageOutputs, Vec<StaircaseRow>)> {
    let setup = cfg.staircase.clone().unwrap_or_default();
    let continuum = load_continuum(dir)?;
    let group = match &setup.group {
        Some(name) => cfg.group(name),
        None => cfg.groups.first(),
    }
    .ok_or_else(|| Error::Config("no group for the staircase".into()))?;
    let gc = continuum_group(&continuum, &group.name)?;
    let stim = |id: i32| {
        gc.stimuli
            .iter()
            .find(|e| e.id == id)
            .map(|e| Stimulus::from(&e.spec()))
            .ok_or_else(|| Error::Config(format!("stimulus {id} is not in the continuum")))
    };
    let probe = Probe::between(stim(setup.reference_stim)?, stim(setup.toward_stim)?)?;
    let floor = setup.floor.unwrap_or_else(|| fixed_floor(cfg));
    let profiles: Vec<&SubjectProfile> = group
        .subjects
        .iter()
        .filter(|p| setup.subjects.is_empty() || setup.subjects.contains(&p.id))
        .collect();
    if profiles.is_empty() {
        return Err(Error::Config("no simulated subjects for the staircase".into()));
    }
    let results = profiles
        .par_iter()
        .map(|p| {
            repeated_search(
                p,
                &probe,
                &cfg.rule,
                setup.target_p,
                floor,
                &setup.procedure,
                setup.runs,
            )
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut out = StageOutputs::default();
    for (p, (mean, runs)) in profiles.iter().zip(results) {
        let row = |run: Option<usize>, d: f64, converged: bool, n: usize| StaircaseRow {
            group: group.name.clone(),
            subject: p.id,
            reference_stim: setup.reference_stim,
            toward_stim: setup.toward_stim,
            target_p: setup.target_p,
            run,
            distance_mels: d,
            converged,
            n_trials: n,
        };
        for (i, r) in runs.iter().enumerate() {
            rows.push(row(Some(i), r.distance.value(), r.converged, r.n_trials));
            if !r.converged {
                out.warnings.push(format!(
                    "subject {} staircase run {i} hit the trial limit",
                    p.id
                ));
            }
        }
        let all = runs.iter().all(|r| r.converged);
        rows.push(row(None, mean, all, runs.iter().map(|r| r.n_trials).sum()));
    }
    write_csv(&dir.file(STAIRCASE), &rows)?;
    out.file(STAIRCASE);
    Ok((out, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    #[serde(flatten)]
    pub outputs: StageOutputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuumGeometry {
    pub group: String,
    pub mode: SynthesisMode,
    pub n_stimuli: usize,
    /// Largest relative deviation of a consecutive target gap from the
    /// mean gap.
    pub max_gap_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checks {
    pub continuum: Vec<ContinuumGeometry>,
    pub resynthesis: Vec<GroupCheck>,
    pub rejected_tokens: usize,
}

/// `manifest.json`: inputs, outputs and results of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit: String,
    pub version: String,
    /// The resolved configuration, with every default filled in.
    pub config: ExperimentConfig,
    pub design_decisions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub summary: FitSummary,
    pub checks: Checks,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn read(run_dir: &Path) -> Result<Self> {
        read_json(&run_dir.join(MANIFEST))
    }
}

/// Defaults and conventions that shape the numbers, spelled out.
pub fn design_decisions(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let floor = match cfg.fit.floor {
        FloorMode::Fixed(c) => format!("fixed at {c}"),
        FloorMode::Estimated => "estimated by profile likelihood over [0, 0.45]".into(),
    };
    let a = &cfg.analysis;
    let entries = [
        ("mel_scale", "2595 * log10(1 + f / 700); distances are Euclidean in (mel F1, mel F2)".to_string()),
        (
            "difference_rule",
            format!(
                "a pair differs when |dF1| > {} Hz or |dF2| > {} Hz{}",
                cfg.rule.f1_threshold,
                cfg.rule.f2_threshold,
                if cfg.rule.directional { ", in the direction of the stimulus difference" } else { "" }
            ),
        ),
        ("pairs", "every ordered pair of distinct responses of one subject, grouped by (reference stimulus, comparison stimulus)".into()),
        ("psychometric_function", format!("P = c + (1 - c) Phi(alpha + beta d), floor c {floor}; X50 at P = 0.5, inverse steepness X75 - X50")),
        ("aggregation", match cfg.aggregation {
            Aggregation::Pooled => "pairs pooled over subjects within a group; groups enter as separate points".into(),
            Aggregation::PerSubjectMean => "one fit per subject; converged limens averaged".into(),
        }),
        ("summary", "upper and lower bounds over converged fits with positive X50; other references are listed as excluded".into()),
        ("measurement_point", "tenth vocal period after voicing onset".into()),
        ("formant_analysis", format!(
            "Burg LPC order {}, Gaussian window {} s effective, step {} s, at {} Hz",
            a.formants.lpc_order,
            a.formants.window,
            a.formants.step,
            a.formants.analysis_rate.map_or("the native rate".to_string(), |r| r.to_string())
        )),
        ("formant_reading", match a.method {
            MeasurementMethod::ClosedPhase => format!(
                "closed-phase covariance LPC over {} cycles (gain >= {} dB), falling back to the windowed frame",
                a.closed_phase.cycles, a.closed_phase.min_gain_db
            ),
            MeasurementMethod::Windowed => "nearest windowed Burg frame".into(),
        }),
        ("pitch", format!("normalized autocorrelation, {} s window, {}-{} Hz", a.pitch.window, a.pitch.min_f0, a.pitch.max_f0)),
        ("synthesizer", format!(
            "cascade resonators at {} Hz, bandwidths {:?} Hz, F3 {} Hz, F4 {} Hz, -12 dB/octave source, first-difference radiation, peak {} dBFS",
            cfg.synth.sample_rate, cfg.synth.bandwidths, cfg.synth.f3, cfg.synth.f4, cfg.synth.peak_dbfs
        )),
        ("f0_contour", "piecewise linear 0.9 -> 1.1 (at 30%) -> 0.85 of the mean, rescaled to the mean".into()),
        ("resynthesis", "resample, Burg LPC per frame, inverse filter, shift the two lowest formant pole pairs, all-pole resynthesis; base token = unclipped token maximizing duration x F1-F3 prominence; series round-trip checked".into()),
        ("subject_seeds", "subject seed = derive_seed(run seed, subject id); each trial draws from a ChaCha8 stream keyed by purpose, stimulus and repetition".into()),
        ("responses", if cfg.response_audio.is_some() {
            "measured from recorded audio".into()
        } else if cfg.render_responses {
            "simulated productions rendered to WAV and measured".into()
        } else {
            "simulated formants used directly".into()
        }),
    ];
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn geometry(continuum: &ContinuumManifest) -> Vec<ContinuumGeometry> {
    continuum
        .groups
        .iter()
        .map(|g| {
            let gaps: Vec<f64> = g
                .stimuli
                .windows(2)
                .map(|w| w[0].target_mel.distance(w[1].target_mel))
                .collect();
            let mean = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
            let dev = gaps
                .iter()
                .map(|d| ((d - mean) / mean).abs())
                .fold(0.0, f64::max);
            ContinuumGeometry {
                group: g.group.clone(),
                mode: g.mode,
                n_stimuli: g.stimuli.len(),
                max_gap_deviation: dev,
            }
        })
        .collect()
}

fn tagged<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

/// Runs every stage in order into `cfg.output_dir` and writes
/// `manifest.json`. A failing stage stops the run; files already written
/// stay in place.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunReport> {
    let cfg = cfg.clone().resolve()?;
    let dir = RunDir::new(&cfg.output_dir);
    std::fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    let mut stages = Vec::new();
    let mut record = |stage: Stage, outputs: StageOutputs| stages.push(StageRecord { stage, outputs });

    record(Stage::Synth, tagged(Stage::Synth, synth(&cfg, &dir))?);
    if cfg.is_simulated() {
        record(Stage::Simulate, tagged(Stage::Simulate, simulate(&cfg, &dir))?);
    }
    record(Stage::Analyze, tagged(Stage::Analyze, analyze(&cfg, &dir))?);
    record(Stage::Tabulate, tagged(Stage::Tabulate, tabulate(&cfg, &dir))?);
    let (fit_out, summary) = tagged(Stage::Fit, fit(&cfg, &dir))?;
    record(Stage::Fit, fit_out);
    if cfg.staircase.is_some() && cfg.is_simulated() {
        let (out, _) = tagged(Stage::Staircase, staircase(&cfg, &dir))?;
        record(Stage::Staircase, out);
    }
    let report_files = tagged(Stage::Report, crate::report::render_report(&dir.root))?;
    record(
        Stage::Report,
        StageOutputs {
            files: report_files,
            ..StageOutputs::default()
        },
    );

    let continuum = load_continuum(&dir)?;
    let resynthesis: Vec<GroupCheck> = read_json(&dir.file(RESYNTHESIS_CHECK))?;
    let rejected_tokens = if dir.file(REJECTED_TOKENS).is_file() {
        read_csv::<RejectedRow>(&dir.file(REJECTED_TOKENS))?.len()
    } else {
        0
    };
    let warnings = stages
        .iter()
        .flat_map(|s| s.outputs.warnings.iter().cloned())
        .collect();
    let report = RunReport {
        toolkit: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        design_decisions: design_decisions(&cfg),
        config: cfg,
        stages,
        summary,
        checks: Checks {
            continuum: geometry(&continuum),
            resynthesis,
            rejected_tokens,
        },
        warnings,
    };
    write_json(&dir.file(MANIFEST), &report)?;
    Ok(report)
}
