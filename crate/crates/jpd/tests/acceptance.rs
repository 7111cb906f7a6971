//! Acceptance criteria, one line each.
//!
//! Runs without the libtest harness so the verdict lines always print:
//! `cargo test -p jpd --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use jpd::config::ExperimentConfig;
use jpd::pipeline::run_pipeline;
use jpd::plot::plotted_points;
use jpd::tables::{read_csv, JpdRow, JpdRowKind};
use jpd_core::analysis::{measure_token, AnalysisConfig};
use jpd_core::normal;
use jpd_core::psychometrics::{
    fit_jpd, grid_oracle_fit, log_likelihood, row_points, tabulate, DifferenceCell,
    DifferenceRule, DifferenceTable, FitOptions, FitStatus,
};
use jpd_core::resynth::{plan_resynthesis, resynthesize_series, verify_series, ResynthesisSettings};
use jpd_core::rng::stream_rng;
use jpd_core::simulator::{respond_with_rng, run_block, SubjectProfile, Stimulus};
use jpd_core::staircase::{repeated_search, Probe, StaircaseConfig};
use jpd_core::synth::{
    build_parametric_continuum, render_vowel, PitchContour, StimulusSpec, SynthParams,
};
use jpd_core::{hz_to_mel, mel_distance, mel_to_hz, FormantPoint, MelDistance, Waveform};
use rand::Rng;
use rayon::prelude::*;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn endpoints() -> (FormantPoint, FormantPoint) {
    (
        FormantPoint::new(270.0, 2290.0).unwrap(),
        FormantPoint::new(390.0, 1990.0).unwrap(),
    )
}

fn mel_round_trip() -> Verdict {
    let mut rng = stream_rng(1, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let f: f64 = rng.random_range(50.0..=4000.0);
        let back = mel_to_hz(hz_to_mel(f).unwrap().value()).unwrap().value();
        worst = worst.max((back - f).abs() / f);
    }
    verdict(worst < 1e-6, format!("max relative error {worst:.2e}"))
}

fn continuum_geometry() -> Verdict {
    let (a, b) = endpoints();
    let c = build_parametric_continuum(
        a,
        b,
        9,
        0.25,
        PitchContour::rise_fall(117.0),
        &SynthParams::default(),
    )
    .unwrap();
    let gaps = c.mel_gaps();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let spec_dev = gaps
        .iter()
        .map(|g| ((g - mean) / mean).abs())
        .fold(0.0, f64::max);
    let analysis = AnalysisConfig::default();
    let measured: Vec<FormantPoint> = c
        .audio
        .par_iter()
        .map(|w| measure_token(w, &analysis).unwrap().point)
        .collect();
    let audio_dev = measured
        .windows(2)
        .zip(&gaps)
        .map(|(w, g)| (mel_distance(&w[0], &w[1]).value() - g).abs() / g)
        .fold(0.0, f64::max);
    verdict(
        c.len() == 9 && spec_dev < 1e-6 && audio_dev <= 0.05,
        format!(
            "target gap deviation {spec_dev:.1e}, re-extracted gap deviation {:.2}% (mean gap {mean:.2} mels)",
            100.0 * audio_dev
        ),
    )
}

fn analysis_by_synthesis() -> Verdict {
    let grid: Vec<(f64, f64)> = (0..5)
        .flat_map(|i| (0..5).map(move |j| (250.0 + 50.0 * i as f64, 1800.0 + 150.0 * j as f64)))
        .collect();
    let analysis = AnalysisConfig::default();
    let errors: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&(f1, f2)| {
            let spec = StimulusSpec {
                id: 1,
                target: FormantPoint::new(f1, f2).unwrap(),
                duration: 0.25,
                f0: PitchContour::rise_fall(117.0),
            };
            let audio = render_vowel(&spec, &SynthParams::default()).unwrap();
            match measure_token(&audio, &analysis) {
                Ok(m) => ((m.point.f1() - f1).abs(), (m.point.f2() - f2).abs()),
                Err(_) => (f64::INFINITY, f64::INFINITY),
            }
        })
        .collect();
    let e1 = errors.iter().map(|e| e.0).fold(0.0, f64::max);
    let e2 = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    verdict(
        e1 <= 20.0 && e2 <= 50.0,
        format!("25 targets, worst |dF1| {e1:.1} Hz, worst |dF2| {e2:.1} Hz"),
    )
}

fn word_tokens(target: (f64, f64), f0: f64, seed: u64) -> Vec<Waveform> {
    (0..4)
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let spec = StimulusSpec {
                id: 1,
                target: FormantPoint::new(
                    target.0 + rng.random_range(-8.0..=8.0),
                    target.1 + rng.random_range(-20.0..=20.0),
                )
                .unwrap(),
                duration: 0.24 + 0.02 * i as f64,
                f0: PitchContour::rise_fall(f0),
            };
            render_vowel(&spec, &SynthParams::default()).unwrap()
        })
        .collect()
}

fn resynthesis_series() -> Verdict {
    let settings = ResynthesisSettings::default();
    let analysis = AnalysisConfig::default();
    let run = |hid: (f64, f64), head: (f64, f64), f0: f64| {
        let plan = plan_resynthesis(
            &word_tokens(hid, f0, 11),
            &word_tokens(head, f0, 12),
            &settings,
            &analysis,
        )
        .unwrap();
        let series = resynthesize_series(&plan).unwrap();
        verify_series(&series, &plan, &analysis).unwrap()
    };
    let male = run((390.0, 1990.0), (530.0, 1840.0), 120.0);
    let female = run((430.0, 2480.0), (610.0, 2330.0), 220.0);
    let clean = male.passed() && male.identity_ok && male.f1_monotone && male.f2_monotone;
    verdict(
        clean && !female.passed(),
        format!(
            "male: identity {}, F1 monotone {}, F2 monotone {}, gains ({:.2}, {:.2}); female flagged: {:?}",
            male.identity_ok,
            male.f1_monotone,
            male.f2_monotone,
            male.f1_gain,
            male.f2_gain,
            female.failures
        ),
    )
}

/// Binomial draw by summing Bernoulli trials.
fn binomial(n: u64, p: f64, rng: &mut impl Rng) -> u64 {
    (0..n).filter(|_| rng.random::<f64>() < p).count() as u64
}

fn synthetic_table(alpha: f64, beta: f64, c: f64, distances: &[f64], n: u64, seed: u64) -> DifferenceTable {
    let mut rng = stream_rng(seed, 0);
    let mut t = DifferenceTable::default();
    for (i, &d) in distances.iter().enumerate() {
        let p = c + (1.0 - c) * normal::cdf(alpha + beta * d);
        t.cells.insert(
            (1, i as i32 + 1),
            DifferenceCell {
                n_pairs: n,
                n_different: binomial(n, p, &mut rng),
                distance: MelDistance::new(d).unwrap(),
            },
        );
    }
    t
}

fn probit_recovery() -> Verdict {
    let distances: Vec<f64> = (0..=10).map(|i| 10.0 * i as f64).collect();
    let opts = FitOptions::default();
    let table = synthetic_table(-2.0, 0.05, 0.1, &distances, 10_000, 5);
    let e = fit_jpd(&table, 1, &opts).unwrap();
    let x50_true = (normal::quantile(0.4 / 0.9) + 2.0) / 0.05;
    let steep_true = (normal::quantile(0.65 / 0.9) + 2.0) / 0.05 - x50_true;
    let x50_err = (e.x50 - x50_true).abs() / x50_true;
    let steep_err = (e.inverse_steepness - steep_true).abs() / steep_true;

    let worst_gap = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(100 + i, 0);
            let alpha = rng.random_range(-3.0..-0.5);
            let beta = rng.random_range(0.01..0.12);
            let n = rng.random_range(12..60);
            let ds: Vec<f64> = (0..9).map(|k| 12.0 * k as f64 + rng.random_range(0.0..6.0)).collect();
            let t = synthetic_table(alpha, beta, 0.1, &ds, n, 200 + i);
            let mle = fit_jpd(&t, 1, &opts).unwrap().fit;
            let grid = grid_oracle_fit(&t, 1, 0.1).unwrap();
            let pts = row_points(&t, 1);
            log_likelihood(&pts, grid.alpha, grid.beta, 0.1) - mle.log_likelihood
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    verdict(
        e.fit.status == FitStatus::Converged && x50_err <= 0.02 && steep_err <= 0.05 && worst_gap <= 1e-3,
        format!(
            "X50 {:.2} (true {x50_true:.2}), X75-X50 {:.2} (true {steep_true:.2}), worst grid-minus-MLE log-likelihood {worst_gap:.2e} over 20 tables",
            e.x50, e.inverse_steepness
        ),
    )
}

fn floor_reproduction() -> Verdict {
    let profile = SubjectProfile::default();
    let rule = DifferenceRule::default();
    let stimulus = Stimulus {
        id: 5,
        position: 5.0,
        target: FormantPoint::new(330.0, 2140.0).unwrap(),
    };
    let mut rng = stream_rng(42, 0);
    let pairs = 100_000;
    let different = (0..pairs)
        .filter(|_| {
            let a = respond_with_rng(&profile, &stimulus, &mut rng);
            let b = respond_with_rng(&profile, &stimulus, &mut rng);
            rule.differs((b.f1() - a.f1(), b.f2() - a.f2()), (0.0, 0.0))
        })
        .count();
    let p = different as f64 / pairs as f64;
    let within = |t: f64, s: f64| 2.0 * normal::cdf(t / (s * 2f64.sqrt())) - 1.0;
    let analytic = 1.0 - within(81.3, 29.0) * within(161.4, 58.0);
    verdict(
        (p - 0.10).abs() <= 0.02,
        format!("P(diff) = {p:.4} over {pairs} pairs (Gaussian tail {analytic:.4})"),
    )
}

fn reference_rows(dir: &Path) -> Vec<JpdRow> {
    read_csv::<JpdRow>(&dir.join("jpd.csv"))
        .unwrap()
        .into_iter()
        .filter(|r| r.row == JpdRowKind::Reference)
        .collect()
}

fn reference_limens() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::bundled("exp1-reference").unwrap();
    cfg.output_dir = tmp.path().join("run");
    let report = run_pipeline(&cfg).unwrap();
    let rows = reference_rows(&cfg.output_dir);
    let all_converged = rows.iter().all(|r| r.status == FitStatus::Converged);
    let (upper, lower) = match (&report.summary.upper, &report.summary.lower) {
        (Some(u), Some(l)) => (u.clone(), l.clone()),
        _ => return verdict(false, "no summary bounds"),
    };
    let in_band = |x: f64, target: f64| (x - target).abs() <= 0.25 * target;
    let ordering = report.summary.ordering.as_ref().is_some_and(|o| o.holds);
    let svg = std::fs::read_to_string(cfg.output_dir.join("report/x50.svg")).unwrap();
    let plotted = plotted_points(&svg);
    let peak = plotted.iter().max_by(|a, b| a.2.total_cmp(&b.2)).map(|p| p.1 as i32);
    let valley = plotted.iter().min_by(|a, b| a.2.total_cmp(&b.2)).map(|p| p.1 as i32);
    let o = cfg.ordering.clone().unwrap();
    let plot_ordering = peak.is_some_and(|p| o.prototype_refs.contains(&p))
        && valley.is_some_and(|v| o.boundary_refs.contains(&v));
    verdict(
        all_converged
            && in_band(upper.x50_mels, 45.96)
            && in_band(lower.x50_mels, 11.67)
            && ordering
            && plot_ordering,
        format!(
            "upper {:.2} mels at stimulus {} (band 34.47-57.45), lower {:.2} mels at stimulus {} (band 8.75-14.59), {} of {} fits converged, ordering {}",
            upper.x50_mels,
            upper.reference_stim,
            lower.x50_mels,
            lower.reference_stim,
            rows.iter().filter(|r| r.status == FitStatus::Converged).count(),
            rows.len(),
            if ordering && plot_ordering { "holds" } else { "broken" }
        ),
    )
}

fn estimator_cross_check() -> Verdict {
    let (a, b) = endpoints();
    let specs = jpd_core::synth::parametric_specs(a, b, 9, 0.25, PitchContour::rise_fall(117.0)).unwrap();
    let stimuli: Vec<Stimulus> = specs.iter().map(Stimulus::from).collect();
    let magnet = SubjectProfile {
        tracking_gain: 4.2,
        warp_strength: 0.25,
        category_weight: 0.6,
        boundary_stim: 6.5,
        categorization_slope: 1.5,
        ..SubjectProfile::default()
    };
    let profiles = [
        ("noise only", SubjectProfile { id: 1, seed: 101, ..SubjectProfile::default() }),
        ("magnet, weight 0.6", SubjectProfile { id: 2, seed: 102, ..magnet.clone() }),
        ("magnet, weight 0.3", SubjectProfile { id: 3, seed: 103, category_weight: 0.3, ..magnet }),
    ];
    let rule = DifferenceRule::default();
    let probe = Probe::between(stimuli[0], stimuli[8]).unwrap();
    let results: Vec<(f64, f64)> = profiles
        .par_iter()
        .map(|(_, p)| {
            let block = run_block(p, &stimuli, 40).unwrap();
            let table = tabulate(&block, &specs, &rule).unwrap();
            let x50 = fit_jpd(&table, 1, &FitOptions::default()).unwrap().x50;
            let cfg = StaircaseConfig {
                seed: 9,
                ..StaircaseConfig::default()
            };
            let (stair, _) = repeated_search(p, &probe, &rule, 0.5, 0.1, &cfg, 24).unwrap();
            (x50, stair)
        })
        .collect();
    let ok = results
        .iter()
        .all(|(x, s)| x.is_finite() && (s - x).abs() <= 0.2 * x);
    let detail = profiles
        .iter()
        .zip(&results)
        .map(|((name, _), (x, s))| format!("{name}: fit {x:.1} vs staircase {s:.1}"))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(ok, detail)
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: usize| {
        let mut cfg = ExperimentConfig::bundled("exp1-reference").unwrap();
        cfg.output_dir = tmp.path().join(name);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_pipeline(&cfg)).unwrap();
        let mut files = csv_files(&cfg.output_dir);
        for (k, v) in csv_files(&cfg.output_dir.join("report")) {
            files.insert(format!("report/{k}"), v);
        }
        files
    };
    let serial = run("serial", 1);
    let parallel = run("parallel", 8);
    let again = run("again", 8);
    let same = serial == parallel && parallel == again;
    let differing: Vec<&String> = serial
        .iter()
        .filter(|(k, v)| parallel.get(*k) != Some(*v))
        .map(|(k, _)| k)
        .collect();
    verdict(
        same && serial.len() >= 8,
        format!(
            "{} CSV files compared across 1 thread, 8 threads and a repeat; differing: {:?}",
            serial.len(),
            differing
        ),
    )
}

fn main() {
    type Criterion = (&'static str, Duration, fn() -> Verdict);
    let criteria: [Criterion; 9] = [
        ("1 mel round trip", Duration::from_secs(1), mel_round_trip),
        ("2 continuum geometry", Duration::from_secs(10), continuum_geometry),
        ("3 analysis by synthesis", Duration::from_secs(30), analysis_by_synthesis),
        ("4 resynthesis identity and monotonicity", Duration::from_secs(60), resynthesis_series),
        ("5 probit recovery", Duration::from_secs(30), probit_recovery),
        ("6 floor reproduction", Duration::from_secs(10), floor_reproduction),
        ("7 reference limen table", Duration::from_secs(120), reference_limens),
        ("8 estimator cross-check", Duration::from_secs(60), estimator_cross_check),
        ("9 determinism", Duration::from_secs(600), determinism),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let on_time = took <= limit;
        let pass = v.passed && on_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({:.2} s of {} s) {}{}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs(),
            v.detail,
            if on_time { "" } else { " [over time limit]" }
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
