use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use jpd::config::ExperimentConfig;
use jpd::error::Error;
use jpd::pipeline::{self, run_pipeline, RunReport};
use jpd::report::{render_report, CATEGORIZATION_SVG, INVERSE_STEEPNESS_SVG, RESPONSES_SVG, SUMMARY_CSV, X50_SVG};
use jpd::tables::{read_csv, JpdRow, JpdRowKind, RunDir, RESPONSE_TOKENS, TOKEN_LISTING};
use jpd_core::psychometrics::FitStatus;

fn jpd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jpd"))
}

fn csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::bundled("identity").unwrap();
    for g in &mut cfg.groups {
        for s in &mut g.subjects {
            s.production_noise = jpd_core::simulator::SubjectProfile::default().production_noise;
        }
    }
    cfg.reps = 3;
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn identity_subjects_give_degenerate_fits_and_a_full_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::bundled("identity").unwrap();
    cfg.output_dir = tmp.path().join("identity");
    let report = run_pipeline(&cfg).unwrap();
    let rows: Vec<JpdRow> = read_csv(&cfg.output_dir.join("jpd.csv")).unwrap();
    let refs: Vec<&JpdRow> = rows.iter().filter(|r| r.row == JpdRowKind::Reference).collect();
    assert_eq!(refs.len(), 9);
    assert!(refs.iter().all(|r| r.status == FitStatus::Degenerate && !r.usable));
    assert!(report.summary.upper.is_none() && report.summary.lower.is_none());
    for name in [CATEGORIZATION_SVG, RESPONSES_SVG, X50_SVG, INVERSE_STEEPNESS_SVG, SUMMARY_CSV] {
        assert!(cfg.output_dir.join("report").join(name).is_file(), "{name}");
    }
    assert_eq!(RunReport::read(&cfg.output_dir).unwrap().summary, report.summary);
}

#[test]
fn later_stages_on_an_empty_directory_name_the_missing_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path()).resolve().unwrap();
    let dir = RunDir::new(tmp.path());
    for result in [
        pipeline::analyze(&cfg, &dir).map(|_| ()),
        pipeline::tabulate(&cfg, &dir).map(|_| ()),
        pipeline::fit(&cfg, &dir).map(|_| ()),
        render_report(tmp.path()).map(|_| ()),
    ] {
        assert!(matches!(result, Err(Error::MissingIntermediate(_))), "{result:?}");
    }
}

#[test]
fn cli_stage_failures_are_tagged_and_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = jpd()
        .args(["fit", "--config", "builtin:identity", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage fit failed"), "{err}");
    assert!(err.contains("difference_table.csv"), "{err}");

    let out = jpd().args(["run", "--config", "builtin:no-such-config"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_stages_one_by_one_match_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let staged = tmp.path().join("staged");
    let whole = tmp.path().join("whole");
    for stage in ["synth", "simulate", "analyze", "tabulate", "fit", "report"] {
        let out = jpd()
            .args([stage, "--config", "builtin:identity", "--seed", "11", "--out"])
            .arg(&staged)
            .output()
            .unwrap();
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = jpd()
        .args(["run", "--config", "builtin:identity", "--seed", "11", "--out"])
        .arg(&whole)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Upper bound"));
    assert_eq!(csvs(&staged), csvs(&whole));
    assert_eq!(csvs(&staged.join("report")), csvs(&whole.join("report")));

    let listing = jpd().arg("configs").output().unwrap();
    let names = String::from_utf8_lossy(&listing.stdout);
    assert!(names.contains("builtin:exp1-reference") && names.contains("builtin:exp2-reference"));
}

#[test]
fn recorded_audio_runs_through_the_same_downstream_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sim = small_config(&tmp.path().join("simulated"));
    sim.render_responses = true;
    let simulated = run_pipeline(&sim).unwrap();
    assert!(simulated.summary.same_stimulus_rate.is_some());

    let sim_dir = &sim.output_dir;
    std::fs::copy(sim_dir.join(RESPONSE_TOKENS), sim_dir.join(TOKEN_LISTING)).unwrap();
    let mut rec = small_config(&tmp.path().join("recorded"));
    rec.seed = None;
    rec.response_audio = Some(sim_dir.clone());
    let recorded = run_pipeline(&rec).unwrap();

    let a: Vec<JpdRow> = read_csv(&sim_dir.join("jpd.csv")).unwrap();
    let b: Vec<JpdRow> = read_csv(&rec.output_dir.join("jpd.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(sim_dir.join("responses.csv")).unwrap(),
        std::fs::read(rec.output_dir.join("responses.csv")).unwrap()
    );
    assert_eq!(recorded.summary.upper, simulated.summary.upper);
    assert!(rec.output_dir.join("report").join(X50_SVG).is_file());
}
