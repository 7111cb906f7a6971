//! Command-line front end for the experiment pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jpd::config::{bundled_names, ExperimentConfig};
use jpd::error::{Error, Result, Stage};
use jpd::pipeline::{self, StageOutputs};
use jpd::report::render_report;
use jpd::tables::RunDir;

#[derive(Parser)]
#[command(name = "jpd", version, about = "Just producible difference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Config file, or `builtin:NAME` for a bundled config.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the stimulus continua.
    Synth,
    /// Run the simulated subjects.
    Simulate,
    /// Measure stimuli and response audio.
    Analyze,
    /// Count pairwise differences.
    Tabulate,
    /// Fit the limens.
    Fit,
    /// Draw figures and the summary table.
    Report,
    /// Every stage in order.
    Run,
    /// Adaptive staircase search.
    Staircase,
    /// List the bundled configs.
    Configs,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let spec = common.config.as_deref().ok_or_else(|| {
        Error::Config("--config is required (a file or builtin:NAME)".into())
    })?;
    let mut cfg = ExperimentConfig::load(spec)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.resolve()
}

fn print_outputs(stage: Stage, out: &StageOutputs) {
    for f in &out.files {
        println!("{stage}: wrote {f}");
    }
    if out.audio_files > 0 {
        println!("{stage}: wrote {} WAV files", out.audio_files);
    }
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
}

fn run_stage(
    stage: Stage,
    common: &Common,
    f: impl FnOnce(&ExperimentConfig, &RunDir) -> Result<StageOutputs>,
) -> Result<()> {
    let cfg = load(common)?;
    let dir = RunDir::new(&cfg.output_dir);
    let out = f(&cfg, &dir).map_err(|e| e.in_stage(stage))?;
    print_outputs(stage, &out);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Synth => run_stage(Stage::Synth, common, pipeline::synth),
        Command::Simulate => run_stage(Stage::Simulate, common, pipeline::simulate),
        Command::Analyze => run_stage(Stage::Analyze, common, pipeline::analyze),
        Command::Tabulate => run_stage(Stage::Tabulate, common, pipeline::tabulate),
        Command::Fit => run_stage(Stage::Fit, common, |c, d| pipeline::fit(c, d).map(|r| r.0)),
        Command::Staircase => run_stage(Stage::Staircase, common, |c, d| {
            let (out, rows) = pipeline::staircase(c, d)?;
            for r in rows.iter().filter(|r| r.run.is_none()) {
                println!(
                    "subject {}: {:.2} mels toward stimulus {} (target p {})",
                    r.subject, r.distance_mels, r.toward_stim, r.target_p
                );
            }
            Ok(out)
        }),
        Command::Report => {
            let dir = match (&common.out, &common.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => load(common)?.output_dir,
                (None, None) => {
                    return Err(Error::Config("report needs --out or --config".into()))
                }
            };
            let files = render_report(&dir).map_err(|e| e.in_stage(Stage::Report))?;
            for f in files {
                println!("report: wrote {f}");
            }
            Ok(())
        }
        Command::Run => {
            let cfg = load(common)?;
            let report = pipeline::run_pipeline(&cfg)?;
            for s in &report.stages {
                print_outputs(s.stage, &s.outputs);
            }
            let dir = RunDir::new(&report.config.output_dir);
            let text = std::fs::read_to_string(dir.report(jpd::report::SUMMARY_TXT))
                .map_err(|e| Error::io(dir.report(jpd::report::SUMMARY_TXT), e))?;
            print!("{text}");
            Ok(())
        }
        Command::Configs => {
            for name in bundled_names() {
                println!("builtin:{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(e.root());
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
