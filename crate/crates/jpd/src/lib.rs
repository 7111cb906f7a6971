//! File-based experiment pipeline around `jpd-core`.
//!
//! A run is a directory. Each stage reads the files written by the stages
//! before it and writes its own, so any stage can be rerun or replaced:
//!
//! | stage      | reads                                  | writes                                              |
//! |------------|----------------------------------------|-----------------------------------------------------|
//! | synth      | config                                 | `stimuli/*.wav`, `continuum.json`                   |
//! | simulate   | `continuum.json`                       | `subjects.csv`, `categorization.csv`, `responses.csv` or `response_tokens.csv` + WAVs |
//! | analyze    | WAVs, token listings                   | `stimulus_measurements.csv`, `resynthesis_check.json`, `responses.csv` |
//! | tabulate   | `responses.csv`, `continuum.json`      | `difference_table.csv`                              |
//! | fit        | `difference_table.csv`                 | `jpd.csv`, `categorization_fits.csv`, `fit_summary.json` |
//! | report     | everything above                       | `report/*.svg`, `report/summary.csv`, `report/summary.txt` |
//! | staircase  | `continuum.json`, `subjects.csv`       | `staircase.csv`                                     |
//!
//! [`pipeline::run_pipeline`] runs them in order and writes `manifest.json`.

pub mod audio;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod tables;

pub use jpd_core as core;

pub use crate::config::ExperimentConfig;
pub use crate::error::{Error, Result, Stage};
pub use crate::pipeline::{run_pipeline, RunReport};
