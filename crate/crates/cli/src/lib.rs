//! Batch runner for `sfde-core` experiments.
//!
//! One experiment per invocation: the configuration is validated in full,
//! the experiment runs, and `report.json` plus `plotdata.csv` (and optionally
//! `paths.csv` / `samples.csv`) are written to the output directory. Reports
//! contain no timestamps or host details, so identical inputs give
//! byte-identical files.

pub mod config;
pub mod error;
pub mod experiments;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{ExperimentConfig, ExperimentKind, Overrides, Resolved};
pub use error::CliError;
pub use experiments::{cell, Check, Outcome, PlotRow, Table};

pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "plotdata.csv";
pub const PATHS_FILE: &str = "paths.csv";
pub const SAMPLES_FILE: &str = "samples.csv";

#[derive(Debug, Clone, Serialize)]
pub struct Derived {
    pub dt: f64,
    pub n_memory: usize,
    pub r: f64,
    pub horizon: f64,
    pub steps: usize,
    pub dimension: usize,
    pub lipschitz: f64,
    pub memory_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'static str,
    pub master_seed: u64,
    pub n_paths: usize,
    /// Resolved configuration; re-running it reproduces this report.
    pub config: ExperimentConfig,
    pub derived: Derived,
    pub results: serde_json::Value,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Report and the files written for it.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: Report,
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.report.pass {
            0
        } else {
            1
        }
    }
}

pub fn build_report(res: &Resolved, outcome: &Outcome) -> Report {
    let grid = res.solver.grid();
    Report {
        tool: "sfde",
        version: env!("CARGO_PKG_VERSION"),
        experiment: res.kind.name(),
        master_seed: res.master_seed,
        n_paths: res.n_paths,
        config: res.canonical.clone(),
        derived: Derived {
            dt: grid.dt(),
            n_memory: grid.n_memory(),
            r: grid.memory(),
            horizon: res.solver.horizon(),
            steps: res.solver.steps(),
            dimension: grid.dimension(),
            lipschitz: res.solver.drift().lipschitz(),
            memory_bound: res.solver.drift().memory.declared_bound(grid.dimension()),
        },
        results: outcome.results.clone(),
        pass: outcome.checks.iter().all(|c| c.pass),
        checks: outcome.checks.clone(),
    }
}

/// Loads, validates and runs an experiment, writing its outputs.
pub fn run_file(kind: ExperimentKind, config_path: &Path, overrides: &Overrides) -> Result<RunSummary, CliError> {
    let config = ExperimentConfig::load(config_path)?;
    run_config(kind, &config, overrides)
}

pub fn run_config(kind: ExperimentKind, config: &ExperimentConfig, overrides: &Overrides) -> Result<RunSummary, CliError> {
    let resolved = config.resolve(kind, overrides)?;
    let outcome = experiments::run(&resolved)?;
    let report = build_report(&resolved, &outcome);
    let files = write_outputs(&resolved.out_dir, &report, &outcome)?;
    Ok(RunSummary { report, files })
}

/// Writes all outputs inside `dir` and returns their paths.
pub fn write_outputs(dir: &Path, report: &Report, outcome: &Outcome) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let path = dir.join(REPORT_FILE);
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&path, text)?;
    files.push(path);

    let path = dir.join(PLOT_FILE);
    write_plotdata(&path, &outcome.plot)?;
    files.push(path);

    for (name, table) in [(PATHS_FILE, &outcome.paths), (SAMPLES_FILE, &outcome.samples)] {
        if let Some(t) = table {
            let path = dir.join(name);
            write_table(&path, t)?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Long-format CSV with columns `series,x,y,y_err`; header-only when empty.
pub fn write_plotdata(path: &Path, rows: &[PlotRow]) -> Result<(), CliError> {
    let table = Table {
        header: ["series", "x", "y", "y_err"].map(String::from).to_vec(),
        rows: rows
            .iter()
            .map(|r| vec![r.series.clone(), cell(r.x), cell(r.y), cell(r.y_err)])
            .collect(),
    };
    write_table(path, &table)
}

pub fn write_table(path: &Path, table: &Table) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}
