//! JSON-configured experiment runner.
//!
//! One config file describes a seed, latent shape, model, schedule and
//! sampler shared by every run, plus a list of skip variants. The baseline
//! (no skipping) always runs first; every other run is compared with it.
//!
//! Output directory layout:
//!
//! - `<run>.steps.csv`: one row per schedule transition
//! - `<run>.report.json`: config echo, totals, final latent digest, metrics
//! - `<run>.latent.f32` / `<run>.latent.json`: optional raw final latent
//! - `summary.md`, `summary.csv`: aggregate table sorted by SSIM

pub mod config;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::latent::Latent;
use crate::metrics::RunComparison;
use crate::samplers::Trajectory;

pub use config::{ExperimentConfig, PreparedExperiment, PreparedRun, RunConfig};
pub use report::{RunReport, RunStatus, RunTotals, STEP_CSV_HEADER};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl HarnessError {
    /// Process exit code: 2 for config problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOptions {
    pub out_dir: PathBuf,
    /// Run only this variant (plus the baseline).
    pub only: Option<String>,
    pub dump_latents: bool,
}

/// A finished run and its final state, before anything is written.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: RunReport,
    pub final_latent: Option<Latent<f64>>,
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub reports: Vec<RunReport>,
    pub summary_path: PathBuf,
}

impl MatrixOutcome {
    pub fn any_failed(&self) -> bool {
        self.reports.iter().any(|r| r.status == RunStatus::Failed)
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.any_failed())
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

/// Runs one prepared configuration. Numerical failures are recorded in the
/// report rather than returned, keeping the steps completed so far.
pub fn execute_run(experiment: &PreparedExperiment, run: &PreparedRun) -> RunResult {
    let started = Instant::now();
    let trajectory = Trajectory::new(
        run.settings.clone(),
        &experiment.schedule,
        experiment.model.clone(),
        experiment.initial.clone(),
    );
    let (log, nfe, error, latent) = match trajectory {
        Err(e) => (Vec::new(), 0, Some(e), None),
        Ok(mut t) => {
            let mut error = None;
            while !t.is_done() {
                if let Err(e) = t.step() {
                    error = Some(e);
                    break;
                }
            }
            let latent = error.is_none().then(|| t.x().clone());
            (t.log().to_vec(), t.nfe(), error, latent)
        }
    };
    let wall = started.elapsed().as_secs_f64();
    let report = RunReport {
        name: run.echo.name.clone(),
        slug: run.slug.clone(),
        status: if error.is_some() { RunStatus::Failed } else { RunStatus::Ok },
        error: error.map(|e| e.to_string()),
        config: run.echo.clone(),
        totals: RunTotals::from_log(&log, nfe, wall),
        final_latent_sha256: latent.as_ref().map(report::latent_digest),
        latent_dump: None,
        comparison: None,
        steps: log,
    };
    RunResult {
        report,
        final_latent: latent,
    }
}

/// Runs the baseline and every variant, then fills in comparisons against
/// the baseline (the first run).
pub fn run_experiment(experiment: &PreparedExperiment) -> Vec<RunResult> {
    let mut results: Vec<RunResult> = experiment.runs.iter().map(|run| execute_run(experiment, run)).collect();
    let Some((baseline, rest)) = results.split_first_mut() else {
        return results;
    };
    let Some(reference) = baseline.final_latent.clone() else {
        return results;
    };
    let (base_nfe, base_time) = (baseline.report.totals.nfe, baseline.report.totals.wall_time_s);
    for result in std::iter::once(baseline).chain(rest.iter_mut()) {
        if let Some(latent) = &result.final_latent {
            let t = &result.report.totals;
            result.report.comparison =
                RunComparison::compute(&reference, latent, base_nfe, t.nfe, base_time, t.wall_time_s).ok();
        }
    }
    results
}

/// Writes every per-run artifact and the summary tables.
pub fn write_outputs(
    experiment: &PreparedExperiment,
    results: &mut [RunResult],
    options: &MatrixOptions,
) -> Result<PathBuf, HarnessError> {
    let dir = &options.out_dir;
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.clone(),
        source,
    })?;
    for result in results.iter_mut() {
        let slug = result.report.slug.clone();
        if options.dump_latents {
            if let Some(latent) = &result.final_latent {
                result.report.latent_dump = Some(report::write_latent_dump(latent, dir, &slug)?);
            }
        }
        report::write_step_csv(&result.report.steps, &dir.join(format!("{slug}.steps.csv")))?;
        report::write_report_json(&result.report, &dir.join(format!("{slug}.report.json")))?;
    }
    let reports: Vec<RunReport> = results.iter().map(|r| r.report.clone()).collect();
    let summary_path = dir.join("summary.md");
    let markdown = report::summary_markdown(&experiment.config.name, &reports);
    fs::write(&summary_path, markdown).map_err(|source| HarnessError::Io {
        path: summary_path.clone(),
        source,
    })?;
    let csv_path = dir.join("summary.csv");
    fs::write(&csv_path, report::summary_csv(&reports)).map_err(|source| HarnessError::Io { path: csv_path, source })?;
    Ok(summary_path)
}

/// Loads, validates and runs a config file. Nothing is written unless the
/// config is valid.
pub fn run_experiment_matrix(config_path: &Path, options: &MatrixOptions) -> Result<MatrixOutcome, HarnessError> {
    let experiment = load_config(config_path)?.prepare(options.only.as_deref())?;
    let mut results = run_experiment(&experiment);
    let summary_path = write_outputs(&experiment, &mut results, options)?;
    Ok(MatrixOutcome {
        reports: results.into_iter().map(|r| r.report).collect(),
        summary_path,
    })
}

/// Exit code for the outcome of [`run_experiment_matrix`].
pub fn exit_code(outcome: &Result<MatrixOutcome, HarnessError>) -> i32 {
    match outcome {
        Ok(o) => o.exit_code(),
        Err(e) => e.exit_code(),
    }
}
