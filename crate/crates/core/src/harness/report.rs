use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::latent::Latent;
use crate::metrics::RunComparison;
use crate::samplers::StepLog;
use crate::skip::DecisionKind;

use super::config::RunConfig;
use super::HarnessError;

pub const STEP_CSV_HEADER: &str = "step_index,sigma_current,sigma_next,decision,reason,predictor_order,epsilon_norm,learning_ratio,validation_reason,cumulative_nfe,step_wall_time_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTotals {
    pub nfe: usize,
    pub real_steps: usize,
    pub skip_steps: usize,
    pub wall_time_s: f64,
}

impl RunTotals {
    pub fn from_log(log: &[StepLog], nfe: usize, wall_time_s: f64) -> Self {
        let skip_steps = log.iter().filter(|l| l.decision == DecisionKind::Skip).count();
        Self {
            nfe,
            real_steps: log.len() - skip_steps,
            skip_steps,
            wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub slug: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: RunConfig,
    pub totals: RunTotals,
    /// SHA-256 of the final latent as little-endian f64 values.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_latent_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_dump: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<RunComparison>,
    pub steps: Vec<StepLog>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn latent_digest(latent: &Latent<f64>) -> String {
    let mut hasher = Sha256::new();
    for v in latent.as_slice() {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

fn opt<T: ToString>(value: Option<T>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Step log as CSV text. Floats use Rust's shortest round-trip formatting.
pub fn step_csv(log: &[StepLog]) -> String {
    let mut out = String::with_capacity(64 * (log.len() + 1));
    out.push_str(STEP_CSV_HEADER);
    out.push('\n');
    for row in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.step_index,
            row.sigma_current,
            row.sigma_next,
            row.decision,
            row.reason,
            opt(row.predictor_order),
            row.epsilon_norm,
            row.learning_ratio,
            opt(row.validation_reason),
            row.cumulative_nfe,
            row.step_wall_time_s,
        );
    }
    out
}

pub fn write_step_csv(log: &[StepLog], path: &Path) -> Result<(), HarnessError> {
    fs::write(path, step_csv(log)).map_err(io_err(path))
}

pub fn write_report_json(report: &RunReport, path: &Path) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| HarnessError::Serialize(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Serialize)]
struct LatentSidecar<'a> {
    file: &'a str,
    shape: &'a [usize],
    dtype: &'static str,
    byte_order: &'static str,
}

/// Writes `<slug>.latent.f32` (flat little-endian f32) and a JSON sidecar
/// describing its shape. Returns the data file name.
pub fn write_latent_dump(latent: &Latent<f64>, dir: &Path, slug: &str) -> Result<String, HarnessError> {
    let file = format!("{slug}.latent.f32");
    let data_path = dir.join(&file);
    fs::write(&data_path, latent.to_le_f32_bytes()).map_err(io_err(&data_path))?;
    let sidecar = LatentSidecar {
        file: &file,
        shape: latent.shape(),
        dtype: "float32",
        byte_order: "little",
    };
    let side_path = dir.join(format!("{slug}.latent.json"));
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| HarnessError::Serialize(e.to_string()))?;
    fs::write(&side_path, text + "\n").map_err(io_err(&side_path))?;
    Ok(file)
}

/// Reports ordered for the summary table: successful runs by descending
/// SSIM (runs without SSIM after them), failed runs last.
pub fn summary_order(reports: &[RunReport]) -> Vec<&RunReport> {
    let mut rows: Vec<&RunReport> = reports.iter().collect();
    let key = |r: &RunReport| match (r.status, r.comparison.as_ref().and_then(|c| c.ssim)) {
        (RunStatus::Ok, Some(s)) => (0, -s),
        (RunStatus::Ok, None) => (1, 0.0),
        (RunStatus::Failed, _) => (2, 0.0),
    };
    rows.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    rows
}

fn fixed(value: Option<f64>, digits: usize) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

pub fn summary_markdown(title: &str, reports: &[RunReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {title}\n");
    out.push_str("Quality metrics compare each run's final latent with the same-seed baseline. ");
    out.push_str("SSIM is computed on latent channels, not decoded images, so absolute values are only meaningful relative to each other.\n\n");
    out.push_str("| variant | SSIM | RMSE | MAE | NFE | NFE-reduction % | time (s) | time-saved % | status |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in summary_order(reports) {
        let c = r.comparison.as_ref();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.name,
            fixed(c.and_then(|c| c.ssim), 6),
            fixed(c.map(|c| c.rmse), 6),
            fixed(c.map(|c| c.mae), 6),
            r.totals.nfe,
            fixed(c.map(|c| c.nfe_reduction_pct), 1),
            fixed(Some(r.totals.wall_time_s), 4),
            fixed(c.and_then(|c| c.time_saved_pct), 1),
            match (&r.status, &r.error) {
                (RunStatus::Failed, Some(e)) => format!("failed: {e}"),
                (RunStatus::Failed, None) => "failed".into(),
                (RunStatus::Ok, _) => "ok".into(),
            }
        );
    }
    out
}

pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("variant,ssim,rmse,mae,nfe,nfe_reduction_pct,time_s,time_saved_pct,status\n");
    for r in summary_order(reports) {
        let c = r.comparison.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.slug,
            opt(c.and_then(|c| c.ssim)),
            opt(c.map(|c| c.rmse)),
            opt(c.map(|c| c.mae)),
            r.totals.nfe,
            opt(c.map(|c| c.nfe_reduction_pct)),
            r.totals.wall_time_s,
            opt(c.and_then(|c| c.time_saved_pct)),
            match r.status {
                RunStatus::Ok => "ok",
                RunStatus::Failed => "failed",
            }
        );
    }
    out
}
