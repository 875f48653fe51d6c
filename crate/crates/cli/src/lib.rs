//! Subcommand implementations behind the `saarthi` binary.

pub mod bench;
pub mod human;

use std::path::{Path, PathBuf};

use thiserror::Error;

use saarthi_core::metrics::{render_workflow_table, success_rate, MetricsError, WorkflowRow};
use saarthi_core::record::RunRecord;
use saarthi_core::setup::SetupError;
use saarthi_core::store::{list_runs, load_run, StoreError};

pub use bench::{run_bench, BenchDesign, BenchManifest, BenchOutcome};
pub use human::PromptHuman;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("bench manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("service: {0}")]
    Service(#[from] saarthi_service::ApiError),
}

impl CliError {
    /// 2 for problems with what the user asked for, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Setup(SetupError::Config(_)) | CliError::Manifest { .. } => 2,
            CliError::Service(saarthi_service::ApiError::Unprocessable(_)) => 2,
            _ => 1,
        }
    }
}

/// The lines `saarthi run` prints once a run ends.
pub fn run_summary(record: &RunRecord, out_dir: &Path) -> String {
    let mut s = format!(
        "run {}: {} (stage {})\nproperties: {}, proven {}, coverage {}\nartifacts: {}\n",
        record.run_id,
        record.outcome.as_str(),
        record.stage_reached.as_str(),
        record.kpi.n_properties,
        record.kpi.proven_rate,
        record.kpi.coverage_rate,
        out_dir.join(&record.run_id).display()
    );
    if let Some(why) = &record.failure {
        s.push_str(&format!("failure: {why}\n"));
    }
    s
}

/// Reads every run under `dir`; unreadable runs become warnings.
pub fn load_runs(dir: &Path) -> Result<(Vec<RunRecord>, Vec<String>), CliError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for run in list_runs(dir)? {
        match load_run(&run) {
            Ok(r) => records.push(r),
            Err(e) => warnings.push(format!("skipping {}: {e}", run.display())),
        }
    }
    Ok((records, warnings))
}

/// Markdown overview of stored runs: success rate, one row per run, and
/// the prover verdict shares of each.
pub fn render_runs_report(records: &[RunRecord]) -> Result<String, CliError> {
    let mut md = String::from("# Runs\n\n");
    if records.is_empty() {
        md.push_str("No runs found.\n");
        return Ok(md);
    }
    let ok = records
        .iter()
        .filter(|r| r.outcome == saarthi_core::record::Outcome::Success)
        .count();
    md.push_str(&format!(
        "Success rate: {} ({ok} of {})\n\n",
        success_rate(records)?,
        records.len()
    ));
    md.push_str("| Run | Model | Spec | Outcome | Stage | # Properties | % Proven | % Coverage |\n|---|---|---|---|---|---|---|---|\n");
    for r in records {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.run_id,
            r.config.model_id,
            r.config.spec_path.display(),
            r.outcome.as_str(),
            r.stage_reached.as_str(),
            r.kpi.n_properties,
            r.kpi.proven_rate,
            r.kpi.coverage_rate
        ));
    }
    let rows: Vec<WorkflowRow> = records
        .iter()
        .map(|r| WorkflowRow::from_result(&r.run_id, &r.prover_result))
        .collect();
    md.push('\n');
    md.push_str(&render_workflow_table(&rows));
    Ok(md)
}
