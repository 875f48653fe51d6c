//! Benchmark suites: every design × model × attempt, rendered as a KPI
//! matrix.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use saarthi_core::config::RunConfig;
use saarthi_core::metrics::{render_report, BenchmarkMatrix, Complexity, Report};
use saarthi_core::pipeline::{HumanInput, NoObserver};
use saarthi_core::record::RunRecord;
use saarthi_core::setup::launch;

use crate::CliError;

/// One design of a suite. Relative paths resolve against the manifest.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchDesign {
    pub design: String,
    pub complexity: Complexity,
    pub spec: PathBuf,
    #[serde(default)]
    pub rtl: Vec<PathBuf>,
    #[serde(default)]
    pub cassette: Option<PathBuf>,
    #[serde(default)]
    pub prover_fixture: Option<PathBuf>,
    #[serde(default)]
    pub prover_cmd: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchManifest {
    pub designs: Vec<BenchDesign>,
    /// Model ids to run each design with; defaults to the base config's.
    #[serde(default)]
    pub models: Vec<String>,
    /// Attempts per (design, model), i.e. the k of pass@k.
    #[serde(default = "one")]
    pub attempts: u32,
    /// Settings shared by every run (HIL mode, iteration caps, ...).
    #[serde(default)]
    pub run: RunConfig,
}

fn one() -> u32 {
    1
}

impl BenchManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bad = |reason: String| CliError::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let mut m: BenchManifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if m.designs.is_empty() {
            return Err(bad("no designs listed".into()));
        }
        if m.attempts == 0 {
            return Err(bad("attempts must be >= 1".into()));
        }
        if m.models.is_empty() {
            m.models.push(m.run.model_id.clone());
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut m.designs {
            resolve(&mut d.spec);
            d.rtl.iter_mut().for_each(resolve);
            d.cassette.iter_mut().for_each(resolve);
            d.prover_fixture.iter_mut().for_each(resolve);
        }
        Ok(m)
    }

    /// The run configuration of one cell.
    pub fn config(&self, design: &BenchDesign, model: &str, out: &Path) -> RunConfig {
        RunConfig {
            model_id: model.to_string(),
            spec_path: design.spec.clone(),
            rtl_paths: design.rtl.clone(),
            cassette: design.cassette.clone(),
            prover_fixture: design.prover_fixture.clone(),
            prover_cmd: design.prover_cmd.clone(),
            out_dir: out.join("runs"),
            ..self.run.clone()
        }
    }
}

pub struct BenchOutcome {
    pub matrix: BenchmarkMatrix,
    pub records: Vec<RunRecord>,
    pub report: Report,
}

/// Runs the whole suite sequentially and writes `report.md` and
/// `report.csv` under `out`.
pub fn run_bench(
    manifest: &BenchManifest,
    out: &Path,
    human: &dyn HumanInput,
) -> Result<BenchOutcome, CliError> {
    let mut matrix = BenchmarkMatrix::default();
    let mut records = Vec::new();
    for design in &manifest.designs {
        matrix.add_design(&design.design, design.complexity);
    }
    for design in &manifest.designs {
        for model in &manifest.models {
            for attempt in 1..=manifest.attempts {
                let config = manifest.config(design, model, out);
                let record = launch(&config, human, &NoObserver, None)?;
                matrix.insert(&design.design, model, attempt, record.kpi)?;
                records.push(record);
            }
        }
    }
    let report = render_report(&matrix, &records);
    fs::create_dir_all(out)?;
    fs::write(out.join("report.md"), &report.markdown)?;
    fs::write(out.join("report.csv"), &report.csv)?;
    Ok(BenchOutcome {
        matrix,
        records,
        report,
    })
}
