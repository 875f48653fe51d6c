//! Prover backends and the result-file protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sva::SvaBlock;

#[derive(Debug, Error)]
pub enum ProverError {
    #[error("results line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace {path}: {message}")]
    Trace { path: String, message: String },
    #[error("prover fixture: {0}")]
    Fixture(String),
    #[error("prover i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssertionStatus {
    Proven,
    Cex,
    Inconclusive,
    Error,
}

impl AssertionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AssertionStatus::Proven => "proven",
            AssertionStatus::Cex => "cex",
            AssertionStatus::Inconclusive => "inconclusive",
            AssertionStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverStatus {
    Covered,
    Unreachable,
    /// Reachability not established by the backend.
    Uncovered,
}

impl CoverStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CoverStatus::Covered => "covered",
            CoverStatus::Unreachable => "unreachable",
            CoverStatus::Uncovered => "uncovered",
        }
    }

    fn parse(word: &str) -> Option<Self> {
        match word {
            "covered" => Some(CoverStatus::Covered),
            "unreachable" => Some(CoverStatus::Unreachable),
            "uncovered" => Some(CoverStatus::Uncovered),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CexStep {
    pub time: u64,
    pub signals: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CexTrace {
    pub failing_property: String,
    pub steps: Vec<CexStep>,
}

impl CexTrace {
    pub fn validate(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err("trace has no steps".into());
        }
        if let Some(w) = self.steps.windows(2).find(|w| w[1].time <= w[0].time) {
            return Err(format!(
                "cycle indices must strictly increase ({} then {})",
                w[0].time, w[1].time
            ));
        }
        Ok(())
    }

    /// Value table, one row per cycle, columns sorted by signal name.
    pub fn to_table(&self) -> String {
        let names: BTreeSet<&str> = self
            .steps
            .iter()
            .flat_map(|s| s.signals.keys().map(String::as_str))
            .collect();
        let mut out = String::from("| cycle |");
        for n in &names {
            let _ = write!(out, " {n} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(names.len()));
        for step in &self.steps {
            let _ = write!(out, "\n| {} |", step.time);
            for n in &names {
                let v = step.signals.get(*n).map_or("", String::as_str);
                let _ = write!(out, " {v} |");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionVerdict {
    pub status: AssertionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<CexTrace>,
    /// Trace location as reported by the backend, relative to its task dir.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl AssertionVerdict {
    pub fn of(status: AssertionStatus) -> Self {
        AssertionVerdict {
            status,
            trace: None,
            trace_path: None,
            diagnostic: None,
        }
    }

    fn with_diagnostic(status: AssertionStatus, diagnostic: impl Into<String>) -> Self {
        AssertionVerdict {
            diagnostic: Some(diagnostic.into()),
            ..AssertionVerdict::of(status)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverVerdict {
    pub status: CoverStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProverResult {
    pub assertions: BTreeMap<String, AssertionVerdict>,
    pub covers: BTreeMap<String, CoverVerdict>,
    #[serde(default)]
    pub wall_time: Duration,
}

impl ProverResult {
    pub fn count(&self, status: AssertionStatus) -> usize {
        self.assertions.values().filter(|v| v.status == status).count()
    }

    pub fn count_covers(&self, status: CoverStatus) -> usize {
        self.covers.values().filter(|v| v.status == status).count()
    }

    /// Keeps exactly the submitted ids: missing ones become inconclusive,
    /// anything else the backend reported is dropped.
    pub fn normalize_to<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>) {
        let ids: BTreeSet<&str> = ids.into_iter().collect();
        self.assertions.retain(|k, _| ids.contains(k.as_str()));
        for id in ids {
            self.assertions.entry(id.to_string()).or_insert_with(|| {
                AssertionVerdict::with_diagnostic(
                    AssertionStatus::Inconclusive,
                    "backend reported no verdict",
                )
            });
        }
    }

    /// Loads every referenced trace file relative to `base`.
    pub fn load_traces(&mut self, base: &Path) -> Result<(), ProverError> {
        for v in self.assertions.values_mut() {
            let Some(rel) = &v.trace_path else { continue };
            let err = |message: String| ProverError::Trace {
                path: rel.clone(),
                message,
            };
            let text = fs::read_to_string(base.join(rel)).map_err(|e| err(e.to_string()))?;
            let trace: CexTrace = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
            trace.validate().map_err(err)?;
            v.trace = Some(trace);
        }
        Ok(())
    }

    /// Serializes back into the results-file grammar.
    pub fn to_results_txt(&self) -> String {
        let mut out = String::new();
        for (id, v) in &self.assertions {
            let _ = write!(out, "assert {id} {}", v.status.as_str());
            if let Some(p) = &v.trace_path {
                let _ = write!(out, " trace={p}");
            }
            out.push('\n');
        }
        for (id, c) in &self.covers {
            let _ = writeln!(out, "cover {id} {}", c.status.as_str());
        }
        out
    }
}

/// Parses a results file. Unknown assertion statuses become `Error` verdicts;
/// anything outside the grammar is a positioned parse error.
pub fn parse_prover_log(text: &str) -> Result<ProverResult, ProverError> {
    let mut result = ProverResult::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ProverError::Parse { line, message };
        let words: Vec<&str> = raw.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        match words[0] {
            "assert" => {
                if !(3..=4).contains(&words.len()) {
                    return Err(err(format!(
                        "expected `assert <id> <status> [trace=<path>]`, got `{}`",
                        raw.trim()
                    )));
                }
                let id = words[1];
                let status = words[2];
                let trace_path = match words.get(3) {
                    None => None,
                    Some(w) => match w.strip_prefix("trace=") {
                        Some(p) if !p.is_empty() => Some(p.to_string()),
                        _ => return Err(err(format!("expected `trace=<path>`, got `{w}`"))),
                    },
                };
                let mut verdict = match status {
                    "proven" => AssertionVerdict::of(AssertionStatus::Proven),
                    "cex" => AssertionVerdict::of(AssertionStatus::Cex),
                    "inconclusive" => AssertionVerdict::of(AssertionStatus::Inconclusive),
                    "error" => AssertionVerdict::of(AssertionStatus::Error),
                    other => AssertionVerdict::with_diagnostic(
                        AssertionStatus::Error,
                        format!("line {line}: unknown status `{other}`"),
                    ),
                };
                if trace_path.is_some() && verdict.status != AssertionStatus::Cex {
                    return Err(err(format!("trace given for non-cex status `{status}`")));
                }
                verdict.trace_path = trace_path;
                if result.assertions.insert(id.to_string(), verdict).is_some() {
                    return Err(err(format!("duplicate assertion id `{id}`")));
                }
            }
            "cover" => {
                if words.len() != 3 {
                    return Err(err(format!(
                        "expected `cover <id> covered|unreachable`, got `{}`",
                        raw.trim()
                    )));
                }
                let status = CoverStatus::parse(words[2])
                    .ok_or_else(|| err(format!("unknown cover status `{}`", words[2])))?;
                if result
                    .covers
                    .insert(words[1].to_string(), CoverVerdict { status })
                    .is_some()
                {
                    return Err(err(format!("duplicate cover id `{}`", words[1])));
                }
            }
            other => return Err(err(format!("unknown record kind `{other}`"))),
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtlSource {
    pub path: String,
    pub content: String,
}

pub trait ProverBackend: Send + Sync {
    fn run(&self, rtl: &[RtlSource], properties: &[(String, SvaBlock)])
        -> Result<ProverResult, ProverError>;
}

impl<B: ProverBackend + ?Sized> ProverBackend for std::sync::Arc<B> {
    fn run(
        &self,
        rtl: &[RtlSource],
        properties: &[(String, SvaBlock)],
    ) -> Result<ProverResult, ProverError> {
        (**self).run(rtl, properties)
    }
}

/// Runs a backend and pins the verdict set to the submitted ids.
pub fn prove(
    backend: &dyn ProverBackend,
    rtl: &[RtlSource],
    properties: &[(String, SvaBlock)],
) -> Result<ProverResult, ProverError> {
    let mut result = backend.run(rtl, properties)?;
    result.normalize_to(properties.iter().map(|(id, _)| id.as_str()));
    Ok(result)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FixtureAssertion {
    Status(AssertionStatus),
    Full {
        status: AssertionStatus,
        #[serde(default)]
        trace: Option<CexTrace>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureCover {
    #[serde(default = "uncovered")]
    status: CoverStatus,
    /// Submitting any of these property ids makes the cover reachable.
    #[serde(default)]
    covered_by: Vec<String>,
}

fn uncovered() -> CoverStatus {
    CoverStatus::Uncovered
}

/// Verdict for any submitted code containing `contains` (compared with
/// whitespace collapsed); checked before the per-id map.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodeRule {
    contains: String,
    status: AssertionStatus,
    #[serde(default)]
    trace: Option<CexTrace>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Fixture {
    #[serde(default)]
    assertions: BTreeMap<String, FixtureAssertion>,
    #[serde(default)]
    by_code: Vec<CodeRule>,
    #[serde(default)]
    covers: BTreeMap<String, FixtureCover>,
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Verdicts looked up from a fixture keyed by property id. Unmapped ids are
/// inconclusive. Immutable after construction.
#[derive(Debug, Clone, Default)]
pub struct MockProver {
    fixture: Fixture,
}

impl MockProver {
    pub fn new(assertions: impl IntoIterator<Item = (String, AssertionStatus)>) -> Self {
        MockProver {
            fixture: Fixture {
                assertions: assertions
                    .into_iter()
                    .map(|(k, v)| (k, FixtureAssertion::Status(v)))
                    .collect(),
                ..Fixture::default()
            },
        }
    }

    /// Adds a cover point with a base status, upgraded to covered when any of
    /// `covered_by` is among the submitted properties.
    pub fn with_cover(mut self, id: &str, status: CoverStatus, covered_by: &[&str]) -> Self {
        self.fixture.covers.insert(
            id.to_string(),
            FixtureCover {
                status,
                covered_by: covered_by.iter().map(|s| s.to_string()).collect(),
            },
        );
        self
    }

    pub fn with_trace(mut self, id: &str, trace: CexTrace) -> Self {
        self.fixture.assertions.insert(
            id.to_string(),
            FixtureAssertion::Full {
                status: AssertionStatus::Cex,
                trace: Some(trace),
            },
        );
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ProverError> {
        let fixture: Fixture =
            serde_json::from_str(text).map_err(|e| ProverError::Fixture(e.to_string()))?;
        for (id, a) in &fixture.assertions {
            if let FixtureAssertion::Full { trace: Some(t), .. } = a {
                t.validate()
                    .map_err(|m| ProverError::Fixture(format!("{id}: {m}")))?;
            }
        }
        for r in &fixture.by_code {
            if let Some(t) = &r.trace {
                t.validate()
                    .map_err(|m| ProverError::Fixture(format!("rule `{}`: {m}", r.contains)))?;
            }
        }
        Ok(MockProver { fixture })
    }

    pub fn open(path: &Path) -> Result<Self, ProverError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
            .map_err(|e| ProverError::Fixture(format!("{}: {e}", path.display())))
    }
}

impl ProverBackend for MockProver {
    fn run(
        &self,
        _rtl: &[RtlSource],
        properties: &[(String, SvaBlock)],
    ) -> Result<ProverResult, ProverError> {
        let mut result = ProverResult::default();
        for (id, block) in properties {
            let code = collapse(&block.code);
            let rule = self
                .fixture
                .by_code
                .iter()
                .find(|r| code.contains(&collapse(&r.contains)));
            if let Some(r) = rule {
                let verdict = AssertionVerdict {
                    trace: r.trace.clone(),
                    ..AssertionVerdict::of(r.status)
                };
                result.assertions.insert(id.clone(), verdict);
                continue;
            }
            let verdict = match self.fixture.assertions.get(id) {
                None => AssertionVerdict::of(AssertionStatus::Inconclusive),
                Some(FixtureAssertion::Status(s)) => AssertionVerdict::of(*s),
                Some(FixtureAssertion::Full { status, trace }) => AssertionVerdict {
                    trace: trace.clone(),
                    ..AssertionVerdict::of(*status)
                },
            };
            result.assertions.insert(id.clone(), verdict);
        }
        let submitted: BTreeSet<&str> = properties.iter().map(|(id, _)| id.as_str()).collect();
        for (id, c) in &self.fixture.covers {
            let status = if c.covered_by.iter().any(|p| submitted.contains(p.as_str())) {
                CoverStatus::Covered
            } else {
                c.status
            };
            result.covers.insert(id.clone(), CoverVerdict { status });
        }
        Ok(result)
    }
}

/// Drives an external tool through a task directory:
/// `design.f`, `rtl/*`, `props.sva` and a `run.sh` hook wrapping the
/// configured command. The tool answers in `results.txt`.
#[derive(Debug, Clone)]
pub struct SubprocessProver {
    command: String,
    work_root: Option<PathBuf>,
    keep_task_dirs: bool,
}

pub const RESULTS_FILE: &str = "results.txt";

impl SubprocessProver {
    pub fn new(command: impl Into<String>) -> Self {
        SubprocessProver {
            command: command.into(),
            work_root: None,
            keep_task_dirs: false,
        }
    }

    pub fn in_dir(mut self, root: impl Into<PathBuf>) -> Self {
        self.work_root = Some(root.into());
        self
    }

    pub fn keep_task_dirs(mut self, keep: bool) -> Self {
        self.keep_task_dirs = keep;
        self
    }

    /// Writes the task directory contents.
    pub fn write_task(
        &self,
        dir: &Path,
        rtl: &[RtlSource],
        properties: &[(String, SvaBlock)],
    ) -> Result<(), ProverError> {
        fs::create_dir_all(dir.join("rtl"))?;
        let mut file_list = String::new();
        for (i, src) in rtl.iter().enumerate() {
            let base = Path::new(&src.path)
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("src{i}.sv"));
            let rel = format!("rtl/{i:02}_{base}");
            fs::write(dir.join(&rel), &src.content)?;
            file_list.push_str(&rel);
            file_list.push('\n');
        }
        fs::write(dir.join("design.f"), file_list)?;

        let mut props = String::new();
        for (id, block) in properties {
            let _ = writeln!(props, "// property {id}\n{}\n", block.code);
        }
        fs::write(dir.join("props.sva"), props)?;
        fs::write(
            dir.join("run.sh"),
            format!("#!/bin/sh\n# task: design.f props.sva -> {RESULTS_FILE}\n{}\n", self.command),
        )?;
        Ok(())
    }
}

impl ProverBackend for SubprocessProver {
    fn run(
        &self,
        rtl: &[RtlSource],
        properties: &[(String, SvaBlock)],
    ) -> Result<ProverResult, ProverError> {
        let started = Instant::now();
        let mut builder = tempfile::Builder::new();
        builder.prefix("prove-");
        let dir = match &self.work_root {
            Some(root) => {
                fs::create_dir_all(root)?;
                builder.tempdir_in(root)?
            }
            None => builder.tempdir()?,
        };
        self.write_task(dir.path(), rtl, properties)?;

        let output = Command::new("sh")
            .arg("run.sh")
            .current_dir(dir.path())
            .env("SAARTHI_TASK_DIR", dir.path())
            .output()?;

        let results = dir.path().join(RESULTS_FILE);
        let mut result = if results.exists() {
            let mut r = parse_prover_log(&fs::read_to_string(&results)?)?;
            r.load_traces(dir.path())?;
            r
        } else {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let tail: String = stderr.lines().rev().take(5).collect::<Vec<_>>().join(" | ");
            let why = format!("prover exited with {} and wrote no {RESULTS_FILE}: {tail}", output.status);
            log::warn!("{why}");
            let mut r = ProverResult::default();
            for (id, _) in properties {
                r.assertions.insert(
                    id.clone(),
                    AssertionVerdict::with_diagnostic(AssertionStatus::Error, why.clone()),
                );
            }
            r
        };
        if self.keep_task_dirs {
            let kept = dir.keep();
            log::info!("prover task dir kept at {}", kept.display());
        }
        result.wall_time = started.elapsed();
        Ok(result)
    }
}
