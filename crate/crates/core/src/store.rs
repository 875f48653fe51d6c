//! Per-run directories under a base path, named by UTC start time:
//! `events.jsonl`, `transcript.jsonl`, human-readable artifacts, `cex/*.json`
//! and an `index.json` mapping logical names to files.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::distr::{Alphanumeric, SampleString};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::Message;
use crate::record::{Outcome, RunRecord, Stage};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("run {0} is closed")]
    Closed(String),
    #[error("corrupt run at {dir}: {reason}")]
    Corrupt { dir: PathBuf, reason: String },
    #[error("unknown artifact name `{0}`")]
    UnknownArtifact(String),
    #[error("run store json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Level {
    Debug,
    Info,
    Warn,
    Error,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Debug => "DEBUG",
            Level::Info => "INFO",
            Level::Warn => "WARN",
            Level::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub timestamp: DateTime<Utc>,
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    pub stage: Stage,
    pub message: String,
}

impl LogEvent {
    pub fn new(level: Level, stage: Stage, message: impl Into<String>) -> Self {
        LogEvent {
            timestamp: Utc::now(),
            level,
            agent: None,
            stage,
            message: message.into(),
        }
    }

    pub fn agent(mut self, name: impl Into<String>) -> Self {
        self.agent = Some(name.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactIndex {
    pub run_id: String,
    pub files: BTreeMap<String, String>,
    pub created: DateTime<Utc>,
}

pub const INDEX_FILE: &str = "index.json";

/// Logical artifact names and their fixed file names.
pub const ARTIFACTS: &[(&str, &str)] = &[
    ("vplan", "vplan.md"),
    ("properties", "properties.sva"),
    ("report", "report.md"),
    ("transcript", "transcript.jsonl"),
    ("coverage", "coverage.json"),
    ("events", "events.jsonl"),
    ("record", "record.json"),
];

/// Artifacts a SUCCESS run must have.
pub const REQUIRED_FOR_SUCCESS: &[&str] = &["vplan", "properties", "report", "transcript", "coverage"];

fn artifact_path(name: &str) -> Result<String, StoreError> {
    if let Some(id) = name.strip_prefix("cex/") {
        let valid = !id.is_empty()
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        return if valid {
            Ok(format!("cex/{id}.json"))
        } else {
            Err(StoreError::UnknownArtifact(name.to_string()))
        };
    }
    ARTIFACTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, f)| f.to_string())
        .ok_or_else(|| StoreError::UnknownArtifact(name.to_string()))
}

fn write_atomic(path: &Path, content: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(content)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn run_id_prefix(now: DateTime<Utc>) -> String {
    now.format("%Y%m%d-%H%M%S").to_string()
}

/// Creates `<base>/<yyyymmdd-HHMMSS>-<suffix>`, retrying the random suffix
/// until the directory did not exist before.
pub fn create_run_dir(base: &Path, now: DateTime<Utc>) -> Result<(String, PathBuf), StoreError> {
    fs::create_dir_all(base)?;
    let prefix = run_id_prefix(now);
    let mut rng = rand::rng();
    loop {
        let suffix = Alphanumeric.sample_string(&mut rng, 4).to_ascii_lowercase();
        let id = format!("{prefix}-{suffix}");
        let dir = base.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

type Console = Arc<Mutex<Box<dyn Write + Send>>>;

struct State {
    closed: bool,
    last_event: Option<DateTime<Utc>>,
    index: ArtifactIndex,
}

/// An open run: one writer, any number of concurrent readers of its files.
pub struct RunHandle {
    id: String,
    dir: PathBuf,
    console_level: Level,
    console: Console,
    state: Mutex<State>,
}

impl std::fmt::Debug for RunHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunHandle")
            .field("id", &self.id)
            .field("dir", &self.dir)
            .finish()
    }
}

impl RunHandle {
    pub fn create(base: &Path, now: DateTime<Utc>) -> Result<Self, StoreError> {
        let (id, dir) = create_run_dir(base, now)?;
        let handle = RunHandle {
            console_level: Level::Info,
            console: Arc::new(Mutex::new(Box::new(io::stderr()))),
            state: Mutex::new(State {
                closed: false,
                last_event: None,
                index: ArtifactIndex {
                    run_id: id.clone(),
                    files: BTreeMap::new(),
                    created: now,
                },
            }),
            id,
            dir,
        };
        handle.write_index(&handle.state.lock().unwrap().index)?;
        Ok(handle)
    }

    /// Mirrors events at or above `level` to `sink`.
    pub fn with_console(mut self, level: Level, sink: Box<dyn Write + Send>) -> Self {
        self.console_level = level;
        self.console = Arc::new(Mutex::new(sink));
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_index(&self, index: &ArtifactIndex) -> Result<(), StoreError> {
        let mut text = serde_json::to_vec_pretty(index)?;
        text.push(b'\n');
        write_atomic(&self.dir.join(INDEX_FILE), &text)
    }

    fn open_state(&self) -> Result<std::sync::MutexGuard<'_, State>, StoreError> {
        let st = self.state.lock().unwrap_or_else(|p| p.into_inner());
        if st.closed {
            return Err(StoreError::Closed(self.id.clone()));
        }
        Ok(st)
    }

    fn register(&self, st: &mut State, name: &str, rel: &str) -> Result<(), StoreError> {
        if st.index.files.get(name).map(String::as_str) != Some(rel) {
            st.index.files.insert(name.to_string(), rel.to_string());
            self.write_index(&st.index)?;
        }
        Ok(())
    }

    fn append_line(&self, st: &mut State, name: &str, line: &str) -> Result<(), StoreError> {
        let rel = artifact_path(name)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(&rel))?;
        f.write_all(format!("{line}\n").as_bytes())?;
        self.register(st, name, &rel)
    }

    /// Appends to `events.jsonl`; timestamps are clamped so the log never
    /// goes backwards.
    pub fn append_log(&self, mut event: LogEvent) -> Result<(), StoreError> {
        let mut st = self.open_state()?;
        if let Some(last) = st.last_event {
            if event.timestamp < last {
                event.timestamp = last;
            }
        }
        st.last_event = Some(event.timestamp);
        let line = serde_json::to_string(&event)?;
        self.append_line(&mut st, "events", &line)?;
        if event.level >= self.console_level {
            let mut c = self.console.lock().unwrap_or_else(|p| p.into_inner());
            let agent = event.agent.as_deref().map(|a| format!(" {a}")).unwrap_or_default();
            let _ = writeln!(
                c,
                "[{} {} {}{}] {}",
                event.timestamp.format("%H:%M:%S"),
                event.level.as_str(),
                event.stage.as_str(),
                agent,
                event.message
            );
        }
        Ok(())
    }

    pub fn log(&self, level: Level, stage: Stage, message: impl Into<String>) -> Result<(), StoreError> {
        self.append_log(LogEvent::new(level, stage, message))
    }

    pub fn append_transcript(&self, message: &Message) -> Result<(), StoreError> {
        let mut st = self.open_state()?;
        let line = serde_json::to_string(message)?;
        self.append_line(&mut st, "transcript", &line)
    }

    /// Makes sure a (possibly empty) transcript file exists.
    pub fn touch_transcript(&self) -> Result<(), StoreError> {
        let mut st = self.open_state()?;
        let rel = artifact_path("transcript")?;
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(&rel))?;
        self.register(&mut st, "transcript", &rel)
    }

    /// Atomically writes a named artifact (`vplan`, `report`, `cex/<id>` ...).
    pub fn save_artifact(&self, name: &str, content: &[u8]) -> Result<PathBuf, StoreError> {
        let mut st = self.open_state()?;
        let rel = artifact_path(name)?;
        let path = self.dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, content)?;
        self.register(&mut st, name, &rel)?;
        Ok(path)
    }

    pub fn save_record(&self, record: &RunRecord) -> Result<PathBuf, StoreError> {
        let mut text = serde_json::to_vec_pretty(record)?;
        text.push(b'\n');
        self.save_artifact("record", &text)
    }

    pub fn close(&self) {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).closed = true;
    }

    pub fn index(&self) -> ArtifactIndex {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).index.clone()
    }
}

pub fn read_index(dir: &Path) -> Result<ArtifactIndex, StoreError> {
    let corrupt = |reason: String| StoreError::Corrupt {
        dir: dir.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(dir.join(INDEX_FILE))
        .map_err(|e| corrupt(format!("cannot read {INDEX_FILE}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| corrupt(format!("bad {INDEX_FILE}: {e}")))
}

/// Reloads a run; SUCCESS runs must carry all required artifacts.
pub fn load_run(dir: &Path) -> Result<RunRecord, StoreError> {
    let corrupt = |reason: String| StoreError::Corrupt {
        dir: dir.to_path_buf(),
        reason,
    };
    let index = read_index(dir)?;
    let rel = index
        .files
        .get("record")
        .ok_or_else(|| corrupt("index has no record entry".into()))?;
    let text = fs::read_to_string(dir.join(rel)).map_err(|e| corrupt(format!("{rel}: {e}")))?;
    let record: RunRecord =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("{rel}: {e}")))?;
    if record.run_id != index.run_id {
        return Err(corrupt(format!(
            "record id {} does not match index id {}",
            record.run_id, index.run_id
        )));
    }
    if record.outcome == Outcome::Success {
        for name in REQUIRED_FOR_SUCCESS {
            let present = index
                .files
                .get(*name)
                .is_some_and(|rel| dir.join(rel).is_file());
            if !present {
                return Err(corrupt(format!("SUCCESS run is missing its {name} artifact")));
            }
        }
    }
    Ok(record)
}

/// Run directories under `base` (those with an index), oldest first.
pub fn list_runs(base: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut dirs = Vec::new();
    let entries = match fs::read_dir(base) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(dirs),
        Err(e) => return Err(e.into()),
    };
    for entry in entries {
        let path = entry?.path();
        if path.join(INDEX_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Reads `transcript.jsonl` from a run directory.
pub fn read_transcript(dir: &Path) -> Result<Vec<Message>, StoreError> {
    let text = match fs::read_to_string(dir.join("transcript.jsonl")) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(StoreError::from))
        .collect()
}
