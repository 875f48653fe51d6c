//! Run configuration plus the agent and task documents that drive the
//! pipeline.

mod document;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::conversation::HilMode;
pub use document::{Entry, Field};

pub const DEFAULT_MAX_ITER: u32 = 5;
pub const DEFAULT_MAX_REPLIES: u32 = 3;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MODEL: &str = "mock";
pub const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate name `{name}`")]
    DuplicateName { name: String, line: usize },
    #[error("line {line}: `{entry}` is missing required key `{key}`")]
    MissingKey {
        entry: String,
        key: String,
        line: usize,
    },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    InvalidValue {
        key: String,
        line: usize,
        message: String,
    },
    #[error("line {line}: task `{task}` references unknown agent `{agent}`")]
    UnknownAgent {
        task: String,
        agent: String,
        line: usize,
    },
    #[error("invalid run configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Sequential,
}

/// Everything a single verification run needs to know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub model_id: String,
    pub spec_path: PathBuf,
    pub rtl_paths: Vec<PathBuf>,
    pub hil_mode: HilMode,
    /// Auto-replies allowed before a human is asked to step in.
    pub max_replies: u32,
    /// Critic rounds per property before escalation.
    pub max_iter: u32,
    pub temperature: f64,
    /// Samples per property for majority voting; 0 disables voting.
    pub vote_samples: u32,
    pub out_dir: PathBuf,
    pub service_mode: bool,
    pub agents_path: Option<PathBuf>,
    pub tasks_path: Option<PathBuf>,
    /// Replay (or, with `record`, capture) model traffic through this file.
    pub cassette: Option<PathBuf>,
    pub record: bool,
    pub base_url: Option<String>,
    pub prover_fixture: Option<PathBuf>,
    pub prover_cmd: Option<String>,
    pub bind: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Sequential,
            model_id: DEFAULT_MODEL.to_string(),
            spec_path: PathBuf::new(),
            rtl_paths: Vec::new(),
            hil_mode: HilMode::Terminate,
            max_replies: DEFAULT_MAX_REPLIES,
            max_iter: DEFAULT_MAX_ITER,
            temperature: DEFAULT_TEMPERATURE,
            vote_samples: 0,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            service_mode: false,
            agents_path: None,
            tasks_path: None,
            cassette: None,
            record: false,
            base_url: None,
            prover_fixture: None,
            prover_cmd: None,
            bind: None,
        }
    }
}

impl RunConfig {
    /// Checks the numeric invariants only; no filesystem access.
    pub fn check_invariants(&self) -> Result<(), ConfigError> {
        if self.max_iter < 1 {
            return Err(ConfigError::Invalid("max_iter must be >= 1".into()));
        }
        if self.max_replies < 1 {
            return Err(ConfigError::Invalid("max_replies must be >= 1".into()));
        }
        if self.vote_samples != 0 && self.vote_samples.is_multiple_of(2) {
            return Err(ConfigError::Invalid(format!(
                "vote_samples must be 0 or odd, got {}",
                self.vote_samples
            )));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Invalid(format!(
                "temperature must lie in [0, 2], got {}",
                self.temperature
            )));
        }
        if self.model_id.trim().is_empty() {
            return Err(ConfigError::Invalid("model id must not be empty".into()));
        }
        Ok(())
    }

    /// Full validation, including that the specification file exists and is
    /// non-empty.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check_invariants()?;
        let text = fs::read_to_string(&self.spec_path).map_err(|source| ConfigError::Io {
            path: self.spec_path.clone(),
            source,
        })?;
        if text.trim().is_empty() {
            return Err(ConfigError::Invalid(format!(
                "specification {} is empty",
                self.spec_path.display()
            )));
        }
        Ok(())
    }

    /// Renders the config back into `run` flags. Parsing the result with
    /// [`crate::cli::parse_cli_args`] yields an equal config.
    pub fn to_args(&self) -> Vec<String> {
        let mut args = vec![
            "--spec".to_string(),
            self.spec_path.display().to_string(),
        ];
        for rtl in &self.rtl_paths {
            args.push("--rtl".into());
            args.push(rtl.display().to_string());
        }
        args.extend([
            "--model".into(),
            self.model_id.clone(),
            "--strategy".into(),
            "sequential".into(),
            "--hil".into(),
            self.hil_mode.as_str().into(),
            "--max-replies".into(),
            self.max_replies.to_string(),
            "--max-iter".into(),
            self.max_iter.to_string(),
            "--temperature".into(),
            self.temperature.to_string(),
            "--vote".into(),
            self.vote_samples.to_string(),
            "--out".into(),
            self.out_dir.display().to_string(),
        ]);
        if self.service_mode {
            args.push("--serve".into());
        }
        let optional_paths = [
            ("--agents", &self.agents_path),
            ("--tasks", &self.tasks_path),
            ("--cassette", &self.cassette),
            ("--prover-fixture", &self.prover_fixture),
        ];
        for (flag, value) in optional_paths {
            if let Some(p) = value {
                args.push(flag.into());
                args.push(p.display().to_string());
            }
        }
        if self.record {
            args.push("--record".into());
        }
        let optional_strings = [
            ("--base-url", &self.base_url),
            ("--prover-cmd", &self.prover_cmd),
            ("--bind", &self.bind),
        ];
        for (flag, value) in optional_strings {
            if let Some(v) = value {
                args.push(format!("{flag}={v}"));
            }
        }
        args
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub role: String,
    pub goal: String,
    pub backstory: String,
    pub allow_delegation: bool,
    pub verbose: bool,
    pub max_iter: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub description: String,
    pub expected_output: String,
    pub assigned_agent: String,
}

pub type AgentMap = BTreeMap<String, AgentSpec>;

const AGENT_KEYS: &[&str] = &[
    "role",
    "goal",
    "backstory",
    "allow_delegation",
    "verbose",
    "max_iter",
];
const TASK_KEYS: &[&str] = &["description", "expected_output", "agent"];

fn check_keys(entry: &Entry, allowed: &[&str]) -> Result<(), ConfigError> {
    for field in &entry.fields {
        if !allowed.contains(&field.key.as_str()) {
            return Err(ConfigError::UnknownKey {
                key: field.key.clone(),
                line: field.line,
            });
        }
    }
    Ok(())
}

fn required<'a>(entry: &'a Entry, key: &str) -> Result<&'a Field, ConfigError> {
    match entry.get(key) {
        Some(f) if !f.value.trim().is_empty() => Ok(f),
        Some(f) => Err(ConfigError::InvalidValue {
            key: key.into(),
            line: f.line,
            message: "must not be empty".into(),
        }),
        None => Err(ConfigError::MissingKey {
            entry: entry.name.clone(),
            key: key.into(),
            line: entry.line,
        }),
    }
}

fn parse_bool(field: &Field) -> Result<bool, ConfigError> {
    match field.value.as_str() {
        "true" | "True" | "yes" => Ok(true),
        "false" | "False" | "no" => Ok(false),
        other => Err(ConfigError::InvalidValue {
            key: field.key.clone(),
            line: field.line,
            message: format!("expected a boolean, found `{other}`"),
        }),
    }
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_agents(text: &str) -> Result<AgentMap, ConfigError> {
    let mut agents = AgentMap::new();
    for entry in document::parse(text)? {
        check_keys(&entry, AGENT_KEYS)?;
        if agents.contains_key(&entry.name) {
            return Err(ConfigError::DuplicateName {
                name: entry.name,
                line: entry.line,
            });
        }
        let backstory = entry
            .get("backstory")
            .map(|f| f.value.clone())
            .unwrap_or_default();
        let allow_delegation = entry
            .get("allow_delegation")
            .map(parse_bool)
            .transpose()?
            .unwrap_or(false);
        let verbose = entry
            .get("verbose")
            .map(parse_bool)
            .transpose()?
            .unwrap_or(false);
        let max_iter = match entry.get("max_iter") {
            Some(f) => match f.value.parse::<u32>() {
                Ok(n) if n >= 1 => n,
                _ => {
                    return Err(ConfigError::InvalidValue {
                        key: "max_iter".into(),
                        line: f.line,
                        message: format!("expected a positive integer, found `{}`", f.value),
                    })
                }
            },
            None => DEFAULT_MAX_ITER,
        };
        let spec = AgentSpec {
            name: entry.name.clone(),
            role: required(&entry, "role")?.value.clone(),
            goal: required(&entry, "goal")?.value.clone(),
            backstory,
            allow_delegation,
            verbose,
            max_iter,
        };
        agents.insert(entry.name, spec);
    }
    Ok(agents)
}

pub fn load_agent_config(path: &Path) -> Result<AgentMap, ConfigError> {
    parse_agents(&read_text(path)?)
}

/// Tasks keep their file order.
pub fn parse_tasks(text: &str, agents: &AgentMap) -> Result<Vec<TaskSpec>, ConfigError> {
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for entry in document::parse(text)? {
        check_keys(&entry, TASK_KEYS)?;
        if !seen.insert(entry.name.clone()) {
            return Err(ConfigError::DuplicateName {
                name: entry.name,
                line: entry.line,
            });
        }
        let agent = required(&entry, "agent")?;
        if !agents.contains_key(&agent.value) {
            return Err(ConfigError::UnknownAgent {
                task: entry.name.clone(),
                agent: agent.value.clone(),
                line: agent.line,
            });
        }
        tasks.push(TaskSpec {
            name: entry.name.clone(),
            description: required(&entry, "description")?.value.clone(),
            expected_output: required(&entry, "expected_output")?.value.clone(),
            assigned_agent: agent.value.clone(),
        });
    }
    Ok(tasks)
}

pub fn load_task_config(path: &Path, agents: &AgentMap) -> Result<Vec<TaskSpec>, ConfigError> {
    parse_tasks(&read_text(path)?, agents)
}

/// Agent roster shipped with the crate.
pub const DEFAULT_AGENTS: &str = include_str!("../../assets/agents.yaml");
/// Task list shipped with the crate.
pub const DEFAULT_TASKS: &str = include_str!("../../assets/tasks.yaml");

/// Loads the agents and tasks a run config points at, falling back to the
/// bundled defaults.
pub fn load_roster(config: &RunConfig) -> Result<(AgentMap, Vec<TaskSpec>), ConfigError> {
    let agents = match &config.agents_path {
        Some(p) => load_agent_config(p)?,
        None => parse_agents(DEFAULT_AGENTS)?,
    };
    let tasks = match &config.tasks_path {
        Some(p) => load_task_config(p, &agents)?,
        None => parse_tasks(DEFAULT_TASKS, &agents)?,
    };
    Ok((agents, tasks))
}
