//! The verification flow: plan, write and review assertions, prove, analyze
//! counterexamples, close coverage holes, report.

mod prompts;
mod run;
mod stages;

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::sync::Mutex;

use thiserror::Error;

use crate::config::{AgentMap, AgentSpec, ConfigError, RunConfig, TaskSpec};
use crate::conversation::{HilDecision, Message, MessageKind};
use crate::formal::{extract_port_list, ProverError, RtlSource};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::metrics::MetricsError;
use crate::record::Stage;
use crate::store::{Level, LogEvent, RunHandle, StoreError};

pub use prompts::PROMPT_VERSION;
pub use run::{render_checker, render_run_report, run_pipeline, PipelineDeps};
pub use stages::{
    analyze_cex, coverage_feedback, generate_and_refine_sva, generate_vplan, normalize_code,
    parse_cex_verdict, parse_plan_list, prove_stage, sample_and_vote, Refined, VoteResult,
};

/// Sender name used for prompts the orchestrator sends to agents.
pub const ORCHESTRATOR: &str = "orchestrator";
/// Sender name of compiler-in-the-loop feedback.
pub const LINT: &str = "lint";
/// Transcript messages handed to a human on escalation.
pub const CONTEXT_MESSAGES: usize = 6;

pub const TASK_VPLAN: &str = "vplan_gen";
pub const TASK_PROPERTY: &str = "property_gen";
pub const TASK_REVIEW: &str = "property_review";
pub const TASK_CEX: &str = "cex_analysis";
pub const TASK_COVERAGE: &str = "coverage_feedback";
pub const REQUIRED_TASKS: &[&str] = &[TASK_VPLAN, TASK_PROPERTY, TASK_REVIEW, TASK_CEX, TASK_COVERAGE];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("prover: {0}")]
    Prover(#[from] ProverError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("human input unavailable: {0}")]
    Human(String),
    #[error("{stage:?} stage failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("run terminated by a human")]
    Aborted,
}

impl PipelineError {
    pub fn stage(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError::Stage {
            stage,
            message: message.into(),
        }
    }
}

/// What a human sees when the critic loop escalates.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct InterventionRequest {
    pub run_id: String,
    pub plan_item_id: String,
    pub property_id: Option<String>,
    pub prompt_context: Vec<Message>,
    pub latest_draft: Option<String>,
}

/// The human side of an escalation. Implementations may block.
pub trait HumanInput: Send + Sync {
    fn decide(&self, request: &InterventionRequest) -> Result<HilDecision, String>;
}

/// Always answers with the same decision.
#[derive(Debug, Clone)]
pub struct FixedHuman(pub HilDecision);

impl HumanInput for FixedHuman {
    fn decide(&self, _: &InterventionRequest) -> Result<HilDecision, String> {
        Ok(self.0.clone())
    }
}

/// Answers from a queue; fails once it is empty. Records every request.
#[derive(Debug, Default)]
pub struct ScriptedHuman {
    decisions: Mutex<VecDeque<HilDecision>>,
    seen: Mutex<Vec<InterventionRequest>>,
}

impl ScriptedHuman {
    pub fn new(decisions: impl IntoIterator<Item = HilDecision>) -> Self {
        ScriptedHuman {
            decisions: Mutex::new(decisions.into_iter().collect()),
            seen: Mutex::default(),
        }
    }

    pub fn requests(&self) -> Vec<InterventionRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl HumanInput for ScriptedHuman {
    fn decide(&self, request: &InterventionRequest) -> Result<HilDecision, String> {
        self.seen.lock().unwrap().push(request.clone());
        self.decisions
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| "no scripted human decision left".to_string())
    }
}

/// Live notifications from a running pipeline.
pub trait RunObserver: Send + Sync {
    fn on_start(&self, _run_id: &str) {}
    fn on_stage(&self, _stage: Stage) {}
    fn on_message(&self, _message: &Message) {}
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl RunObserver for NoObserver {}

/// Specification prose plus RTL, with the port list scanned from the RTL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSpec {
    pub text: String,
    pub rtl_sources: Vec<RtlSource>,
    pub port_list: Vec<String>,
}

impl DesignSpec {
    pub fn new(text: impl Into<String>, rtl_sources: Vec<RtlSource>) -> Result<Self, PipelineError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PipelineError::stage(Stage::Init, "design specification is empty"));
        }
        let mut port_list: Vec<String> = Vec::new();
        for src in &rtl_sources {
            for p in extract_port_list(&src.content) {
                if !port_list.contains(&p) {
                    port_list.push(p);
                }
            }
        }
        Ok(DesignSpec {
            text,
            rtl_sources,
            port_list,
        })
    }

    pub fn load(config: &RunConfig) -> Result<Self, PipelineError> {
        let io = |p: &std::path::Path, source: std::io::Error| {
            PipelineError::Config(ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let text = fs::read_to_string(&config.spec_path).map_err(|e| io(&config.spec_path, e))?;
        let mut rtl = Vec::new();
        for p in &config.rtl_paths {
            rtl.push(RtlSource {
                path: p.display().to_string(),
                content: fs::read_to_string(p).map_err(|e| io(p, e))?,
            });
        }
        Self::new(text, rtl)
    }

    /// Name of the first module declared in the RTL.
    pub fn top_module(&self) -> Option<String> {
        self.rtl_sources.iter().find_map(|s| {
            let toks = crate::formal::lexer::lex(&s.content).tokens;
            toks.windows(2)
                .find(|w| w[0].is("module") && w[1].is_ident())
                .map(|w| w[1].text.to_string())
        })
    }
}

/// Agents and tasks resolved by task name.
#[derive(Debug, Clone)]
pub struct Roster {
    pub agents: AgentMap,
    pub tasks: BTreeMap<String, TaskSpec>,
}

impl Roster {
    pub fn new(agents: &AgentMap, tasks: &[TaskSpec]) -> Result<Self, ConfigError> {
        let tasks: BTreeMap<String, TaskSpec> =
            tasks.iter().map(|t| (t.name.clone(), t.clone())).collect();
        for name in REQUIRED_TASKS {
            let task = tasks.get(*name).ok_or_else(|| {
                ConfigError::Invalid(format!("task list has no `{name}` task"))
            })?;
            if !agents.contains_key(&task.assigned_agent) {
                return Err(ConfigError::Invalid(format!(
                    "task `{}` is assigned to unknown agent `{}`",
                    task.name, task.assigned_agent
                )));
            }
        }
        Ok(Roster {
            agents: agents.clone(),
            tasks,
        })
    }

    pub fn task(&self, name: &str) -> &TaskSpec {
        &self.tasks[name]
    }

    pub fn agent_for(&self, task: &str) -> &AgentSpec {
        &self.agents[&self.tasks[task].assigned_agent]
    }
}

/// Per-run context shared by the stages: roster, services and the live
/// transcript.
pub struct Session<'a> {
    pub config: &'a RunConfig,
    pub roster: Roster,
    pub gateway: &'a Gateway,
    pub human: &'a dyn HumanInput,
    pub observer: &'a dyn RunObserver,
    run: Option<&'a RunHandle>,
    run_id: String,
    transcript: RefCell<Vec<Message>>,
    stage: RefCell<Stage>,
}

impl<'a> Session<'a> {
    pub fn new(
        config: &'a RunConfig,
        roster: Roster,
        gateway: &'a Gateway,
        human: &'a dyn HumanInput,
    ) -> Self {
        Session {
            config,
            roster,
            gateway,
            human,
            observer: &NoObserver,
            run: None,
            run_id: String::new(),
            transcript: RefCell::default(),
            stage: RefCell::new(Stage::Init),
        }
    }

    pub fn with_observer(mut self, observer: &'a dyn RunObserver) -> Self {
        self.observer = observer;
        self
    }

    pub fn with_run(mut self, run: &'a RunHandle) -> Self {
        self.run_id = run.id().to_string();
        self.run = Some(run);
        self
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn transcript(&self) -> Vec<Message> {
        self.transcript.borrow().clone()
    }

    pub fn stage(&self) -> Stage {
        *self.stage.borrow()
    }

    pub(crate) fn enter(&self, stage: Stage) -> Result<(), PipelineError> {
        debug_assert!(stage >= self.stage(), "stages never regress");
        *self.stage.borrow_mut() = stage;
        self.observer.on_stage(stage);
        self.log(Level::Info, None, format!("entering {} stage", stage.as_str()))
    }

    pub(crate) fn log(
        &self,
        level: Level,
        agent: Option<&str>,
        message: impl Into<String>,
    ) -> Result<(), PipelineError> {
        let message = message.into();
        match self.run {
            Some(run) => {
                let mut ev = LogEvent::new(level, self.stage(), message);
                ev.agent = agent.map(str::to_string);
                run.append_log(ev)?;
            }
            None => log::debug!("{message}"),
        }
        Ok(())
    }

    /// Appends to the run transcript with the next sequence number.
    pub(crate) fn record(&self, mut message: Message) -> Result<Message, PipelineError> {
        let mut t = self.transcript.borrow_mut();
        message.seq = t.last().map_or(1, |m| m.seq + 1);
        if let Some(run) = self.run {
            run.append_transcript(&message)?;
        }
        self.observer.on_message(&message);
        t.push(message.clone());
        Ok(message)
    }

    pub(crate) fn recent(&self, n: usize) -> Vec<Message> {
        let t = self.transcript.borrow();
        t[t.len().saturating_sub(n)..].to_vec()
    }

    pub(crate) fn system_prompt(&self, agent: &AgentSpec) -> ChatMessage {
        ChatMessage::system(prompts::fill(
            prompts::SYSTEM,
            &[
                ("role", &agent.role),
                ("goal", &agent.goal),
                ("backstory", &agent.backstory),
            ],
        ))
    }

    /// Sends a chat to the agent assigned to `task`, recording the last
    /// user turn and the reply in the transcript.
    pub(crate) fn ask(&self, task: &str, messages: Vec<ChatMessage>) -> Result<String, PipelineError> {
        let agent = self.roster.agent_for(task).name.clone();
        if let Some(last) = messages.last() {
            self.record(Message::new(ORCHESTRATOR, &agent, MessageKind::Task, &last.content))?;
        }
        let request = ChatRequest::new(&self.config.model_id, messages, self.config.temperature);
        let response = match self.gateway.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                self.log(Level::Error, Some(&agent), format!("model call failed: {e}"))?;
                return Err(e.into());
            }
        };
        self.log(
            Level::Debug,
            Some(&agent),
            format!("{task}: {} chars in reply", response.content.len()),
        )?;
        self.record(Message::new(&agent, ORCHESTRATOR, MessageKind::Reply, &response.content))?;
        Ok(response.content)
    }

    pub(crate) fn artifact(&self, name: &str, content: &[u8]) -> Result<(), PipelineError> {
        if let Some(run) = self.run {
            run.save_artifact(name, content)?;
        }
        Ok(())
    }
}
