//! Run-level domain types shared by the pipeline, metrics and the store.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::formal::ProverResult;
use crate::metrics::KpiSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Vplan,
    Sva,
    Prove,
    CexAnalysis,
    Coverage,
    Feedback,
    Reprove,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Vplan => "vplan",
            Stage::Sva => "sva",
            Stage::Prove => "prove",
            Stage::CexAnalysis => "cex_analysis",
            Stage::Coverage => "coverage",
            Stage::Feedback => "feedback",
            Stage::Reprove => "reprove",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Success,
    Failed,
    Aborted,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "SUCCESS",
            Outcome::Failed => "FAILED",
            Outcome::Aborted => "ABORTED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlanStatus {
    Open,
    CoveredBySva,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanItem {
    pub id: String,
    pub description: String,
    pub status: PlanStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VPlan {
    pub items: Vec<PlanItem>,
}

impl VPlan {
    /// Appends an open item with the next free `V<n>` id.
    pub fn push(&mut self, description: impl Into<String>) -> &PlanItem {
        let id = format!("V{}", self.items.len() + 1);
        self.items.push(PlanItem {
            id,
            description: description.into(),
            status: PlanStatus::Open,
        });
        self.items.last().unwrap()
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut PlanItem> {
        self.items.iter_mut().find(|i| i.id == id)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Verification plan\n\n");
        for (n, item) in self.items.iter().enumerate() {
            let status = match item.status {
                PlanStatus::Open => "open",
                PlanStatus::CoveredBySva => "covered by SVA",
                PlanStatus::Dropped => "dropped",
            };
            out.push_str(&format!(
                "{}. [{}] {} ({status})\n",
                n + 1,
                item.id,
                item.description
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    Agent,
    HumanIntercept,
    Vote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PropertyStatus {
    Draft,
    Accepted,
    Proven,
    Cex,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvaProperty {
    pub id: String,
    pub plan_item_id: String,
    pub code: String,
    pub revision: u32,
    pub origin: Origin,
    pub status: PropertyStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueVerdict {
    pub accept: bool,
    pub feedback: String,
}

impl CritiqueVerdict {
    pub fn accept() -> Self {
        CritiqueVerdict {
            accept: true,
            feedback: String::new(),
        }
    }

    /// A rejection; empty feedback is replaced so the invariant holds.
    pub fn reject(feedback: impl Into<String>) -> Self {
        let feedback = feedback.into();
        CritiqueVerdict {
            accept: false,
            feedback: if feedback.trim().is_empty() {
                "rejected without explanation".into()
            } else {
                feedback
            },
        }
    }

    /// Reads a critic reply: a leading ACCEPT accepts, anything else rejects
    /// with the reply (minus a leading REJECT) as feedback.
    pub fn parse(reply: &str) -> Self {
        let t = reply.trim_start();
        let head: String = t
            .chars()
            .take_while(|c| c.is_ascii_alphabetic())
            .collect::<String>()
            .to_ascii_uppercase();
        match head.as_str() {
            "ACCEPT" | "ACCEPTED" => CritiqueVerdict::accept(),
            "REJECT" | "REJECTED" => CritiqueVerdict::reject(
                t[head.len()..].trim_start_matches([':', '-', ' ', '\n', '.']).trim(),
            ),
            _ => CritiqueVerdict::reject(t.trim()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CexVerdict {
    RtlBug,
    BadProperty,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CexAnalysis {
    pub property_id: String,
    pub verdict: CexVerdict,
    pub explanation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_code: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub started: DateTime<Utc>,
    pub config: RunConfig,
    pub vplan: VPlan,
    pub properties: Vec<SvaProperty>,
    pub prover_result: ProverResult,
    pub kpi: KpiSummary,
    pub outcome: Outcome,
    pub stage_reached: Stage,
    #[serde(default)]
    pub cex_analyses: Vec<CexAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunRecord {
    /// Equality ignoring what legitimately differs between two replays of
    /// the same run: id, start time, prover wall time, output location and
    /// how the run was launched (CLI or service).
    pub fn eq_modulo_run_identity(&self, other: &RunRecord) -> bool {
        self.normalized() == other.normalized()
    }

    fn normalized(&self) -> RunRecord {
        let mut r = self.clone();
        r.run_id.clear();
        r.started = DateTime::<Utc>::UNIX_EPOCH;
        r.prover_result.wall_time = Default::default();
        r.config.out_dir = Default::default();
        r.config.service_mode = false;
        r.config.bind = None;
        r
    }
}
