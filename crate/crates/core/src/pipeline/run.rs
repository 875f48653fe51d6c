use std::fmt::Write as _;
use std::io::Write;

use chrono::{DateTime, Utc};

use crate::config::{AgentMap, RunConfig, TaskSpec};
use crate::formal::{CoverStatus, ProverBackend, ProverResult};
use crate::gateway::Gateway;
use crate::metrics::{coverage_rate, render_workflow_table, KpiSummary, WorkflowRow};
use crate::record::{
    CexAnalysis, CexVerdict, Origin, Outcome, PlanStatus, PropertyStatus, RunRecord, Stage,
    SvaProperty, VPlan,
};
use crate::store::{Level, RunHandle};

use super::stages::{
    analyze_cex, coverage_feedback, generate_vplan, prove_stage, refine, sample_and_vote, Seed,
};
use super::{DesignSpec, HumanInput, PipelineError, Roster, RunObserver, Session};

/// Services a run talks to.
pub struct PipelineDeps<'a> {
    pub gateway: &'a Gateway,
    pub prover: &'a dyn ProverBackend,
    pub human: &'a dyn HumanInput,
    pub observer: &'a dyn RunObserver,
    /// Console mirror for run events; `None` keeps the console quiet.
    pub console: Option<(Level, Box<dyn Write + Send>)>,
    /// Clock used for the run id; defaults to now.
    pub now: Option<DateTime<Utc>>,
}

#[derive(Default)]
struct Progress {
    vplan: VPlan,
    properties: Vec<SvaProperty>,
    result: ProverResult,
    initial: Option<ProverResult>,
    analyses: Vec<CexAnalysis>,
    next_property: usize,
}

impl Progress {
    fn description(&self, item_id: &str) -> String {
        self.vplan
            .items
            .iter()
            .find(|i| i.id == item_id)
            .map(|i| i.description.clone())
            .unwrap_or_default()
    }
}

/// Runs the whole flow and persists everything under a fresh run directory.
///
/// Stage failures and human termination end up in the returned record
/// (`FAILED` / `ABORTED`); `Err` is reserved for problems that prevent a
/// record from being written at all.
pub fn run_pipeline(
    config: &RunConfig,
    agents: &AgentMap,
    tasks: &[TaskSpec],
    deps: PipelineDeps,
) -> Result<RunRecord, PipelineError> {
    config.validate()?;
    let roster = Roster::new(agents, tasks)?;
    let spec = DesignSpec::load(config)?;
    let started = deps.now.unwrap_or_else(Utc::now);
    let mut run = RunHandle::create(&config.out_dir, started)?;
    run = match deps.console {
        Some((level, sink)) => run.with_console(level, sink),
        None => run.with_console(Level::Error, Box::new(std::io::sink())),
    };
    deps.observer.on_start(run.id());
    run.touch_transcript()?;

    let session = Session::new(config, roster, deps.gateway, deps.human)
        .with_observer(deps.observer)
        .with_run(&run);
    let mut progress = Progress::default();
    let executed = execute(&session, &spec, deps.prover, &mut progress);

    let (outcome, failure) = match executed {
        Ok(()) => (Outcome::Success, None),
        Err(PipelineError::Aborted) => (Outcome::Aborted, Some(PipelineError::Aborted.to_string())),
        Err(e @ PipelineError::Store(_)) => return Err(e),
        Err(e) => (Outcome::Failed, Some(e.to_string())),
    };
    if let Some(why) = &failure {
        let level = if outcome == Outcome::Aborted { Level::Warn } else { Level::Error };
        session.log(level, None, format!("run ended at {} stage: {why}", session.stage().as_str()))?;
    }
    if outcome == Outcome::Success {
        session.enter(Stage::Report)?;
    }

    let submitted = progress
        .properties
        .iter()
        .filter(|p| p.status != PropertyStatus::Draft)
        .count();
    let kpi = KpiSummary::from_result(submitted, &progress.result, outcome == Outcome::Success)?;
    let record = RunRecord {
        run_id: run.id().to_string(),
        started,
        config: config.clone(),
        vplan: progress.vplan.clone(),
        properties: progress.properties.clone(),
        prover_result: progress.result.clone(),
        kpi,
        outcome,
        stage_reached: session.stage(),
        cex_analyses: progress.analyses.clone(),
        failure,
    };

    let checker = spec.top_module().unwrap_or_else(|| "design".into());
    run.save_artifact("vplan", record.vplan.to_markdown().as_bytes())?;
    run.save_artifact("properties", render_checker(&checker, &record).as_bytes())?;
    run.save_artifact("coverage", coverage_json(&record.prover_result).as_bytes())?;
    run.save_artifact("report", render_run_report(&record, progress.initial.as_ref()).as_bytes())?;
    run.save_record(&record)?;
    session.log(Level::Info, None, format!("run finished: {}", outcome.as_str()))?;
    run.close();
    Ok(record)
}

fn execute(
    session: &Session,
    spec: &DesignSpec,
    prover: &dyn ProverBackend,
    st: &mut Progress,
) -> Result<(), PipelineError> {
    session.enter(Stage::Vplan)?;
    st.vplan = generate_vplan(session, spec)?;
    session.artifact("vplan", st.vplan.to_markdown().as_bytes())?;
    session.log(Level::Info, None, format!("plan has {} items", st.vplan.items.len()))?;

    session.enter(Stage::Sva)?;
    let ids: Vec<String> = st.vplan.items.iter().map(|i| i.id.clone()).collect();
    for id in &ids {
        write_property(session, spec, st, id)?;
    }
    if st.properties.is_empty() {
        return Err(PipelineError::stage(Stage::Sva, "no assertion was accepted for any plan item"));
    }

    session.enter(Stage::Prove)?;
    st.result = prove_stage(&mut st.properties, &spec.rtl_sources, prover)?;
    save_traces(session, &st.result)?;
    st.initial = Some(st.result.clone());
    let mut changed = false;

    session.enter(Stage::CexAnalysis)?;
    let failing: Vec<usize> = (0..st.properties.len())
        .filter(|&i| st.properties[i].status == PropertyStatus::Cex)
        .collect();
    for i in failing {
        let property = st.properties[i].clone();
        let description = st.description(&property.plan_item_id);
        let trace = st.result.assertions.get(&property.id).and_then(|v| v.trace.as_ref());
        let analysis = analyze_cex(session, &property, &description, trace)?;
        session.log(
            Level::Info,
            None,
            format!("{}: counterexample verdict {:?}", property.id, analysis.verdict),
        )?;
        if let (CexVerdict::BadProperty, Some(code)) = (analysis.verdict, &analysis.revised_code) {
            let item = st
                .vplan
                .items
                .iter()
                .find(|it| it.id == property.plan_item_id)
                .cloned()
                .expect("property references a plan item");
            let seed = Seed {
                reply: format!("```systemverilog\n{code}\n```"),
                revision: property.revision + 1,
                origin: Origin::Agent,
            };
            st.properties[i].status = PropertyStatus::Draft;
            let refined = refine(session, spec, &item, &property.id, Some(seed))?;
            match refined.property {
                Some(p) => {
                    st.properties[i] = p;
                    changed = true;
                }
                None => st.properties[i] = property,
            }
        }
        st.analyses.push(analysis);
    }

    session.enter(Stage::Coverage)?;
    session.artifact("coverage", coverage_json(&st.result).as_bytes())?;
    session.log(Level::Info, None, format!("coverage {}", coverage_rate(&st.result)))?;

    session.enter(Stage::Feedback)?;
    let added = coverage_feedback(session, &st.result, &mut st.vplan)?;
    session.log(Level::Info, None, format!("coverage feedback added {} plan items", added.len()))?;
    for id in &added {
        changed |= write_property(session, spec, st, id)?;
    }
    session.artifact("vplan", st.vplan.to_markdown().as_bytes())?;

    session.enter(Stage::Reprove)?;
    if changed {
        st.result = prove_stage(&mut st.properties, &spec.rtl_sources, prover)?;
        save_traces(session, &st.result)?;
        session.artifact("coverage", coverage_json(&st.result).as_bytes())?;
    }
    Ok(())
}

/// Writes and reviews the property for one plan item. Returns whether a
/// property was accepted.
fn write_property(
    session: &Session,
    spec: &DesignSpec,
    st: &mut Progress,
    item_id: &str,
) -> Result<bool, PipelineError> {
    let item = st
        .vplan
        .items
        .iter()
        .find(|i| i.id == item_id)
        .cloned()
        .expect("item exists");
    let property_id = format!("P{}", st.next_property + 1);
    let seed = match session.config.vote_samples {
        0 => None,
        n => {
            let vote = sample_and_vote(session, spec, &item, n)?;
            Some(Seed {
                reply: vote.reply,
                revision: 0,
                origin: Origin::Vote,
            })
        }
    };
    let refined = refine(session, spec, &item, &property_id, seed)?;
    let accepted = refined.property.is_some();
    let plan_item = st.vplan.get_mut(item_id).expect("item exists");
    match refined.property {
        Some(p) => {
            plan_item.status = PlanStatus::CoveredBySva;
            st.properties.push(p);
            st.next_property += 1;
        }
        None => plan_item.status = PlanStatus::Dropped,
    }
    Ok(accepted)
}

fn save_traces(session: &Session, result: &ProverResult) -> Result<(), PipelineError> {
    for (id, v) in &result.assertions {
        if let Some(trace) = &v.trace {
            let mut text = serde_json::to_vec_pretty(trace).expect("trace serializes");
            text.push(b'\n');
            session.artifact(&format!("cex/{id}"), &text)?;
        }
    }
    Ok(())
}

fn coverage_json(result: &ProverResult) -> String {
    let value = serde_json::json!({
        "coverage_rate": coverage_rate(result),
        "covered": result.count_covers(CoverStatus::Covered),
        "unreachable": result.count_covers(CoverStatus::Unreachable),
        "uncovered": result.count_covers(CoverStatus::Uncovered),
        "covers": result.covers,
    });
    let mut text = serde_json::to_string_pretty(&value).expect("coverage serializes");
    text.push('\n');
    text
}

/// All accepted assertions in one checker, one section per property.
pub fn render_checker(design: &str, record: &RunRecord) -> String {
    let mut out = format!("// Accepted assertions for {design}.\nchecker {design}_assertions;\n");
    for p in record.properties.iter().filter(|p| p.status != PropertyStatus::Draft) {
        let description = record
            .vplan
            .items
            .iter()
            .find(|i| i.id == p.plan_item_id)
            .map_or("", |i| i.description.as_str());
        let _ = write!(out, "\n  // {} ({}): {}\n", p.id, p.plan_item_id, description);
        for line in p.code.lines() {
            if line.trim().is_empty() {
                out.push('\n');
            } else {
                let _ = writeln!(out, "  {line}");
            }
        }
    }
    out.push_str("\nendchecker\n");
    out
}

fn origin_str(o: Origin) -> &'static str {
    match o {
        Origin::Agent => "agent",
        Origin::HumanIntercept => "human",
        Origin::Vote => "vote",
    }
}

fn status_str(s: PropertyStatus) -> &'static str {
    match s {
        PropertyStatus::Draft => "draft",
        PropertyStatus::Accepted => "accepted",
        PropertyStatus::Proven => "proven",
        PropertyStatus::Cex => "cex",
        PropertyStatus::Inconclusive => "inconclusive",
    }
}

/// Human-readable run summary. Contains no run id or timestamps, so two
/// replays of the same run render identically.
pub fn render_run_report(record: &RunRecord, initial: Option<&ProverResult>) -> String {
    let c = &record.config;
    let k = &record.kpi;
    let mut out = String::from("# Verification report\n\n");
    let _ = writeln!(out, "- Outcome: {}", record.outcome.as_str());
    let _ = writeln!(out, "- Stage reached: {}", record.stage_reached.as_str());
    let _ = writeln!(out, "- Model: {} (temperature {})", c.model_id, c.temperature);
    let _ = writeln!(
        out,
        "- Human in the loop: {} (max replies {}, max iterations {})",
        c.hil_mode.as_str(),
        c.max_replies,
        c.max_iter
    );
    if let Some(f) = &record.failure {
        let _ = writeln!(out, "- Failure: {f}");
    }

    out.push_str("\n## KPIs\n\n| Properties | Proven | Proven rate | Coverage |\n|---|---|---|---|\n");
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} |",
        k.n_properties, k.n_proven, k.proven_rate, k.coverage_rate
    );

    out.push_str("\n## Prover results\n\n");
    let mut rows = Vec::new();
    if let Some(first) = initial {
        if first != &record.prover_result {
            rows.push(WorkflowRow::from_result("Initial", first));
        }
    }
    rows.push(WorkflowRow::from_result("Final", &record.prover_result));
    out.push_str(&render_workflow_table(&rows));

    out.push_str("\n## Verification plan\n\n| Item | Status | Description |\n|---|---|---|\n");
    for i in &record.vplan.items {
        let status = match i.status {
            PlanStatus::Open => "open",
            PlanStatus::CoveredBySva => "covered",
            PlanStatus::Dropped => "dropped",
        };
        let _ = writeln!(out, "| {} | {status} | {} |", i.id, i.description);
    }

    out.push_str("\n## Properties\n\n| Property | Item | Origin | Revision | Status |\n|---|---|---|---|---|\n");
    for p in &record.properties {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            p.id,
            p.plan_item_id,
            origin_str(p.origin),
            p.revision,
            status_str(p.status)
        );
    }

    if !record.cex_analyses.is_empty() {
        out.push_str("\n## Counterexample analysis\n");
        for a in &record.cex_analyses {
            let verdict = match a.verdict {
                CexVerdict::RtlBug => "RTL_BUG",
                CexVerdict::BadProperty => "BAD_PROPERTY",
                CexVerdict::Inconclusive => "INCONCLUSIVE",
            };
            let _ = write!(out, "\n### {} — {verdict}\n\n{}\n", a.property_id, a.explanation.trim());
        }
    }

    let holes: Vec<_> = record
        .prover_result
        .covers
        .iter()
        .filter(|(_, v)| v.status != CoverStatus::Covered)
        .collect();
    if !holes.is_empty() {
        out.push_str("\n## Coverage holes\n\n");
        for (id, v) in holes {
            let _ = writeln!(out, "- {id}: {}", v.status.as_str());
        }
    }
    out
}
